"""Federated orchestration: local binary training, noising, masked upload,
aggregation, and the mixing download, for T rounds over N simulated clients.

Three modes share the machinery:

* ``dpfl_bnn``       - binary local training, randomized response on the
                       uploaded signs, masked aggregation, beta-mixing.
* ``bnn_fl_nonoise`` - identical path with the channel forced to identity.
* ``fedavg_fp``      - full-precision FedAvg baseline (plain SGD, uniform
                       weight averaging every round, no privacy machinery).

All randomness flows through per-(client, round, purpose) streams derived
from one master seed, so results are independent of client scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .accountant import dp_from_gamma
from .data import ImageDataset, Partition, batch_iterator
from .nn.binarize import clip_params, sign, sto_sign
from .nn.network import LayerSpec, Network, NetworkParams
from .nn.optim import AdamState, LrSchedule, adam_step, sgd_step
from .randresp import rr_apply
from .rng import NoiseStream, as_generator, stream
from .secagg import PairwiseSeeds, aggregate, decode_sum, encode, mask_update

__all__ = [
    "MODES",
    "RoundConfig",
    "ClientState",
    "ServerState",
    "RunMetrics",
    "FederatedData",
    "local_train",
    "noise_and_upload",
    "server_aggregate",
    "client_download_update",
    "fedavg_baseline_round",
    "global_train_loss",
    "mean_test_accuracy",
    "run_training",
]

MODES = ("dpfl_bnn", "bnn_fl_nonoise", "fedavg_fp")


@dataclass(frozen=True)
class RoundConfig:
    """All protocol hyperparameters for one run."""

    n_clients: int
    rounds: int
    local_steps: int = 10
    beta: float = 0.3
    gamma: float = 0.1
    lr: LrSchedule = field(default_factory=LrSchedule)
    batch_size: int = 64
    aggregation_norm: str = "average"  # "average" | "sum"
    mode: str = "dpfl_bnn"
    delta: float = 1e-5  # reporting delta for the epsilon column
    force_identity_noise: bool = False  # test hook: skip the channel entirely
    parallel_clients: bool = False

    def __post_init__(self):
        if self.n_clients < 1 or self.rounds < 1 or self.local_steps < 1:
            raise ValueError("n_clients, rounds and local_steps must be >= 1")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not 0 <= self.gamma < 0.5:
            raise ValueError(f"gamma must be in [0, 0.5), got {self.gamma}")
        if self.aggregation_norm not in ("average", "sum"):
            raise ValueError(f"unknown aggregation_norm {self.aggregation_norm!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ClientState:
    client_id: int
    params: NetworkParams
    optimizer: AdamState | None
    shard: np.ndarray
    batches: Iterator[np.ndarray]


@dataclass
class ServerState:
    round_idx: int = 0
    last_aggregate: list[np.ndarray] | None = None


@dataclass
class RunMetrics:
    """One row per completed round."""

    gamma: float
    mode: str
    rounds: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)
    wallclock: list[float] = field(default_factory=list)

    def rows(self):
        for i in range(len(self.rounds)):
            yield (
                self.rounds[i],
                self.train_loss[i],
                self.test_accuracy[i],
                self.epsilon[i],
                self.gamma,
                self.wallclock[i],
            )


@dataclass
class FederatedData:
    train: ImageDataset
    test: ImageDataset
    partition: Partition


def _noised(cfg: RoundConfig) -> bool:
    return cfg.mode in ("dpfl_bnn", "bnn_fl_nonoise")


def _identity_channel(cfg: RoundConfig) -> bool:
    return cfg.mode == "bnn_fl_nonoise" or cfg.force_identity_noise


def local_train(
    client: ClientState,
    network: Network,
    train_x: np.ndarray,
    train_y: np.ndarray,
    tau: int,
    lr: float,
    stosign_rng: NoiseStream | np.random.Generator,
) -> ClientState:
    """Run tau binary mini-batch steps on one client.

    Each step: forward/backward with the current binary weights, Adam on the
    auxiliary weights (clipping inside), stochastic re-binarization, clip.
    tau = 0 is a test hook that leaves the state untouched.
    """
    if client.shard.size == 0:
        raise ValueError(f"client {client.client_id} has an empty shard")
    if tau == 0:
        return client
    gen = as_generator(stosign_rng)
    for _ in range(tau):
        batch = next(client.batches)
        logits, cache = network.forward(client.params, train_x[batch], weights="binary")
        grads = network.backward(cache, train_y[batch])
        adam_step(client.optimizer, client.params, grads, lr)
        for k, is_bin in enumerate(client.params.binarized):
            if is_bin:
                client.params.binary[k] = sto_sign(client.params.aux[k], gen)
            client.params.aux[k] = clip_params(client.params.aux[k])
    return client


def noise_and_upload(
    client: ClientState,
    gamma: float,
    seeds: PairwiseSeeds,
    rr_rng: NoiseStream | np.random.Generator,
    n_clients: int,
    force_identity: bool = False,
) -> np.ndarray:
    """Randomize the client's binary weights, encode, and mask for upload."""
    noised = rr_apply(client.params.binary_flat(), gamma, rr_rng, force_identity)
    return mask_update(encode(noised), client.client_id, seeds, n_clients)


def server_aggregate(uploads: list[np.ndarray], cfg: RoundConfig) -> np.ndarray:
    """Sum masked uploads, decode the exact integer sums, normalize."""
    if len(uploads) != cfg.n_clients:
        raise ValueError(f"expected {cfg.n_clients} uploads, got {len(uploads)}")
    totals = decode_sum(aggregate(uploads), cfg.n_clients).astype(np.float64)
    if cfg.aggregation_norm == "average":
        totals /= cfg.n_clients
    return totals


def client_download_update(
    client: ClientState, w_tilde: list[np.ndarray], beta: float
) -> ClientState:
    """Mix the aggregate into the auxiliary weights and re-sign.

    aux <- beta * w_tilde + (1 - beta) * aux on every uploaded tensor, then
    binary <- sign(aux). With average normalization and beta in [0, 1] the
    mix is a convex combination, so aux stays in [-1, 1].
    """
    i = 0
    for k, is_bin in enumerate(client.params.binarized):
        if not is_bin:
            continue
        agg = w_tilde[i]
        if agg.shape != client.params.aux[k].shape:
            raise ValueError("aggregate/parameter shape mismatch")
        client.params.aux[k] = beta * agg + (1 - beta) * client.params.aux[k]
        client.params.binary[k] = sign(client.params.aux[k])
        i += 1
    return client


def fedavg_baseline_round(
    clients: list[ClientState],
    network: Network,
    train_x: np.ndarray,
    train_y: np.ndarray,
    tau: int,
    lr: float,
) -> list[ClientState]:
    """Full-precision FedAvg: tau SGD steps per client, then uniform averaging."""
    for client in clients:
        for _ in range(tau):
            batch = next(client.batches)
            logits, cache = network.forward(client.params, train_x[batch], weights="aux")
            grads = network.backward(cache, train_y[batch])
            sgd_step(client.params, grads, lr)
    n = len(clients)
    mean_aux = [sum(c.params.aux[k] for c in clients) / n
                for k in range(len(clients[0].params.aux))]
    mean_bias = [
        (sum(c.params.bias[k] for c in clients) / n)
        if clients[0].params.bias[k] is not None
        else None
        for k in range(len(clients[0].params.bias))
    ]
    for client in clients:
        for k in range(len(mean_aux)):
            client.params.aux[k] = mean_aux[k].copy()
            if mean_bias[k] is not None:
                client.params.bias[k] = mean_bias[k].copy()
    return clients


def _weights_view(cfg: RoundConfig) -> str:
    return "aux" if cfg.mode == "fedavg_fp" else "binary"


def _client_map(fn, clients, pool):
    """Apply fn to every client, in client order; threads optional.

    Results are collected in index order, so parallel execution yields the
    same floats as the sequential fold."""
    if pool is not None:
        return list(pool.map(fn, clients))
    return [fn(c) for c in clients]


def global_train_loss(
    network: Network,
    clients: list[ClientState],
    train_x: np.ndarray,
    train_y: np.ndarray,
    weights: str = "binary",
    pool: ThreadPoolExecutor | None = None,
) -> float:
    """Shard-size-weighted mean of per-client losses on their own shards."""

    def one(client):
        return client.shard.size * network.loss_on(
            client.params, train_x[client.shard], train_y[client.shard], weights=weights
        )

    weighted = _client_map(one, clients, pool)
    return sum(weighted) / sum(c.shard.size for c in clients)


def mean_test_accuracy(
    network: Network,
    clients: list[ClientState],
    test_x: np.ndarray,
    test_y: np.ndarray,
    weights: str = "binary",
    pool: ThreadPoolExecutor | None = None,
) -> float:
    """Accuracy of each client's model on the shared test split, averaged."""

    def one(client):
        return network.accuracy_on(client.params, test_x, test_y, weights=weights)

    return float(np.mean(_client_map(one, clients, pool)))


def _client_round(
    client: ClientState,
    network: Network,
    train_x: np.ndarray,
    train_y: np.ndarray,
    cfg: RoundConfig,
    lr: float,
    round_idx: int,
    master_seed: int,
    seeds: PairwiseSeeds | None,
):
    """Local phase plus upload for one client (thread-safe: owns its state)."""
    if cfg.mode == "fedavg_fp":
        raise RuntimeError("fedavg_fp does not use the masked-upload path")
    local_train(
        client,
        network,
        train_x,
        train_y,
        cfg.local_steps,
        lr,
        NoiseStream(master_seed, client.client_id, round_idx, "stosign"),
    )
    return noise_and_upload(
        client,
        cfg.gamma,
        seeds,
        NoiseStream(master_seed, client.client_id, round_idx, "rr"),
        cfg.n_clients,
        force_identity=_identity_channel(cfg),
    )


def init_clients(
    network: Network,
    partition: Partition,
    cfg: RoundConfig,
    master_seed: int,
) -> list[ClientState]:
    """Common seeded initialization broadcast to every client."""
    init_params = network.init_params(stream(master_seed, "init"))
    clients = []
    for c in range(cfg.n_clients):
        params = init_params.copy()
        optimizer = None if cfg.mode == "fedavg_fp" else AdamState.for_params(params)
        clients.append(
            ClientState(
                client_id=c,
                params=params,
                optimizer=optimizer,
                shard=np.asarray(partition.shards[c]),
                batches=batch_iterator(
                    partition.shards[c], cfg.batch_size, stream(master_seed, c, "batch")
                ),
            )
        )
    return clients


def run_training(
    cfg: RoundConfig,
    specs: list[LayerSpec],
    data: FederatedData,
    master_seed: int,
    test_subset: int | None = None,
    on_round: Callable[[int, list[ClientState], ServerState], None] | None = None,
    on_upload: Callable[[int, int, np.ndarray], None] | None = None,
) -> RunMetrics:
    """Execute the full protocol for cfg.rounds rounds; deterministic given
    master_seed (wall-clock column aside), for any client parallelism."""
    if data.partition.n_clients != cfg.n_clients:
        raise ValueError("partition does not match n_clients")
    train_x = data.train.normalized()
    train_y = data.train.labels.astype(np.int64)
    test_x = data.test.normalized()
    test_y = data.test.labels.astype(np.int64)
    if test_subset is not None and test_subset < len(test_y):
        pick = stream(master_seed, "testsubset").choice(
            len(test_y), size=test_subset, replace=False
        )
        pick.sort()
        test_x, test_y = test_x[pick], test_y[pick]

    input_shape = train_x.shape[1:]
    network = Network(specs, input_shape)
    clients = init_clients(network, data.partition, cfg, master_seed)
    server = ServerState()
    metrics = RunMetrics(gamma=cfg.gamma, mode=cfg.mode)
    view = _weights_view(cfg)

    pool = (
        ThreadPoolExecutor(max_workers=min(cfg.n_clients, 8))
        if cfg.parallel_clients
        else None
    )
    try:
        for t in range(cfg.rounds):
            started = time.monotonic()
            lr = cfg.lr.lr(t)
            if cfg.mode == "fedavg_fp":
                fedavg_baseline_round(
                    clients, network, train_x, train_y, cfg.local_steps, lr
                )
            else:
                seeds = PairwiseSeeds.derive(master_seed, t, cfg.n_clients)

                def work(client):
                    return _client_round(
                        client, network, train_x, train_y, cfg, lr, t, master_seed, seeds
                    )

                if pool is not None:
                    uploads = list(pool.map(work, clients))
                else:
                    uploads = [work(c) for c in clients]
                if on_upload is not None:
                    for client, masked in zip(clients, uploads):
                        on_upload(t, client.client_id, masked)
                totals = server_aggregate(uploads, cfg)
                server.last_aggregate = clients[0].params.unflatten_binary(totals)
                for client in clients:
                    client_download_update(client, server.last_aggregate, cfg.beta)
            server.round_idx = t + 1

            loss = global_train_loss(
                network, clients, train_x, train_y, weights=view, pool=pool
            )
            acc = mean_test_accuracy(
                network, clients, test_x, test_y, weights=view, pool=pool
            )
            eps = (
                dp_from_gamma(cfg.gamma, t + 1, cfg.delta).epsilon
                if cfg.mode == "dpfl_bnn"
                else float("inf")
            )
            metrics.rounds.append(t + 1)
            metrics.train_loss.append(loss)
            metrics.test_accuracy.append(acc)
            metrics.epsilon.append(eps)
            metrics.wallclock.append(time.monotonic() - started)
            if on_round is not None:
                on_round(t, clients, server)
    finally:
        if pool is not None:
            pool.shutdown()
    return metrics
