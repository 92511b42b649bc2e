"""Experiment driver: JSON configs in, CSV metrics and JSON summaries out.

Subcommands:

* ``train <config.json>``      - run the federated protocol, one CSV per
                                 repetition plus a summary JSON.
* ``calibrate``                - largest flip bias fitting an (eps, delta)
                                 budget over T rounds, as JSON on stdout.
* ``accountant``               - privacy-loss table over gamma/alpha lists,
                                 as CSV.
* ``partition-stats <config>`` - per-client shard sizes and class
                                 histograms, as JSON.

Exit codes: 0 success, 1 config error, 2 data-loading error, 3 runtime
failure. Output files are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .accountant import calibrate_gamma, compose_rounds, dp_from_gamma, rdp_to_dp, rr_rdp, DpBudget
from .data import (
    IdxFormatError,
    load_mnist,
    partition_dirichlet,
    partition_iid,
)
from .nn.network import LayerSpec, build_paper_model
from .nn.optim import LrSchedule
from .protocol import FederatedData, RoundConfig, run_training
from .secagg import to_le_words

__all__ = ["main", "effective_config", "ConfigError", "PARTITION_STATS_SCHEMA"]

DATA_DIR_ENV = "BINFED_DATA_DIR"

CSV_COLUMNS = (
    "round",
    "global_train_loss",
    "mean_test_accuracy",
    "epsilon_spent",
    "gamma",
    "wallclock_s",
)

DEFAULT_CONFIG = {
    "dataset": {"name": "mnist", "dir": "data", "test_subset": None},
    "partition": {"kind": "iid", "alpha": 1.0},
    "protocol": {
        "n_clients": 100,
        "rounds": 100,
        "local_steps": 10,
        "beta": 0.3,
        "gamma": 0.1,
        "batch_size": 64,
        "aggregation_norm": "average",
        "mode": "dpfl_bnn",
        "delta": 1e-5,
        "parallel_clients": False,
    },
    "lr": {"initial": 0.1, "decay_factor": 0.1, "decay_every": 40},
    "model": {"architecture": "paper_cnn", "sign_activations": False},
    "seed": 0,
    "repetitions": 1,
    "output": {
        "dir": "runs",
        "prefix": "run",
        "checkpoint_dir": None,
        "masked_dump_dir": None,
    },
}

# Documented schema for `partition-stats` output (README has the prose).
PARTITION_STATS_SCHEMA = {
    "type": "object",
    "required": [
        "n_clients",
        "partition",
        "shard_sizes",
        "class_histograms",
        "max_class_share",
        "summary",
    ],
    "properties": {
        "n_clients": {"type": "integer", "minimum": 1},
        "partition": {"type": "object"},
        "shard_sizes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "class_histograms": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "integer", "minimum": 0},
                "minItems": 10,
                "maxItems": 10,
            },
        },
        "max_class_share": {
            "type": "array",
            "items": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "summary": {
            "type": "object",
            "required": ["min_shard", "max_shard", "mean_max_class_share"],
            "properties": {
                "min_shard": {"type": "integer"},
                "max_shard": {"type": "integer"},
                "mean_max_class_share": {"type": "number"},
            },
        },
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid or unparsable run configuration."""


def _merge_defaults(user: dict, defaults: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if key in user:
            value = user[key]
            if isinstance(default, dict) and isinstance(value, dict):
                out[key] = _merge_defaults(value, default, f"{path}{key}.")
            else:
                out[key] = value
        else:
            out[key] = default
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


def effective_config(user: dict) -> dict:
    """Defaults applied and environment overrides resolved; echoed verbatim
    into the summary JSON so a run can be reproduced from its own output."""
    cfg = _merge_defaults(user, DEFAULT_CONFIG)
    env_dir = os.environ.get(DATA_DIR_ENV)
    if env_dir:
        cfg["dataset"]["dir"] = env_dir
    if cfg["repetitions"] < 1:
        raise ConfigError("repetitions must be >= 1")
    if cfg["partition"]["kind"] not in ("iid", "dirichlet"):
        raise ConfigError(f"unknown partition kind {cfg['partition']['kind']!r}")
    return cfg


def _load_config_file(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e


def _model_specs(cfg: dict) -> list[LayerSpec]:
    arch = cfg["model"]["architecture"]
    if arch == "paper_cnn":
        return build_paper_model(sign_activations=cfg["model"]["sign_activations"])
    if isinstance(arch, list):
        try:
            return [LayerSpec(**layer) for layer in arch]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad architecture entry: {e}") from e
    raise ConfigError(f"unknown architecture {arch!r}")


def _round_config(cfg: dict) -> RoundConfig:
    p = cfg["protocol"]
    lr = cfg["lr"]
    try:
        return RoundConfig(
            n_clients=p["n_clients"],
            rounds=p["rounds"],
            local_steps=p["local_steps"],
            beta=p["beta"],
            gamma=p["gamma"],
            lr=LrSchedule(lr["initial"], lr["decay_factor"], lr["decay_every"]),
            batch_size=p["batch_size"],
            aggregation_norm=p["aggregation_norm"],
            mode=p["mode"],
            delta=p["delta"],
            parallel_clients=p["parallel_clients"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _load_federated_data(cfg: dict) -> FederatedData:
    data_dir = Path(cfg["dataset"]["dir"])
    train = load_mnist(data_dir, "train")
    test = load_mnist(data_dir, "test")
    part_cfg = cfg["partition"]
    n = cfg["protocol"]["n_clients"]
    if part_cfg["kind"] == "iid":
        partition = partition_iid(train, n, cfg["seed"])
    else:
        partition = partition_dirichlet(train, n, part_cfg["alpha"], cfg["seed"])
    return FederatedData(train, test, partition)


def _atomic_write(path: Path, payload: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_to_csv(metrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in metrics.rows():
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _checkpoint_hook(checkpoint_dir: str | None, rep: int):
    if checkpoint_dir is None:
        return None
    ckpt_root = Path(checkpoint_dir)

    def hook(round_idx, clients, server):
        arrays = {}
        for client in clients:
            for k, aux in enumerate(client.params.aux):
                arrays[f"client{client.client_id}_layer{k}_aux"] = aux
        ckpt_root.mkdir(parents=True, exist_ok=True)
        np.savez(ckpt_root / f"rep{rep}_round{round_idx + 1}.npz", **arrays)

    return hook


def _masked_dump_hook(dump_dir: str | None, rep: int):
    # debug facility: each masked upload as raw little-endian 32-bit words
    if dump_dir is None:
        return None
    root = Path(dump_dir)

    def hook(round_idx, client_id, masked):
        root.mkdir(parents=True, exist_ok=True)
        path = root / f"rep{rep}_round{round_idx + 1}_client{client_id}.bin"
        path.write_bytes(to_le_words(masked))

    return hook


def cmd_train(args) -> int:
    cfg = effective_config(_load_config_file(args.config))
    specs = _model_specs(cfg)
    round_cfg = _round_config(cfg)
    data = _load_federated_data(cfg)

    out_dir = Path(cfg["output"]["dir"])
    prefix = cfg["output"]["prefix"]
    finals = []
    for rep in range(cfg["repetitions"]):
        seed = cfg["seed"] + rep
        metrics = run_training(
            round_cfg,
            specs,
            data,
            seed,
            test_subset=cfg["dataset"]["test_subset"],
            on_round=_checkpoint_hook(cfg["output"]["checkpoint_dir"], rep),
            on_upload=_masked_dump_hook(cfg["output"]["masked_dump_dir"], rep),
        )
        _atomic_write(out_dir / f"{prefix}_rep{rep}.csv", metrics_to_csv(metrics))
        finals.append(metrics.test_accuracy[-1])

    summary = {
        "effective_config": cfg,
        "repetition_seeds": [cfg["seed"] + r for r in range(cfg["repetitions"])],
        "final_accuracy_mean": float(np.mean(finals)),
        "final_accuracy_std": float(np.std(finals)),
        "final_accuracy_per_repetition": finals,
        "csv_files": [f"{prefix}_rep{r}.csv" for r in range(cfg["repetitions"])],
    }
    _atomic_write(out_dir / f"{prefix}_summary.json", json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_calibrate(args) -> int:
    if args.epsilon <= 0 or not 0 < args.delta < 1 or args.rounds < 1:
        raise ConfigError("need epsilon > 0, delta in (0,1), rounds >= 1")
    budget = DpBudget(args.epsilon, args.delta)
    gamma = calibrate_gamma(budget, args.rounds)
    achieved = dp_from_gamma(gamma, args.rounds, args.delta)
    print(
        json.dumps(
            {
                "gamma": gamma,
                "epsilon": achieved.epsilon,
                "delta": args.delta,
                "rounds": args.rounds,
                "target_epsilon": args.epsilon,
            }
        )
    )
    return 0


def _parse_float_list(text: str, name: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad {name}: {e}") from e
    if not values:
        raise ConfigError(f"{name} is empty")
    return values


def cmd_accountant(args) -> int:
    gammas = _parse_float_list(args.gamma_list, "--gamma-list")
    alphas = _parse_float_list(args.alpha_list, "--alpha-list")
    if args.rounds < 1 or not 0 < args.delta < 1:
        raise ConfigError("need rounds >= 1 and delta in (0,1)")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["gamma", "alpha", "rho_per_round", "rho_total", "epsilon"])
    for gamma in gammas:
        for alpha in alphas:
            per_round = rr_rdp(gamma, alpha)
            total = compose_rounds(per_round, args.rounds)
            if alpha > 1:
                eps = repr(rdp_to_dp(total, args.delta).epsilon)
            else:
                eps = ""  # conversion undefined at order 1
            writer.writerow(
                [repr(gamma), repr(alpha), repr(per_round.rho), repr(total.rho), eps]
            )
    if args.output:
        _atomic_write(Path(args.output), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def partition_stats(cfg: dict, data: FederatedData | None = None) -> dict:
    if data is None:
        data = _load_federated_data(cfg)
    part = data.partition
    histograms = []
    for shard in part.shards:
        hist = np.bincount(data.train.labels[shard], minlength=10)
        histograms.append([int(x) for x in hist])
    sizes = [int(s.size) for s in part.shards]
    max_share = [
        (max(h) / s if s else 0.0) for h, s in zip(histograms, sizes)
    ]
    return {
        "n_clients": part.n_clients,
        "partition": {
            "kind": cfg["partition"]["kind"],
            "alpha": cfg["partition"]["alpha"],
            "seed": cfg["seed"],
        },
        "shard_sizes": sizes,
        "class_histograms": histograms,
        "max_class_share": max_share,
        "summary": {
            "min_shard": min(sizes),
            "max_shard": max(sizes),
            "mean_max_class_share": float(np.mean(max_share)),
        },
    }


def cmd_partition_stats(args) -> int:
    cfg = effective_config(_load_config_file(args.config))
    data = _load_federated_data(cfg)
    stats = partition_stats(cfg, data)
    payload = json.dumps(stats, indent=2) + "\n"
    if args.export_indices:
        _atomic_write(
            Path(args.export_indices),
            json.dumps(data.partition.to_json_dict()) + "\n",
        )
    if args.output:
        _atomic_write(Path(args.output), payload)
    else:
        sys.stdout.write(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binfed",
        description="Binary federated learning with randomized-response privacy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment from a JSON config")
    p_train.add_argument("config")
    p_train.set_defaults(func=cmd_train)

    p_cal = sub.add_parser("calibrate", help="flip bias for a privacy budget")
    p_cal.add_argument("--epsilon", type=float, required=True)
    p_cal.add_argument("--delta", type=float, required=True)
    p_cal.add_argument("--rounds", type=int, required=True)
    p_cal.set_defaults(func=cmd_calibrate)

    p_acc = sub.add_parser("accountant", help="privacy-loss table as CSV")
    p_acc.add_argument("--gamma-list", required=True)
    p_acc.add_argument("--alpha-list", required=True)
    p_acc.add_argument("--rounds", type=int, required=True)
    p_acc.add_argument("--delta", type=float, required=True)
    p_acc.add_argument("--output", default=None)
    p_acc.set_defaults(func=cmd_accountant)

    p_part = sub.add_parser("partition-stats", help="audit a client partition")
    p_part.add_argument("config")
    p_part.add_argument("--output", default=None)
    p_part.add_argument(
        "--export-indices",
        default=None,
        help="also write the raw {client: [indices]} mapping as JSON",
    )
    p_part.set_defaults(func=cmd_partition_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (IdxFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
