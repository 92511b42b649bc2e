"""Network assembly: layer specs, parameter containers, forward/backward, loss.

A Network owns the architecture only; parameters travel separately in
NetworkParams so many clients can share one Network object. Weighted layers
keep full-precision auxiliary weights in [-1, 1] plus a binary sign tensor;
the forward pass picks one of the two views. Gradients are taken w.r.t.
whatever weights the forward pass used (straight-through: the binarization
is treated as identity), and the optimizer applies them to the auxiliary
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binarize import sign
from .layers import Conv3x3, Dense, MaxPool2x2, SignAct, Tanh

__all__ = ["LayerSpec", "NetworkParams", "Network", "build_paper_model"]

WEIGHTED_KINDS = ("conv3x3", "dense")
VALID_KINDS = ("conv3x3", "maxpool2x2", "dense", "tanh", "sign_act", "softmax_xent_head")


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind, width (filters or units, where applicable),
    binarization, and a fixed output scale for weighted layers (1.0 means
    the plain unscaled operation; see layers module)."""

    kind: str
    size: int | None = None
    binarized: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in WEIGHTED_KINDS and not self.size:
            raise ValueError(f"{self.kind} needs a size")
        if self.binarized and self.kind not in WEIGHTED_KINDS:
            raise ValueError(f"{self.kind} carries no weights to binarize")
        if self.scale != 1.0 and self.kind not in WEIGHTED_KINDS:
            raise ValueError(f"{self.kind} takes no scale")
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


class NetworkParams:
    """Per weighted layer: auxiliary weights in [-1,1], binary signs, fp bias.

    Value-semantic between orchestrator and clients: use .copy() when
    handing a parameter set to an independent owner.
    """

    def __init__(self, aux: list[np.ndarray], bias: list[np.ndarray | None],
                 binarized: list[bool]):
        self.aux = aux
        self.bias = bias
        self.binarized = binarized
        self.binary = [sign(a) if b else None for a, b in zip(aux, binarized)]

    def copy(self) -> "NetworkParams":
        p = NetworkParams.__new__(NetworkParams)
        p.aux = [a.copy() for a in self.aux]
        p.bias = [b.copy() if b is not None else None for b in self.bias]
        p.binarized = list(self.binarized)
        p.binary = [b.copy() if b is not None else None for b in self.binary]
        return p

    def binary_flat(self) -> np.ndarray:
        """Concatenate all binarized sign tensors into one upload vector."""
        return np.concatenate(
            [b.ravel() for b in self.binary if b is not None]
        )

    def unflatten_binary(self, flat: np.ndarray) -> list[np.ndarray]:
        """Split a flat vector back into per-layer tensors (binarized layers)."""
        out = []
        offset = 0
        for a, is_bin in zip(self.aux, self.binarized):
            if not is_bin:
                continue
            n = a.size
            out.append(flat[offset : offset + n].reshape(a.shape))
            offset += n
        if offset != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")
        return out

    @property
    def n_uploaded(self) -> int:
        return sum(a.size for a, b in zip(self.aux, self.binarized) if b)


class Network:
    """Architecture built from LayerSpecs for a fixed input shape."""

    def __init__(self, specs: list[LayerSpec], input_shape: tuple[int, ...]):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.layers = []
        self.weighted_idx = []  # spec index of each weighted layer
        shape = tuple(input_shape)  # (C, H, W) or (features,)
        for i, spec in enumerate(self.specs):
            if spec.kind == "conv3x3":
                if len(shape) != 3:
                    raise ValueError("conv3x3 needs a (C, H, W) input")
                layer = Conv3x3(shape[0], spec.size, scale=spec.scale)
                shape = (spec.size, shape[1], shape[2])
                self.weighted_idx.append(i)
            elif spec.kind == "maxpool2x2":
                layer = MaxPool2x2()
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif spec.kind == "dense":
                layer = Dense(int(np.prod(shape)), spec.size, scale=spec.scale)
                shape = (spec.size,)
                self.weighted_idx.append(i)
            elif spec.kind == "tanh":
                layer = Tanh()
            elif spec.kind == "sign_act":
                layer = SignAct()
            elif spec.kind == "softmax_xent_head":
                layer = None  # terminal marker; loss is applied separately
            self.layers.append(layer)
        self.output_dim = shape[0] if len(shape) == 1 else int(np.prod(shape))

    @property
    def weighted_layers(self):
        return [self.layers[i] for i in self.weighted_idx]

    def init_params(self, rng: np.random.Generator, init_scale: float = 0.1) -> NetworkParams:
        """Uniform(-init_scale, init_scale) auxiliary weights, zero biases."""
        aux, bias, binz = [], [], []
        for i in self.weighted_idx:
            layer = self.layers[i]
            aux.append(rng.uniform(-init_scale, init_scale, size=layer.weight_shape))
            bias.append(np.zeros(layer.weight_shape[-1]) if layer.has_bias else None)
            binz.append(self.specs[i].binarized)
        return NetworkParams(aux, bias, binz)

    def _pick_weights(self, params: NetworkParams, view: str) -> list[np.ndarray]:
        if view == "binary":
            return [
                b if (is_bin and b is not None) else a
                for a, b, is_bin in zip(params.aux, params.binary, params.binarized)
            ]
        if view == "aux":
            return list(params.aux)
        raise ValueError(f"unknown weight view {view!r}")

    def forward(self, params: NetworkParams, batch: np.ndarray, *,
                weights: str = "binary", want_cache: bool = True):
        """Run the net; returns (logits, cache). cache is None if not requested."""
        x = np.asarray(batch, dtype=np.float64)
        expected = (x.shape[0],) + self.input_shape
        if x.shape != expected:
            raise ValueError(f"batch shape {x.shape} does not match {expected}")
        used = self._pick_weights(params, weights)
        caches = []
        k = 0  # weighted-layer counter
        for layer, spec in zip(self.layers, self.specs):
            if spec.kind == "conv3x3":
                x, c = layer.forward(x, used[k], want_cache=want_cache)
                caches.append(c)
                k += 1
            elif spec.kind == "dense":
                x, c = layer.forward(x, used[k], params.bias[k], want_cache=want_cache)
                caches.append(c)
                k += 1
            elif spec.kind == "softmax_xent_head":
                caches.append(None)
            else:
                x, c = layer.forward(x, want_cache=want_cache)
                caches.append(c)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite logits")
        cache = (caches, used, x) if want_cache else None
        return x, cache

    def loss(self, logits: np.ndarray, labels: np.ndarray) -> float:
        """Mean softmax cross-entropy."""
        logits = np.asarray(logits, dtype=np.float64)
        labels = np.asarray(labels)
        if labels.shape[0] != logits.shape[0]:
            raise ValueError("label count must match batch size")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ValueError("label out of range")
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        return float(np.mean(lse - shifted[np.arange(len(labels)), labels]))

    def backward(self, cache, labels: np.ndarray):
        """Gradients w.r.t. the weights used in forward, per weighted layer.

        Returns a list of {"w": dW, "b": db-or-None} aligned with the
        weighted layers.
        """
        if cache is None:
            raise ValueError("forward was run without a cache")
        caches, used, logits = cache
        labels = np.asarray(labels)
        n = logits.shape[0]
        if labels.shape[0] != n:
            raise ValueError("label count must match cached batch size")
        shifted = logits - logits.max(axis=1, keepdims=True)
        expo = np.exp(shifted)
        prob = expo / expo.sum(axis=1, keepdims=True)
        dy = prob
        dy[np.arange(n), labels] -= 1.0
        dy /= n

        grads = [None] * len(self.weighted_idx)
        k = len(self.weighted_idx)
        for i in range(len(self.layers) - 1, -1, -1):
            spec, layer, c = self.specs[i], self.layers[i], caches[i]
            if spec.kind == "conv3x3":
                k -= 1
                dy, dw = layer.backward(dy, c, used[k])
                grads[k] = {"w": dw, "b": None}
            elif spec.kind == "dense":
                k -= 1
                dy, dw, db = layer.backward(dy, c, used[k])
                grads[k] = {"w": dw, "b": db}
            elif spec.kind == "softmax_xent_head":
                continue
            else:
                dy = layer.backward(dy, c)
        return grads

    def loss_on(self, params: NetworkParams, x: np.ndarray, labels: np.ndarray,
                *, weights: str = "binary", batch_size: int = 128) -> float:
        """Mean loss over a dataset, evaluated in chunks."""
        total, count = 0.0, 0
        for start in range(0, len(labels), batch_size):
            xb = x[start : start + batch_size]
            yb = labels[start : start + batch_size]
            logits, _ = self.forward(params, xb, weights=weights, want_cache=False)
            total += self.loss(logits, yb) * len(yb)
            count += len(yb)
        return total / count

    def accuracy_on(self, params: NetworkParams, x: np.ndarray, labels: np.ndarray,
                    *, weights: str = "binary", batch_size: int = 128) -> float:
        hits = 0
        for start in range(0, len(labels), batch_size):
            xb = x[start : start + batch_size]
            yb = labels[start : start + batch_size]
            logits, _ = self.forward(params, xb, weights=weights, want_cache=False)
            hits += int((logits.argmax(axis=1) == yb).sum())
        return hits / len(labels)


def build_paper_model(
    sign_activations: bool = False, fan_in_scaling: bool = True
) -> list[LayerSpec]:
    """The 28x28x1 CNN used in the experiments.

    Two binarized 3x3 conv layers of 16 filters, each followed by 2x2 max
    pooling and an activation; the 7*7*16 = 784 flattened features feed a
    binarized dense(100) and dense(10) with a softmax cross-entropy head.

    With `fan_in_scaling` each weighted layer's output carries a constant
    1/sqrt(fan_in) factor. Sign weights make raw pre-activations sums of
    fan-in many +-1 terms, which saturates tanh to the point of exact zero
    gradient; the constant scale keeps training alive without introducing
    any normalization statistics.
    """
    act = "sign_act" if sign_activations else "tanh"

    def s(fan_in):
        return 1.0 / np.sqrt(fan_in) if fan_in_scaling else 1.0

    return [
        LayerSpec("conv3x3", 16, binarized=True, scale=s(9 * 1)),
        LayerSpec("maxpool2x2"),
        LayerSpec(act),
        LayerSpec("conv3x3", 16, binarized=True, scale=s(9 * 16)),
        LayerSpec("maxpool2x2"),
        LayerSpec(act),
        LayerSpec("dense", 100, binarized=True, scale=s(784)),
        LayerSpec(act),
        LayerSpec("dense", 10, binarized=True, scale=s(100)),
        LayerSpec("softmax_xent_head"),
    ]
