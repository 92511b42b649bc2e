"""Forward/backward passes for the five supported layer kinds.

Data layout is NCHW for image tensors and (batch, features) after the
first dense layer, which flattens whatever it receives. All arithmetic is
float64. Layers are stateless; weights are passed in per call so the same
architecture object can serve many parameter sets.

Weighted layers accept a fixed output ``scale``. With sign weights the raw
pre-activations are sums of fan-in many +-1 terms, which drives tanh into
exact saturation (zero gradient in float64); a constant 1/sqrt(fan_in)
scale keeps them in tanh's active range. The default of 1.0 is the plain
unscaled operation. The scale is architectural (no statistics involved)
and leaves the binary weights themselves untouched.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1 (shape-preserving), no bias.

    Two equivalent computation paths, picked by input width: an im2col
    matrix product when there are few channels (the gather stays small) and
    nine shifted tensor contractions otherwise (avoids the big gather).
    """

    IM2COL_MAX_CHANNELS = 4

    def __init__(self, in_channels: int, filters: int, scale: float = 1.0):
        self.in_channels = in_channels
        self.filters = filters
        self.scale = scale
        self.weight_shape = (filters, in_channels, 3, 3)
        self.has_bias = False
        self._use_im2col = in_channels <= self.IM2COL_MAX_CHANNELS

    def forward(self, x, w, want_cache: bool = True):
        n, c, h, width = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        if self._use_im2col:
            win = sliding_window_view(xp, (3, 3), axis=(2, 3))
            cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
                n * h * width, c * 9
            )
            y = (cols @ w.reshape(self.filters, c * 9).T).reshape(
                n, h, width, self.filters
            )
            cache = (cols, x.shape) if want_cache else None
        else:
            y = np.zeros((n, h, width, self.filters))
            for kh in range(3):
                for kw in range(3):
                    xs = xp[:, :, kh : kh + h, kw : kw + width]
                    y += np.tensordot(xs, w[:, :, kh, kw], axes=([1], [1]))
            cache = (xp, x.shape) if want_cache else None
        y = y.transpose(0, 3, 1, 2)
        if self.scale != 1.0:
            y = y * self.scale
        return y, cache

    def backward(self, dy, cache, w):
        stored, x_shape = cache
        n, c, h, width = x_shape
        if self.scale != 1.0:
            dy = dy * self.scale
        if self._use_im2col:
            cols = stored
            dy2 = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(
                -1, self.filters
            )
            dw = (dy2.T @ cols).reshape(self.weight_shape)
            dcols = (dy2 @ w.reshape(self.filters, c * 9)).reshape(
                n, h, width, c, 3, 3
            )
            dxp = np.zeros((n, c, h + 2, width + 2))
            for kh in range(3):
                for kw in range(3):
                    dxp[:, :, kh : kh + h, kw : kw + width] += dcols[
                        :, :, :, :, kh, kw
                    ].transpose(0, 3, 1, 2)
            dx = dxp[:, :, 1 : h + 1, 1 : width + 1]
            return dx, dw
        xp = stored
        dw = np.empty(self.weight_shape)
        dxp = np.zeros((n, h + 2, width + 2, c))
        for kh in range(3):
            for kw in range(3):
                xs = xp[:, :, kh : kh + h, kw : kw + width]
                dw[:, :, kh, kw] = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))
                dxp[:, kh : kh + h, kw : kw + width, :] += np.tensordot(
                    dy, w[:, :, kh, kw], axes=([1], [0])
                )
        dx = dxp[:, 1 : h + 1, 1 : width + 1, :].transpose(0, 3, 1, 2)
        return dx, dw


class MaxPool2x2:
    """2x2 max pooling with stride 2; requires even spatial dims.

    Ties route the gradient to the first maximal position in the window,
    keeping backward deterministic.
    """

    @staticmethod
    def _corners(x):
        return (
            x[:, :, 0::2, 0::2],
            x[:, :, 0::2, 1::2],
            x[:, :, 1::2, 0::2],
            x[:, :, 1::2, 1::2],
        )

    def forward(self, x, want_cache: bool = True):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        c00, c01, c10, c11 = self._corners(x)
        y = np.maximum(c00, c01)
        np.maximum(y, c10, out=y)
        np.maximum(y, c11, out=y)
        if not want_cache:
            return y, None
        # first maximal position wins, matching argmax order (00, 01, 10, 11)
        idx = np.where(
            c00 == y, 0, np.where(c01 == y, 1, np.where(c10 == y, 2, 3))
        ).astype(np.int8)
        return y, (idx, x.shape)

    def backward(self, dy, cache):
        idx, (n, c, h, w) = cache
        dx = np.zeros((n, c, h, w))
        d00, d01, d10, d11 = self._corners(dx)
        d00[idx == 0] = dy[idx == 0]
        d01[idx == 1] = dy[idx == 1]
        d10[idx == 2] = dy[idx == 2]
        d11[idx == 3] = dy[idx == 3]
        return dx


class Dense:
    """Fully connected layer; flattens any input to (batch, features)."""

    def __init__(self, in_features: int, units: int, bias: bool = True,
                 scale: float = 1.0):
        self.in_features = in_features
        self.units = units
        self.scale = scale
        self.weight_shape = (in_features, units)
        self.has_bias = bias

    def forward(self, x, w, b=None, want_cache: bool = True):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.in_features:
            raise ValueError(
                f"expected {self.in_features} input features, got {x2.shape[1]}"
            )
        y = x2 @ w
        if self.scale != 1.0:
            y = y * self.scale
        if self.has_bias:
            y = y + b
        return y, ((x2, x.shape) if want_cache else None)

    def backward(self, dy, cache, w):
        x2, x_shape = cache
        db = dy.sum(axis=0) if self.has_bias else None
        if self.scale != 1.0:
            dy = dy * self.scale
        dw = x2.T @ dy
        dx = (dy @ w.T).reshape(x_shape)
        return dx, dw, db


class Tanh:
    def forward(self, x, want_cache: bool = True):
        y = np.tanh(x)
        return y, (y if want_cache else None)

    def backward(self, dy, cache):
        y = cache
        return dy * (1 - y * y)


class SignAct:
    """Hard +-1 activation with a straight-through (identity) backward."""

    def forward(self, x, want_cache: bool = True):
        return np.where(x >= 0, 1.0, -1.0), None

    def backward(self, dy, cache):
        return dy
