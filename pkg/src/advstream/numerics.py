"""Dense tensors, a fixed layer zoo, and analytic reverse-mode gradients.

The forecaster's architecture is closed (conv, ReLU, max-pool, dropout,
flatten, dense), so there is no general autodiff graph.  Each layer keeps
a single-owner tape: forward caches exactly what backward needs, and
backward consumes the cache.  Calling backward twice, or before any
forward, raises UsageError.

All math is in float64; finite-difference gradient checks at 1e-4
relative tolerance are not reliable in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError


class Tensor2:
    """Immutable 2-D float64 tensor; rejects NaN/Inf at construction."""

    __slots__ = ("_arr",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2:
            raise ConfigurationError(
                f"Tensor2 requires 2-D data, got {arr.ndim}-D"
            )
        if arr.size == 0:
            raise ConfigurationError("Tensor2 requires at least one element")
        if not np.isfinite(arr).all():
            raise ConfigurationError("Tensor2 entries must be finite")
        arr.setflags(write=False)
        self._arr = arr

    @property
    def rows(self) -> int:
        return self._arr.shape[0]

    @property
    def cols(self) -> int:
        return self._arr.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Read-only row-major view of the underlying array."""
        return self._arr

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self._arr.astype(dtype)
        return self._arr

    def __repr__(self):
        return f"Tensor2(rows={self.rows}, cols={self.cols})"


@dataclass
class LayerGrads:
    """Gradients produced by one layer's backward pass.

    d_input mirrors the layer's forward input shape (leading batch axis
    included); d_params maps parameter name to an array of the parameter's
    own shape.
    """

    d_input: np.ndarray
    d_params: dict


def _as_matrix(x, name: str) -> np.ndarray:
    if isinstance(x, Tensor2):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D, got {arr.ndim}-D")
    return arr


def _as_kernels(kernels) -> np.ndarray:
    if isinstance(kernels, Tensor2):
        return kernels.data[None, :, :]
    if isinstance(kernels, (list, tuple)) and kernels and isinstance(kernels[0], Tensor2):
        return np.stack([k.data for k in kernels])
    arr = np.asarray(kernels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ConfigurationError("kernels must be [n_kernels, width, features]")
    return arr


def conv1d_forward(window, kernels, bias, stride: int = 1) -> Tensor2:
    """Valid-padding cross-correlation of a [w, d] window with a kernel set.

    Accumulation order is fixed (bias first, then kernel taps position-major,
    feature-minor) so the result is reproducible bit-for-bit against a naive
    triple-loop reference.
    """
    x = _as_matrix(window, "window")
    k = _as_kernels(kernels)
    n_k, kw, kd = k.shape
    w, d = x.shape
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ConfigurationError(f"stride must be a positive integer, got {stride!r}")
    if kd != d:
        raise ConfigurationError(f"kernel features {kd} != window features {d}")
    if kw > w:
        raise ConfigurationError(f"kernel width {kw} exceeds window length {w}")
    b = np.broadcast_to(np.asarray(bias, dtype=np.float64), (n_k,))
    length = (w - kw) // stride + 1
    out = np.empty((length, n_k))
    out[:] = b
    for p in range(kw):
        taps = x[p : p + (length - 1) * stride + 1 : stride, :]
        for c in range(d):
            out += taps[:, c : c + 1] * k[None, :, p, c]
    return Tensor2(out)


class _Layer:
    """Base layer: subclasses fill params and implement _forward/_backward."""

    def __init__(self):
        self.params: dict = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        out, cache = self._forward(x, training, rng)
        self._cache = cache
        return out

    def backward(self, d_out: np.ndarray) -> LayerGrads:
        if self._cache is None:
            raise UsageError(
                f"{type(self).__name__}.backward() without a matching forward()"
            )
        cache, self._cache = self._cache, None
        return self._backward(d_out, cache)

    def _forward(self, x, training, rng):
        raise NotImplementedError

    def _backward(self, d_out, cache):
        raise NotImplementedError


class Conv1D(_Layer):
    """Batched valid-padding cross-correlation over [B, w, d] inputs."""

    def __init__(self, kernels: np.ndarray, bias: np.ndarray, stride: int = 1):
        super().__init__()
        kernels = np.asarray(kernels, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if kernels.ndim != 3 or bias.shape != (kernels.shape[0],):
            raise ConfigurationError("Conv1D needs kernels [n_k, kw, d] and bias [n_k]")
        if stride < 1:
            raise ConfigurationError("stride must be >= 1")
        self.params = {"kernels": kernels, "bias": bias}
        self.stride = int(stride)

    def _forward(self, x, training, rng):
        k = self.params["kernels"]
        n_k, kw, kd = k.shape
        b, w, d = x.shape
        if kd != d or kw > w:
            raise ConfigurationError(
                f"Conv1D input [{w}, {d}] incompatible with kernels [{kw}, {kd}]"
            )
        s = self.stride
        length = (w - kw) // s + 1
        out = np.empty((b, length, n_k))
        out[:] = self.params["bias"]
        for p in range(kw):
            # one matmul per tap position: far faster than im2col at this scale
            out += x[:, p : p + (length - 1) * s + 1 : s, :] @ k[:, p, :].T
        return out, (x, length)

    def _backward(self, d_out, cache):
        x, length = cache
        k = self.params["kernels"]
        n_k, kw, _ = k.shape
        s = self.stride
        d_x = np.zeros_like(x)
        d_k = np.empty_like(k)
        for p in range(kw):
            sl = slice(p, p + (length - 1) * s + 1, s)
            d_k[:, p, :] = np.tensordot(d_out, x[:, sl, :], axes=([0, 1], [0, 1]))
            d_x[:, sl, :] += d_out @ k[:, p, :]
        d_b = d_out.sum(axis=(0, 1))
        return LayerGrads(d_x, {"kernels": d_k, "bias": d_b})


class ReLU(_Layer):
    def _forward(self, x, training, rng):
        return np.maximum(x, 0.0), x > 0

    def _backward(self, d_out, cache):
        return LayerGrads(d_out * cache, {})


class MaxPool1D(_Layer):
    """Non-overlapping max pooling over the time axis of [B, L, C].

    A trailing remainder shorter than the pool width is dropped.  Ties
    within a pool window resolve to the first index so attack trajectories
    are reproducible.
    """

    def __init__(self, pool: int):
        super().__init__()
        if pool < 1:
            raise ConfigurationError("pool width must be >= 1")
        self.pool = int(pool)

    def _forward(self, x, training, rng):
        b, length, c = x.shape
        p = self.pool
        kept = (length // p) * p
        blocks = x[:, :kept, :].reshape(b, length // p, p, c)
        idx = blocks.argmax(axis=2)
        out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return out, (idx, x.shape)

    def _backward(self, d_out, cache):
        idx, shape = cache
        b, length, c = shape
        p = self.pool
        kept = (length // p) * p
        # scatter into a dense block buffer first: reshaping a sliced view of
        # d_x would silently copy when a trailing remainder exists
        blocks = np.zeros((b, kept // p, p, c))
        np.put_along_axis(blocks, idx[:, :, None, :], d_out[:, :, None, :], axis=2)
        d_x = np.zeros(shape)
        d_x[:, :kept, :] = blocks.reshape(b, kept, c)
        return LayerGrads(d_x, {})


class Dropout(_Layer):
    """Inverted dropout; active only when training (deterministic otherwise)."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def _forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            return x, False
        if rng is None:
            raise UsageError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def _backward(self, d_out, cache):
        if cache is False:
            return LayerGrads(d_out, {})
        return LayerGrads(d_out * cache, {})


class Flatten(_Layer):
    def _forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, d_out, cache):
        return LayerGrads(d_out.reshape(cache), {})


class Dense(_Layer):
    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        super().__init__()
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ConfigurationError("Dense needs weights [out, in] and bias [out]")
        self.params = {"weights": weights, "bias": bias}

    def _forward(self, x, training, rng):
        w = self.params["weights"]
        if x.shape[1] != w.shape[1]:
            raise ConfigurationError(
                f"Dense input width {x.shape[1]} != weight width {w.shape[1]}"
            )
        return x @ w.T + self.params["bias"], x

    def _backward(self, d_out, cache):
        w = self.params["weights"]
        d_x = d_out @ w
        d_w = d_out.T @ cache
        d_b = d_out.sum(axis=0)
        return LayerGrads(d_x, {"weights": d_w, "bias": d_b})


class Network:
    """A fixed stack of layers with a single-owner forward/backward tape."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        out = x
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng)
        return out

    def backward(self, d_out: np.ndarray) -> list:
        """Returns one LayerGrads per layer, in layer order.

        grads[0].d_input is the gradient with respect to the network input.
        """
        grads = []
        flowing = d_out
        for layer in reversed(self.layers):
            lg = layer.backward(flowing)
            flowing = lg.d_input
            grads.append(lg)
        grads.reverse()
        return grads

    def forward_taps(self, x: np.ndarray, taps: dict) -> tuple:
        """Inference forward that also captures activations after the layer
        indices named in `taps` (name -> layer index), flattened per sample."""
        captured = {}
        out = x
        for i, layer in enumerate(self.layers):
            out = layer.forward(out, training=False)
            for name, idx in taps.items():
                if idx == i:
                    captured[name] = out.reshape(out.shape[0], -1)
        return out, captured

    def param_items(self):
        """Deterministic (layer_index, name, array) iteration for updates,
        serialization, and hashing."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]


def pinball_loss(y: float, q: float, tau: float) -> float:
    """Quantile (pinball) loss: tau*(y-q) if y >= q else (1-tau)*(q-y)."""
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must be in (0, 1), got {tau}")
    if y >= q:
        return tau * (y - q)
    return (1.0 - tau) * (q - y)


def pinball_loss_array(y: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must be in (0, 1), got {tau}")
    r = y - q
    return np.where(r >= 0.0, tau * r, (tau - 1.0) * r)


def pinball_grad_array(y: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    """d/dq of pinball_loss_array (subgradient -tau on the y == q boundary)."""
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must be in (0, 1), got {tau}")
    return np.where(y >= q, -tau, 1.0 - tau)


def glorot_uniform(rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
