"""1-D signal-tensor kernels used by the network graph.

A *frame* is a C-contiguous ``float32`` array of shape ``(channels, length)``.
Every kernel here has an offline form and, where the op carries state
across time, a cached form driven by a :class:`LayerCache`.

Exact streaming equivalence depends on one property: each output sample
is computed with the same sequence of float32 operations regardless of
how long the surrounding block is.  Elementwise numpy ops give that for
free.  The convolution runs in a small numba kernel whose per-sample
accumulation order is fixed (bias first, then taps in order, input
channels in order inside each tap) and which never reassociates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError, ContractError, DataError, ShapeError

DTYPE = np.float32

Frame = np.ndarray


def as_frame(x, channels: int | None = None) -> Frame:
    """Coerce ``x`` to a C-contiguous float32 ``(channels, length)`` array."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"frame must be 2-D (channels, length), got shape {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[0]}")
    return arr


def empty_frame(channels: int) -> Frame:
    return np.zeros((channels, 0), dtype=DTYPE)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "dilation"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"ConvSpec.{name} must be positive, got {getattr(self, name)}")

    def history_len(self) -> int:
        return (self.kernel_size - 1) * self.dilation


@dataclass
class LayerCache:
    """Trailing input history of one stateful layer."""

    channels: int
    history_len: int
    data: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.channels < 1 or self.history_len < 0:
            raise ConfigError(
                f"bad cache geometry channels={self.channels} history_len={self.history_len}"
            )
        if self.data is None:
            self.data = np.zeros((self.channels, self.history_len), dtype=DTYPE)
        elif self.data.shape != (self.channels, self.history_len):
            raise ShapeError(
                f"cache data shape {self.data.shape} != {(self.channels, self.history_len)}"
            )

    @classmethod
    def for_conv(cls, spec: ConvSpec) -> "LayerCache":
        return cls(spec.in_channels, spec.history_len())

    def reset(self) -> None:
        self.data.fill(0.0)

    def push(self, extended: np.ndarray) -> None:
        """Keep the trailing ``history_len`` samples of ``cache ∥ input``."""
        if self.history_len:
            self.data = np.ascontiguousarray(extended[:, extended.shape[1] - self.history_len :])


@numba.njit(cache=True)
def _conv_kernel(xp, w, b, dilation, out):  # pragma: no cover - compiled
    # xp: (cin, hist + L) left-extended input; w: (K, cin, cout); out: (cout, L).
    # Samples are processed four at a time to reuse each weight load, but the
    # per-sample accumulation order is identical in the blocked and tail loops.
    K, cin, cout = w.shape
    L = out.shape[1]
    acc = np.empty((4, cout), np.float32)
    t = 0
    while t + 4 <= L:
        for j in range(4):
            for o in range(cout):
                acc[j, o] = b[o]
        for k in range(K):
            off = t + k * dilation
            for i in range(cin):
                x0 = xp[i, off]
                x1 = xp[i, off + 1]
                x2 = xp[i, off + 2]
                x3 = xp[i, off + 3]
                for o in range(cout):
                    wv = w[k, i, o]
                    acc[0, o] += wv * x0
                    acc[1, o] += wv * x1
                    acc[2, o] += wv * x2
                    acc[3, o] += wv * x3
        for j in range(4):
            for o in range(cout):
                out[o, t + j] = acc[j, o]
        t += 4
    a1 = acc[0]
    while t < L:
        for o in range(cout):
            a1[o] = b[o]
        for k in range(K):
            off = t + k * dilation
            for i in range(cin):
                xv = xp[i, off]
                for o in range(cout):
                    a1[o] += w[k, i, o] * xv
        for o in range(cout):
            out[o, t] = a1[o]
        t += 1


def pack_weights(weights: np.ndarray) -> np.ndarray:
    """(out, in, kernel) -> contiguous (kernel, in, out) layout used by the kernel."""
    return np.ascontiguousarray(np.transpose(weights, (2, 1, 0)), dtype=DTYPE)


def _check_conv(weights, bias, spec: ConvSpec) -> None:
    want = (spec.out_channels, spec.in_channels, spec.kernel_size)
    if weights.shape != want:
        raise ConfigError(f"conv weights shape {weights.shape} != {want}")
    if bias.shape != (spec.out_channels,):
        raise ConfigError(f"conv bias shape {bias.shape} != {(spec.out_channels,)}")


def _run_conv(x: Frame, packed: np.ndarray, bias: np.ndarray, spec: ConvSpec,
              cache: LayerCache | None) -> Frame:
    x = as_frame(x)
    if x.shape[0] != spec.in_channels:
        raise ConfigError(f"conv expects {spec.in_channels} input channels, got {x.shape[0]}")
    hist = spec.history_len()
    length = x.shape[1]
    if length == 0:
        return empty_frame(spec.out_channels)
    if cache is not None:
        if cache.channels != spec.in_channels or cache.history_len != hist:
            raise ConfigError(
                f"cache geometry ({cache.channels}, {cache.history_len}) does not match "
                f"conv ({spec.in_channels}, {hist})"
            )
        left = cache.data
    else:
        left = np.zeros((spec.in_channels, hist), dtype=DTYPE)
    xp = np.concatenate((left, x), axis=1) if hist else x
    out = np.empty((spec.out_channels, length), dtype=DTYPE)
    _conv_kernel(xp, packed, bias, spec.dilation, out)
    if cache is not None:
        cache.push(xp)
    return out


def causal_conv1d(x: Frame, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec,
                  cache: LayerCache | None = None) -> Frame:
    """Dilated causal convolution with SAME output length.

    Without a cache the left context is ``(kernel_size - 1) * dilation`` zeros;
    with a cache it is the cache contents, and the cache is advanced to the
    trailing history of ``cache ∥ x``.
    """
    weights = np.asarray(weights, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    _check_conv(weights, bias, spec)
    return _run_conv(x, pack_weights(weights), bias, spec, cache)


@dataclass
class ConvParams:
    """Weights of one convolution plus the packed copy the kernel consumes."""

    weight: np.ndarray  # (out, in, kernel)
    bias: np.ndarray    # (out,)
    dilation: int = 1
    packed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if self.weight.ndim != 3:
            raise ConfigError(f"conv weight must be (out, in, kernel), got {self.weight.shape}")
        _check_conv(self.weight, self.bias, self.spec)
        self.packed = pack_weights(self.weight)

    @property
    def spec(self) -> ConvSpec:
        out_ch, in_ch, k = self.weight.shape
        return ConvSpec(in_ch, out_ch, k, self.dilation)

    def __call__(self, x: Frame, cache: LayerCache | None = None) -> Frame:
        return _run_conv(x, self.packed, self.bias, self.spec, cache)


def pointwise_conv1d(x: Frame, weights: np.ndarray, bias: np.ndarray) -> Frame:
    """Per-timestep linear map across channels (kernel size 1)."""
    weights = np.asarray(weights, dtype=DTYPE)
    if weights.ndim == 2:
        weights = weights[:, :, None]
    if weights.ndim != 3 or weights.shape[2] != 1:
        raise ConfigError(f"pointwise weights must be (out, in), got {weights.shape}")
    spec = ConvSpec(weights.shape[1], weights.shape[0], 1, 1)
    return causal_conv1d(x, weights, bias, spec)


def batchnorm_affine(x: Frame, gamma, beta, running_mean, running_var, eps: float) -> Frame:
    """Inference-mode batch normalisation with frozen statistics."""
    x = as_frame(x)
    c = x.shape[0]
    params = [np.asarray(p, dtype=DTYPE) for p in (gamma, beta, running_mean, running_var)]
    for p in params:
        if p.shape != (c,):
            raise ShapeError(f"batch-norm parameter shape {p.shape} != ({c},)")
    gamma, beta, mean, var = params
    if np.any(var < 0):
        raise DataError("batch-norm running variance must be non-negative")
    denom = np.sqrt(var + DTYPE(eps))
    return (gamma[:, None] * (x - mean[:, None])) / denom[:, None] + beta[:, None]


def prelu(x: Frame, alpha) -> Frame:
    x = as_frame(x)
    alpha = np.asarray(alpha, dtype=DTYPE)
    if alpha.shape != (x.shape[0],):
        raise ShapeError(f"PReLU alpha shape {alpha.shape} != ({x.shape[0]},)")
    return np.where(x >= 0, x, alpha[:, None] * x)


def sigmoid(x: Frame) -> Frame:
    one = DTYPE(1.0)
    return one / (one + np.exp(-x))


def decimate2(x: Frame) -> Frame:
    """Keep even-indexed samples, halving the length."""
    x = as_frame(x)
    if x.shape[1] % 2:
        raise ContractError(f"decimate2 needs an even length, got {x.shape[1]}")
    return np.ascontiguousarray(x[:, ::2])


def upsample2_causal(x: Frame, cache: LayerCache | None = None) -> Frame:
    """Causal 2x linear interpolation.

    Even outputs are the midpoint between the previous low-rate sample and
    the current one; odd outputs are the current sample.  The previous
    sample for the first input comes from ``cache`` (zero when absent) and
    the cache is advanced to the last input sample.
    """
    x = as_frame(x)
    c, n = x.shape
    if cache is not None and (cache.channels != c or cache.history_len != 1):
        raise ShapeError(f"upsampler cache must be ({c}, 1), got ({cache.channels}, {cache.history_len})")
    if n == 0:
        return empty_frame(c)
    prev_first = cache.data if cache is not None else np.zeros((c, 1), dtype=DTYPE)
    prev = np.concatenate((prev_first, x[:, :-1]), axis=1)
    out = np.empty((c, 2 * n), dtype=DTYPE)
    out[:, 0::2] = DTYPE(0.5) * (prev + x)
    out[:, 1::2] = x
    if cache is not None:
        cache.data = np.ascontiguousarray(x[:, -1:])
    return out


def concat_channels(a: Frame, b: Frame) -> Frame:
    a = as_frame(a)
    b = as_frame(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cannot concatenate frames of lengths {a.shape[1]} and {b.shape[1]}")
    return np.concatenate((a, b), axis=0)
