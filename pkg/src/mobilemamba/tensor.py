"""Dense NCHW float32 tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 and rank 4
(batch, channel, height, width). Every op here is a pure function and never
mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

F32 = np.float32

GELU_C0 = 0.7978845608
GELU_C1 = 0.044715


class ShapeError(ValueError):
    """Raised when tensor shapes disagree with an op's contract."""


def as_tensor(x, *, ndim: int = 4) -> np.ndarray:
    arr = np.asarray(x, dtype=F32)
    if arr.ndim != ndim:
        raise ShapeError(f"expected rank-{ndim} tensor, got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dims must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")

    def out_size(self, size: int) -> int:
        out = (size + 2 * self.padding - self.kernel) // self.stride + 1
        if out < 1:
            raise ShapeError(
                f"conv output dim {out} < 1 for input {size}, kernel {self.kernel}, "
                f"stride {self.stride}, padding {self.padding}"
            )
        return out

    def is_depthwise(self, in_channels: int, out_channels: int) -> bool:
        return self.groups == in_channels == out_channels


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=F32).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=F32).reshape(-1)
        self.running_mean = np.asarray(self.running_mean, dtype=F32).reshape(-1)
        self.running_var = np.asarray(self.running_var, dtype=F32).reshape(-1)
        n = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape[0] != n:
                raise ShapeError(f"batchnorm {name} has length {getattr(self, name).shape[0]}, expected {n}")
        if np.any(self.running_var < 0):
            raise ValueError("batchnorm running_var must be >= 0")

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            np.ones(channels, F32), np.zeros(channels, F32),
            np.zeros(channels, F32), np.ones(channels, F32), eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel ``(s, t)`` such that ``bn(x) = s * x + t``."""
        denom = self.running_var.astype(np.float64) + self.eps
        if np.any(denom <= 0):
            raise ValueError("batchnorm running_var + eps must be > 0")
        s = self.gamma.astype(np.float64) / np.sqrt(denom)
        t = self.beta.astype(np.float64) - self.running_mean.astype(np.float64) * s
        return s.astype(F32), t.astype(F32)


def conv2d(x, weight, bias=None, spec: ConvSpec | None = None) -> np.ndarray:
    """2-D cross-correlation with zero padding, NCHW layout.

    ``weight`` has shape ``(out_c, in_c // groups, k, k)``.
    """
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=F32)
    if spec is None:
        spec = ConvSpec(kernel=weight.shape[-1])
    n, c, h, w = x.shape
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be rank 4, got shape {weight.shape}")
    out_c, cpg, kh, kw = weight.shape
    g = spec.groups
    if kh != spec.kernel or kw != spec.kernel:
        raise ShapeError(f"weight kernel dims {kh}x{kw} != spec kernel {spec.kernel}")
    if c % g:
        raise ShapeError(f"input channels {c} not divisible by groups {g}")
    if out_c % g:
        raise ShapeError(f"output channels {out_c} not divisible by groups {g}")
    if cpg != c // g:
        raise ShapeError(f"weight in-channels-per-group {cpg} != input channels {c} / groups {g}")
    oh, ow = spec.out_size(h), spec.out_size(w)
    k, s, p = spec.kernel, spec.stride, spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    if bias is not None:
        bias = np.asarray(bias, dtype=F32).reshape(-1)
        if bias.shape[0] != out_c:
            raise ShapeError(f"conv bias length {bias.shape[0]} != out channels {out_c}")

    if g == c and out_c == c:
        out = np.empty((n, c, oh, ow), dtype=F32)
        out[...] = 0 if bias is None else bias[None, :, None, None]
        for i in range(k):
            for j in range(k):
                tap = xp[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s]
                out += weight[None, :, 0, i, j, None, None] * tap
    elif k == 1 and s == 1 and g == 1:
        out = np.matmul(weight[:, :, 0, 0], x.reshape(n, c, h * w)).reshape(n, out_c, oh, ow)
    else:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :oh, :ow]
        opg = out_c // g
        parts = []
        for gi in range(g):
            wg = weight[gi * opg:(gi + 1) * opg]
            xg = win[:, gi * cpg:(gi + 1) * cpg]
            parts.append(np.tensordot(xg, wg, axes=((1, 4, 5), (1, 2, 3))).transpose(0, 3, 1, 2))
        out = parts[0] if g == 1 else np.concatenate(parts, axis=1)
        out = np.ascontiguousarray(out, dtype=F32)
    if bias is not None and not (g == c and out_c == c):
        out += bias[None, :, None, None]
    return out


def linear(x, weight, bias=None) -> np.ndarray:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=F32)
    weight = np.asarray(weight, dtype=F32)
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be rank 2, got {weight.shape}")
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear in-features {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    lead = x.shape[:-1]
    # one contiguous 2-D GEMM; batched matmul on strided views skips BLAS
    y = (np.ascontiguousarray(x).reshape(-1, x.shape[-1]) @ weight.T).reshape(*lead, weight.shape[0])
    if bias is not None:
        bias = np.asarray(bias, dtype=F32).reshape(-1)
        if bias.shape[0] != weight.shape[0]:
            raise ShapeError(f"linear bias length {bias.shape[0]} != out-dim {weight.shape[0]}")
        y = y + bias
    return y.astype(F32, copy=False)


def batchnorm2d(x, p: BatchNormParams) -> np.ndarray:
    """Inference-mode batch norm using running statistics."""
    x = as_tensor(x)
    if x.shape[1] != p.channels:
        raise ShapeError(f"batchnorm expects {p.channels} channels, got {x.shape[1]}")
    var = p.running_var + F32(p.eps)
    if np.any(var <= 0):
        raise ValueError("batchnorm running_var + eps must be > 0")
    shape = (1, -1, 1, 1)
    out = (x - p.running_mean.reshape(shape)) / np.sqrt(var).reshape(shape)
    return (out * p.gamma.reshape(shape) + p.beta.reshape(shape)).astype(F32, copy=False)


def sigmoid(x) -> np.ndarray:
    # tanh form never overflows
    x = np.asarray(x, dtype=F32)
    return F32(0.5) + F32(0.5) * np.tanh(F32(0.5) * x)


def silu(x) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    return x * sigmoid(x)


def gelu(x) -> np.ndarray:
    """Tanh-approximated GELU."""
    x = np.asarray(x, dtype=F32)
    inner = F32(GELU_C0) * (x + F32(GELU_C1) * x * x * x)
    return F32(0.5) * x * (F32(1.0) + np.tanh(inner))


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=F32), F32(0.0))


def softplus(x) -> np.ndarray:
    return np.logaddexp(F32(0.0), np.asarray(x, dtype=F32)).astype(F32, copy=False)


def split_channels(x, sizes) -> list[np.ndarray]:
    x = as_tensor(x)
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes) or sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {sizes} do not partition {x.shape[1]} channels")
    bounds = np.cumsum([0] + sizes)
    return [x[:, bounds[i]:bounds[i + 1]] for i in range(len(sizes))]


def concat_channels(parts) -> np.ndarray:
    parts = [p for p in parts if p.shape[1] > 0]
    if not parts:
        raise ShapeError("concat_channels needs at least one non-empty tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ShapeError(f"cannot concat {p.shape} with {ref}")
    return np.concatenate(parts, axis=1)


def global_avg_pool(x) -> np.ndarray:
    x = as_tensor(x)
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(F32)
