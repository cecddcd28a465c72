"""State-space machinery: ZOH discretization, recurrent and convolutional
scans, and the input-dependent bidirectional scan used by the Mamba mixer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import F32, ShapeError, as_tensor, linear, silu

ZOH_TAU = 1e-4


class ScanDirection(enum.Enum):
    FORWARD = "fwd"
    BACKWARD = "bwd"


@dataclass(frozen=True)
class LtiSsm:
    """Scalar-state (d_state = 1) linear time-invariant SSM."""

    a: float
    b: float
    c_out: float
    delta: float

    def __post_init__(self):
        if not self.a < 0:
            raise ValueError(f"state matrix a must be negative for stability, got {self.a}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @classmethod
    def from_log(cls, a_log: float, b: float, c_out: float, delta: float) -> "LtiSsm":
        return cls(-math.exp(a_log), b, c_out, delta)


def zoh(a, b, delta, *, euler_b: bool = False, tau: float = ZOH_TAU, dtype=F32):
    """Elementwise zero-order hold: returns ``(a_bar, b_bar)``.

    ``b_bar = expm1(delta*a)/a * b``; below ``|delta*a| <= tau`` the
    second-order Taylor form ``delta*b*(1 + delta*a/2)`` is used instead.
    With ``euler_b`` the input matrix uses ``delta*b``.
    """
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    delta = np.asarray(delta, dtype=dtype)
    da = delta * a
    a_bar = np.exp(da)
    if euler_b:
        return a_bar, (delta * b).astype(dtype)
    small = np.abs(da) <= dtype(tau)
    safe_a = np.where(small, dtype(-1.0), a)
    exact = np.expm1(da) / safe_a * b
    taylor = delta * b * (dtype(1.0) + dtype(0.5) * da)
    return a_bar, np.where(small, taylor, exact).astype(dtype)


def discretize_zoh(p: LtiSsm, *, euler_b: bool = False) -> tuple[float, float]:
    a_bar, b_bar = zoh(p.a, p.b, p.delta, euler_b=euler_b)
    return float(a_bar), float(b_bar)


def scan_recurrent(a_bar, b_bar, c, x, h0: float = 0.0) -> np.ndarray:
    """Left-to-right ``h_t = a_bar_t h_{t-1} + b_bar_t x_t``, ``y_t = c_t h_t``.

    ``a_bar``, ``b_bar`` and ``c`` may be scalars or per-step sequences.
    """
    x = np.asarray(x, dtype=F32).reshape(-1)
    L = x.shape[0]
    if L < 1:
        raise ShapeError("sequence length must be >= 1")
    seqs = []
    for name, v in (("a_bar", a_bar), ("b_bar", b_bar), ("c", c)):
        v = np.asarray(v, dtype=F32)
        if v.ndim == 0:
            v = np.full(L, v, dtype=F32)
        elif v.shape != (L,):
            raise ShapeError(f"{name} has length {v.shape}, expected ({L},)")
        seqs.append(v)
    ab, bb, cc = seqs
    h = F32(h0)
    y = np.empty(L, dtype=F32)
    for t in range(L):
        h = ab[t] * h + bb[t] * x[t]
        y[t] = cc[t] * h
    return y


def ssm_kernel(p: LtiSsm, L: int, *, euler_b: bool = False) -> np.ndarray:
    if L < 1:
        raise ValueError("kernel length must be >= 1")
    a_bar, b_bar = zoh(p.a, p.b, p.delta, euler_b=euler_b)
    powers = a_bar.astype(np.float64) ** np.arange(L)
    return (F32(p.c_out) * (powers * float(b_bar))).astype(F32)


def scan_convolutional(p: LtiSsm, x, L: int | None = None, *, euler_b: bool = False) -> np.ndarray:
    """Causal convolution of ``x`` with the SSM kernel (zero initial state)."""
    x = np.asarray(x, dtype=F32).reshape(-1)
    if L is None:
        L = x.shape[0]
    if x.shape[0] != L:
        raise ShapeError(f"x has length {x.shape[0]}, expected {L}")
    k = ssm_kernel(p, L, euler_b=euler_b)
    return np.convolve(x, k)[:L].astype(F32)


def linear_recurrence(a, u, axis: int = 1) -> np.ndarray:
    """All prefix states of ``h_t = a_t h_{t-1} + u_t`` with ``h_{-1} = 0``.

    Log-depth Hillis-Steele scan over ``axis``; both inputs share a shape.
    """
    dtype = np.result_type(a, u, F32)
    a = np.moveaxis(np.array(a, dtype=dtype), axis, 0)
    h = np.moveaxis(np.array(u, dtype=dtype), axis, 0)
    L = h.shape[0]
    off = 1
    while off < L:
        h[off:] = a[off:] * h[:-off] + h[off:]
        a[off:] = a[off:] * a[:-off]
        off *= 2
    return np.moveaxis(h, 0, axis)


@dataclass
class SelectiveSsmParams:
    """Per-direction selective scan parameters for ``c_inner`` channels.

    ``a_log`` has shape ``(c_inner, d_state)``; the state matrix is
    ``-exp(a_log)``.
    """

    a_log: np.ndarray
    dt_weight: np.ndarray
    dt_bias: np.ndarray
    b_weight: np.ndarray
    c_weight: np.ndarray
    d_skip: np.ndarray | None = None

    def __post_init__(self):
        self.a_log = np.asarray(self.a_log, dtype=F32)
        if self.a_log.ndim == 1:
            self.a_log = self.a_log[:, None]
        ci = self.a_log.shape[0]
        m = self.a_log.shape[1]
        shapes = {
            "dt_weight": (ci, ci), "dt_bias": (ci,),
            "b_weight": (m, ci), "c_weight": (m, ci),
        }
        for name, shape in shapes.items():
            v = np.asarray(getattr(self, name), dtype=F32)
            if v.shape != shape:
                raise ShapeError(f"{name} has shape {v.shape}, expected {shape}")
            setattr(self, name, v)
        if self.d_skip is not None:
            self.d_skip = np.asarray(self.d_skip, dtype=F32).reshape(ci)

    @property
    def c_inner(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {
            "a_log": self.a_log,
            "dt_proj.weight": self.dt_weight, "dt_proj.bias": self.dt_bias,
            "b_proj.weight": self.b_weight, "c_proj.weight": self.c_weight,
        }
        if self.d_skip is not None:
            out["d_skip"] = self.d_skip
        return out


def selective_scan(x, p: SelectiveSsmParams, direction: ScanDirection = ScanDirection.FORWARD,
                   *, euler_b: bool = False) -> np.ndarray:
    """Input-dependent scan over tokens.

    ``x`` is ``(L, c_inner)`` or ``(n, L, c_inner)``. Inputs and outputs are
    float32; the scan itself runs in float64, because the output is a product
    of input-dependent terms and f32 intermediates lose several ulps.
    """
    x = np.asarray(x, dtype=F32)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != p.c_inner:
        raise ShapeError(f"selective_scan expects (..., L, {p.c_inner}), got {x.shape}")
    if direction is ScanDirection.BACKWARD:
        x = x[:, ::-1]
    f64 = np.float64
    x64 = x.astype(f64)
    tokens = x64.reshape(-1, x.shape[-1])
    n, L, ci = x.shape
    pre = tokens @ p.dt_weight.T.astype(f64) + p.dt_bias.astype(f64)
    delta = np.logaddexp(0.0, pre).reshape(n, L, ci)                 # softplus, (n, L, I)
    bmat = (tokens @ p.b_weight.T.astype(f64)).reshape(n, L, -1)    # (n, L, M)
    cmat = (tokens @ p.c_weight.T.astype(f64)).reshape(n, L, -1)
    a = -np.exp(p.a_log.astype(f64))                                # (I, M)
    a_bar, b_bar = zoh(a[None, None], 1.0, delta[..., None], euler_b=euler_b, dtype=f64)
    u = b_bar * bmat[:, :, None, :] * x64[..., None]                # (n, L, I, M)
    h = linear_recurrence(a_bar, u, axis=1)
    y = np.einsum("nlim,nlm->nli", h, cmat)
    if p.d_skip is not None:
        y = y + p.d_skip.astype(f64) * x64
    if direction is ScanDirection.BACKWARD:
        y = y[:, ::-1]
    y = np.ascontiguousarray(y, dtype=F32)
    return y[0] if squeeze else y


def selective_scan_naive(x, p: SelectiveSsmParams, direction: ScanDirection = ScanDirection.FORWARD,
                         *, euler_b: bool = False) -> np.ndarray:
    """Scalar per-token, per-channel reference loop for ``x`` of shape (L, c_inner)."""
    x = np.asarray(x, dtype=F32)
    L, ci = x.shape
    m = p.d_state
    order = range(L - 1, -1, -1) if direction is ScanDirection.BACKWARD else range(L)
    h = np.zeros((ci, m), dtype=np.float64)
    y = np.zeros((L, ci), dtype=F32)
    for t in order:
        xt = x[t]
        bt = [sum(float(p.b_weight[s, j]) * float(xt[j]) for j in range(ci)) for s in range(m)]
        ct = [sum(float(p.c_weight[s, j]) * float(xt[j]) for j in range(ci)) for s in range(m)]
        for i in range(ci):
            pre = float(p.dt_bias[i]) + sum(float(p.dt_weight[i, j]) * float(xt[j]) for j in range(ci))
            dt = math.log1p(math.exp(-abs(pre))) + max(pre, 0.0)
            acc = 0.0
            for s in range(m):
                a = -math.exp(float(p.a_log[i, s]))
                a_bar = math.exp(dt * a)
                if euler_b:
                    b_bar = dt * bt[s]
                elif abs(dt * a) <= ZOH_TAU:
                    b_bar = dt * bt[s] * (1.0 + 0.5 * dt * a)
                else:
                    b_bar = math.expm1(dt * a) / a * bt[s]
                h[i, s] = a_bar * float(h[i, s]) + b_bar * float(xt[i])
                acc += ct[s] * float(h[i, s])
            if p.d_skip is not None:
                acc += float(p.d_skip[i]) * float(xt[i])
            y[t, i] = acc
    return y


def bidirectional_scan(x, fwd: SelectiveSsmParams, bwd: SelectiveSsmParams, *, euler_b: bool = False):
    return (selective_scan(x, fwd, ScanDirection.FORWARD, euler_b=euler_b)
            + selective_scan(x, bwd, ScanDirection.BACKWARD, euler_b=euler_b))


def depthwise_conv1d(x, weight, bias=None) -> np.ndarray:
    """Non-causal 'same' depthwise conv over axis 1 of ``(n, L, C)``; weight ``(C, k)``."""
    x = np.asarray(x, dtype=F32)
    weight = np.asarray(weight, dtype=F32)
    c, k = weight.shape
    if x.shape[-1] != c:
        raise ShapeError(f"conv1d expects {c} channels, got {x.shape[-1]}")
    pad = k // 2
    L = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    out = np.zeros_like(x)
    for j in range(k):
        out += weight[:, j] * xp[:, j:j + L]
    if bias is not None:
        out = out + np.asarray(bias, dtype=F32)
    return out


@dataclass
class MambaMixerParams:
    """Weights of the bidirectional gated Mamba mixer for ``c_g`` channels."""

    in_weight: np.ndarray           # (2 * c_inner, c_g)
    in_bias: np.ndarray | None
    conv_weight: np.ndarray         # (c_inner, 3)
    conv_bias: np.ndarray | None
    out_weight: np.ndarray          # (c_g, c_inner)
    out_bias: np.ndarray | None
    fwd: SelectiveSsmParams
    bwd: SelectiveSsmParams
    euler_b: bool = field(default=False)

    def __post_init__(self):
        ci = self.fwd.c_inner
        if self.bwd.c_inner != ci:
            raise ShapeError("forward and backward scan widths differ")
        cg = self.out_weight.shape[0]
        if self.in_weight.shape != (2 * ci, cg):
            raise ShapeError(f"in_proj weight {self.in_weight.shape} != {(2 * ci, cg)}")
        if self.out_weight.shape != (cg, ci):
            raise ShapeError(f"out_proj weight {self.out_weight.shape} != {(cg, ci)}")
        if self.conv_weight.shape[0] != ci:
            raise ShapeError(f"conv1d weight {self.conv_weight.shape} does not match {ci} channels")

    @property
    def channels(self) -> int:
        return self.out_weight.shape[0]

    @property
    def c_inner(self) -> int:
        return self.fwd.c_inner

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"in_proj.weight": self.in_weight}
        if self.in_bias is not None:
            out["in_proj.bias"] = self.in_bias
        out["conv1d.weight"] = self.conv_weight
        if self.conv_bias is not None:
            out["conv1d.bias"] = self.conv_bias
        for tag, sp in (("fwd", self.fwd), ("bwd", self.bwd)):
            out.update({f"{tag}.{k}": v for k, v in sp.tensors().items()})
        out["out_proj.weight"] = self.out_weight
        if self.out_bias is not None:
            out["out_proj.bias"] = self.out_bias
        return out


def mamba_mixer(x, p: MambaMixerParams) -> np.ndarray:
    """Gated bidirectional selective-scan mixer on an ``(n, c_g, h, w)`` map.

    Tokens are the row-major flattening of the spatial grid.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c != p.channels:
        raise ShapeError(f"mamba mixer expects {p.channels} channels, got {c}")
    tokens = x.reshape(n, c, h * w).transpose(0, 2, 1)
    proj = linear(tokens, p.in_weight, p.in_bias)
    ci = p.c_inner
    main, gate = proj[..., :ci], proj[..., ci:]
    main = silu(depthwise_conv1d(main, p.conv_weight, p.conv_bias))
    y = bidirectional_scan(main, p.fwd, p.bwd, euler_b=p.euler_b)
    y = y * silu(gate)
    out = linear(y, p.out_weight, p.out_bias)
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, c, h, w))
