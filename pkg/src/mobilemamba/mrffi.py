"""Multi-receptive-field feature interaction: global / local / identity split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import BatchNorm, Conv2d, Layer, LayerInfo, Sequential, Shape, _trace_children
from .ssm import MambaMixerParams, SelectiveSsmParams, mamba_mixer
from .tensor import F32, ConvSpec, ShapeError
from .wavelet import HAAR, iwt2d, wt2d

_RATIO_EPS = 1e-9


@dataclass(frozen=True)
class SsmConfig:
    expand: int = 2
    d_state: int = 1
    directions: int = 2
    conv_kernel: int = 3
    d_skip: bool = True
    euler_b: bool = False

    def __post_init__(self):
        if self.directions != 2:
            raise ValueError("only bidirectional scanning (directions=2) is supported")
        if self.expand < 1 or self.d_state < 1:
            raise ValueError("expand and d_state must be >= 1")


@dataclass(frozen=True)
class MrffiConfig:
    xi: float
    mu: float
    n_splits: int = 1
    ssm: SsmConfig = field(default_factory=SsmConfig)
    wt_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi must lie in [0, 1], got {self.xi}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.xi + self.mu > 1.0 + _RATIO_EPS:
            raise ValueError(f"xi + mu must be <= 1, got {self.xi} + {self.mu}")
        if self.n_splits < 1:
            raise ValueError(f"n_splits must be >= 1, got {self.n_splits}")


def partition(c: int, cfg: MrffiConfig) -> tuple[int, int, int]:
    """Channel counts ``(global, local, identity)``.

    Global is ``floor(xi*c)``; local is ``floor(mu*c)`` rounded down to a
    multiple of ``n_splits``; the remainder is identity.
    """
    if c < 1:
        raise ValueError(f"channel count must be >= 1, got {c}")
    c_g = min(c, math.floor(cfg.xi * c + _RATIO_EPS))
    c_l = min(c - c_g, math.floor(cfg.mu * c + _RATIO_EPS))
    c_l -= c_l % cfg.n_splits
    return c_g, c_l, c - c_g - c_l


@dataclass(eq=False)
class MambaMixer(Layer):
    name: str
    params: MambaMixerParams
    kind = "mamba"

    def __call__(self, x):
        return mamba_mixer(x, self.params)

    def out_shape(self, shape):
        if shape[1] != self.params.channels:
            raise ShapeError(f"{self.name}: expects {self.params.channels} channels, got {shape[1]}")
        return shape

    def tensors(self):
        return self.params.tensors()

    def set_tensor(self, local, value):
        p = self.params
        top = {
            "in_proj.weight": "in_weight", "in_proj.bias": "in_bias",
            "conv1d.weight": "conv_weight", "conv1d.bias": "conv_bias",
            "out_proj.weight": "out_weight", "out_proj.bias": "out_bias",
        }
        scan = {
            "a_log": "a_log", "dt_proj.weight": "dt_weight", "dt_proj.bias": "dt_bias",
            "b_proj.weight": "b_weight", "c_proj.weight": "c_weight", "d_skip": "d_skip",
        }
        if local in top:
            setattr(p, top[local], value)
            return
        tag, _, rest = local.partition(".")
        if tag in ("fwd", "bwd") and rest in scan:
            setattr(getattr(p, tag), scan[rest], value)
            return
        super().set_tensor(local, value)


@dataclass(eq=False)
class WteBranch(Layer):
    """Wavelet-domain branch: pad, WT, ``body`` on 4c channels, IWT, crop."""

    name: str
    body: Sequential
    kind = "wte"

    def __call__(self, x):
        size = x.shape[2:]
        return iwt2d(self.body(wt2d(x, HAAR)), HAAR, size=size)

    def _wt_shape(self, shape):
        n, c, h, w = shape
        return (n, 4 * c, (h + 1) // 2, (w + 1) // 2)

    def out_shape(self, shape):
        out = self.body.out_shape(self._wt_shape(shape))
        if out != self._wt_shape(shape):
            raise ShapeError(f"{self.name}: wavelet-domain body must preserve shape")
        return shape

    def sequences(self):
        return [self.body]

    def trace(self, shape, rows):
        s = self._wt_shape(shape)
        rows.append(LayerInfo(f"{self.name}.dwt", "haar", shape, s))
        _trace_seq(self.body, s, rows)
        rows.append(LayerInfo(f"{self.name}.idwt", "haar", s, shape))


@dataclass(eq=False)
class MkDeConv(Layer):
    """Equal channel groups, group ``j`` (1-based) convolved with kernel ``2j+1``."""

    name: str
    splits: list[Sequential]
    kind = "mkdeconv"

    @property
    def group_channels(self) -> int:
        first = self.splits[0].layers[0]
        return first.out_channels

    def __call__(self, x):
        parts = T.split_channels(x, [self.group_channels] * len(self.splits))
        return T.concat_channels([seq(p) for seq, p in zip(self.splits, parts)])

    def out_shape(self, shape):
        cs = self.group_channels
        if shape[1] != cs * len(self.splits):
            raise ShapeError(f"{self.name}: expects {cs * len(self.splits)} channels, got {shape[1]}")
        sub = (shape[0], cs) + tuple(shape[2:])
        for seq in self.splits:
            if seq.out_shape(sub) != sub:
                raise ShapeError(f"{self.name}: split body must preserve shape")
        return shape

    def sequences(self):
        return list(self.splits)

    def trace(self, shape, rows):
        sub = (shape[0], self.group_channels) + tuple(shape[2:])
        for seq in self.splits:
            _trace_seq(seq, sub, rows)


def mk_deconv(x, mk: MkDeConv) -> np.ndarray:
    return mk(x)


@dataclass(eq=False)
class Mrffi(Layer):
    """Concat(mamba(x_g) + wte(x_g), mk(x_l), x_id) along channels."""

    name: str
    channels: int
    sizes: tuple[int, int, int]
    mamba: MambaMixer | None
    wte: WteBranch | None
    mk: MkDeConv | None
    kind = "mrffi"

    def __post_init__(self):
        if sum(self.sizes) != self.channels:
            raise ShapeError(f"{self.name}: partition {self.sizes} does not sum to {self.channels}")
        c_g, c_l, _ = self.sizes
        if (c_g > 0) != (self.mamba is not None):
            raise ShapeError(f"{self.name}: mamba branch presence must match global width {c_g}")
        if c_g == 0 and self.wte is not None:
            raise ShapeError(f"{self.name}: wavelet branch requires global channels")
        if (c_l > 0) != (self.mk is not None):
            raise ShapeError(f"{self.name}: local branch presence must match local width {c_l}")

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expects {self.channels} channels, got {x.shape[1]}")
        x_g, x_l, x_id = T.split_channels(x, self.sizes)
        outs = []
        if self.mamba is not None:
            y = self.mamba(x_g)
            if self.wte is not None:
                y = y + self.wte(x_g)
            outs.append(y)
        if self.mk is not None:
            outs.append(self.mk(x_l))
        outs.append(x_id)
        return T.concat_channels(outs)

    def out_shape(self, shape):
        if shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expects {self.channels} channels, got {shape[1]}")
        for branch, width in ((self.mamba, self.sizes[0]), (self.wte, self.sizes[0]), (self.mk, self.sizes[1])):
            if branch is not None:
                sub = (shape[0], width) + tuple(shape[2:])
                if branch.out_shape(sub) != sub:
                    raise ShapeError(f"{branch.name}: branch must preserve shape")
        return shape

    def sequences(self):
        seqs = []
        if self.mamba is not None:
            seqs.append(Sequential(f"{self.name}.global", [self.mamba]))
        if self.wte is not None:
            seqs.append(Sequential(f"{self.name}.wavelet", [self.wte]))
        if self.mk is not None:
            seqs.append(Sequential(f"{self.name}.local", [self.mk]))
        return seqs

    def trace(self, shape, rows):
        n, _, h, w = shape
        c_g, c_l, c_id = self.sizes
        if self.mamba is not None:
            s = (n, c_g, h, w)
            rows.append(LayerInfo(self.mamba.name, self.mamba.kind, s, s))
            if self.wte is not None:
                self.wte.trace(s, rows)
        if self.mk is not None:
            self.mk.trace((n, c_l, h, w), rows)
        if c_id:
            s = (n, c_id, h, w)
            rows.append(LayerInfo(f"{self.name}.identity", "identity", s, s))


def mrffi_forward(x, block: Mrffi) -> np.ndarray:
    return block(x)


def _trace_seq(seq: Sequential, shape: Shape, rows: list[LayerInfo]) -> None:
    _trace_children(seq, shape, rows)


# --- construction -----------------------------------------------------------------


def _zeros(*shape):
    return np.zeros(shape, dtype=F32)


def build_mamba(name: str, c_g: int, ssm: SsmConfig) -> MambaMixer:
    ci = ssm.expand * c_g
    m = ssm.d_state

    def direction():
        return SelectiveSsmParams(
            a_log=_zeros(ci, m), dt_weight=_zeros(ci, ci), dt_bias=_zeros(ci),
            b_weight=_zeros(m, ci), c_weight=_zeros(m, ci),
            d_skip=np.ones(ci, F32) if ssm.d_skip else None,
        )

    params = MambaMixerParams(
        in_weight=_zeros(2 * ci, c_g), in_bias=_zeros(2 * ci),
        conv_weight=_zeros(ci, ssm.conv_kernel), conv_bias=_zeros(ci),
        out_weight=_zeros(c_g, ci), out_bias=_zeros(c_g),
        fwd=direction(), bwd=direction(), euler_b=ssm.euler_b,
    )
    return MambaMixer(name, params)


def dw_conv_bn(name: str, c: int, k: int, stride: int = 1) -> list[Layer]:
    """Depthwise conv (no bias) followed by BN, as two graph leaves."""
    return [
        Conv2d(f"{name}.conv", _zeros(c, 1, k, k), None, ConvSpec(k, stride, k // 2, c)),
        BatchNorm(f"{name}.bn", T.BatchNormParams.identity(c)),
    ]


def build_mrffi(name: str, c: int, cfg: MrffiConfig) -> Mrffi:
    c_g, c_l, c_id = partition(c, cfg)
    mamba = build_mamba(f"{name}.mamba", c_g, cfg.ssm) if c_g else None
    wte = None
    if c_g and cfg.wt_enabled:
        wte = WteBranch(f"{name}.wt", Sequential(f"{name}.wt", dw_conv_bn(f"{name}.wt", 4 * c_g, 3)))
    mk = None
    if c_l:
        cs = c_l // cfg.n_splits
        mk = MkDeConv(f"{name}.mk", [
            Sequential(f"{name}.mk.k{2 * j + 1}", dw_conv_bn(f"{name}.mk.k{2 * j + 1}", cs, 2 * j + 1))
            for j in range(1, cfg.n_splits + 1)
        ])
    return Mrffi(name, c, (c_g, c_l, c_id), mamba, wte, mk)
