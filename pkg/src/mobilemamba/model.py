"""MobileMamba variants: config presets, graph assembly and random init."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    Activation, BatchNorm, BlockGraph, Conv2d, GlobalAvgPool, Linear, Residual, Sequential,
    iter_leaves,
)
from .mrffi import MambaMixer, MrffiConfig, SsmConfig, build_mrffi, dw_conv_bn
from .tensor import F32, BatchNormParams, ConvSpec, ShapeError

PATCH_STRIDE = 16


@dataclass(frozen=True)
class ModelConfig:
    name: str
    resolution: int
    channels: tuple[int, int, int]
    depths: tuple[int, int, int]
    xi: tuple[float, float, float]
    mu: tuple[float, float, float]
    local_kernels: tuple[int, int, int] = (7, 5, 3)
    ffn_ratio: float = 4.0
    num_classes: int = 1000
    drop_path: float = 0.0
    n_splits: int = 1
    ssm: SsmConfig = field(default_factory=SsmConfig)
    wt_enabled: bool = True
    symmetric_lp: bool = False
    downsample_ffn: bool = True

    def __post_init__(self):
        if self.resolution % PATCH_STRIDE:
            raise ValueError(f"resolution {self.resolution} is not divisible by {PATCH_STRIDE}")
        for field_name in ("channels", "depths", "xi", "mu", "local_kernels"):
            if len(getattr(self, field_name)) != 3:
                raise ValueError(f"{field_name} needs one entry per stage")
        if any(d < 1 for d in self.depths):
            raise ValueError(f"depths must be >= 1, got {self.depths}")
        for x, m in zip(self.xi, self.mu):
            MrffiConfig(x, m, self.n_splits)  # validates xi + mu <= 1

    def mrffi(self, stage: int) -> MrffiConfig:
        return MrffiConfig(self.xi[stage], self.mu[stage], self.n_splits, self.ssm, self.wt_enabled)

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


_RATIOS = dict(xi=(0.8, 0.7, 0.6), mu=(0.2, 0.2, 0.3))

PRESETS: dict[str, ModelConfig] = {
    "T2": ModelConfig("T2", 192, (144, 272, 368), (1, 2, 2), **_RATIOS),
    "T4": ModelConfig("T4", 192, (176, 368, 448), (1, 2, 2), **_RATIOS),
    "S6": ModelConfig("S6", 224, (192, 384, 448), (1, 2, 2), **_RATIOS),
    "B1": ModelConfig("B1", 256, (200, 376, 448), (2, 3, 2), drop_path=0.03, **_RATIOS),
    "B2": ModelConfig("B2", 384, (200, 376, 448), (2, 3, 2), drop_path=0.03, **_RATIOS),
    "B4": ModelConfig("B4", 512, (200, 376, 448), (2, 3, 2), drop_path=0.03, **_RATIOS),
}


def preset(name: str) -> ModelConfig:
    key = name.upper().removeprefix("MOBILEMAMBA-")
    if key not in PRESETS:
        raise KeyError(f"unknown variant {name!r}; valid: {', '.join(PRESETS)}")
    return PRESETS[key]


def _zeros(*shape):
    return np.zeros(shape, dtype=F32)


def _even_ceil(v: float) -> int:
    v = math.ceil(v)
    return v + (v % 2)


def conv_bn(name: str, cin: int, cout: int, k: int = 1, stride: int = 1, groups: int = 1) -> list:
    return [
        Conv2d(f"{name}.conv", _zeros(cout, cin // groups, k, k), None, ConvSpec(k, stride, k // 2, groups)),
        BatchNorm(f"{name}.bn", BatchNormParams.identity(cout)),
    ]


def ffn(name: str, c: int, ratio: float) -> Residual:
    hidden = int(round(c * ratio))
    body = Sequential(name, [
        Conv2d(f"{name}.pw1", _zeros(hidden, c, 1, 1), _zeros(hidden), ConvSpec(1)),
        Activation(f"{name}.act", "gelu"),
        Conv2d(f"{name}.pw2", _zeros(c, hidden, 1, 1), None, ConvSpec(1)),
        BatchNorm(f"{name}.bn", BatchNormParams.identity(c)),
    ])
    return Residual(name, body)


def build_patch_embed(c1: int) -> Sequential:
    chans = [3, _even_ceil(c1 / 8), _even_ceil(c1 / 4), _even_ceil(c1 / 2), c1]
    layers = []
    for i in range(4):
        layers += conv_bn(f"patch_embed.{i}", chans[i], chans[i + 1], 3, 2)
        if i < 3:
            layers.append(Activation(f"patch_embed.{i}.act", "gelu"))
    return Sequential("patch_embed", layers)


def build_block(name: str, c: int, kernel: int, mcfg: MrffiConfig, ffn_ratio: float,
                symmetric_lp: bool = False) -> Sequential:
    parts = [
        Residual(f"{name}.lp", Sequential(f"{name}.lp", dw_conv_bn(f"{name}.lp", c, kernel))),
        Residual(f"{name}.mrffi", Sequential(f"{name}.mrffi", [build_mrffi(f"{name}.mrffi", c, mcfg)])),
    ]
    if symmetric_lp:
        parts.append(Residual(f"{name}.lp2", Sequential(f"{name}.lp2", dw_conv_bn(f"{name}.lp2", c, kernel))))
    parts.append(ffn(f"{name}.ffn", c, ffn_ratio))
    return Sequential(name, parts)


def build_downsample(name: str, cin: int, cout: int, ffn_ratio: float, with_ffn: bool) -> Sequential:
    layers = dw_conv_bn(f"{name}.dw", cin, 3, stride=2) + conv_bn(f"{name}.pw", cin, cout)
    if with_ffn:
        layers.append(ffn(f"{name}.ffn", cout, ffn_ratio))
    return Sequential(name, layers)


def build_head(c: int, num_classes: int) -> Sequential:
    return Sequential("head", [
        GlobalAvgPool("head.pool"),
        BatchNorm("head.bn", BatchNormParams.identity(c)),
        Linear("head.fc", _zeros(num_classes, c), _zeros(num_classes)),
    ])


def build(cfg: ModelConfig | str, seed: int | None = 0, *, bn_stats: str = "identity",
          resolution: int | None = None) -> BlockGraph:
    """Assemble and shape-validate a model; seeded random weights unless ``seed`` is None."""
    if isinstance(cfg, str):
        cfg = preset(cfg)
    if resolution is not None:
        cfg = cfg.replace(resolution=resolution)
    C = cfg.channels
    layers = [build_patch_embed(C[0])]
    for s in range(3):
        blocks = [
            build_block(f"stage{s + 1}.block{b + 1}", C[s], cfg.local_kernels[s], cfg.mrffi(s),
                        cfg.ffn_ratio, cfg.symmetric_lp)
            for b in range(cfg.depths[s])
        ]
        layers.append(Sequential(f"stage{s + 1}", blocks))
        if s < 2:
            layers.append(build_downsample(f"downsample{s + 1}", C[s], C[s + 1], cfg.ffn_ratio, cfg.downsample_ffn))
    layers.append(build_head(C[2], cfg.num_classes))
    graph = BlockGraph(Sequential("model", layers), (1, 3, cfg.resolution, cfg.resolution), cfg)
    if seed is not None:
        init_weights(graph, seed, bn_stats=bn_stats)
    return graph


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(F32)


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def init_weights(graph: BlockGraph, seed: int = 0, *, std: float = 0.02, bn_stats: str = "identity") -> BlockGraph:
    """Deterministic random init in leaf order.

    ``bn_stats="random"`` also draws non-trivial BN affine/running statistics,
    which is what makes fusion checks meaningful.
    """
    if bn_stats not in ("identity", "random"):
        raise ValueError(f"bn_stats must be 'identity' or 'random', got {bn_stats!r}")
    rng = np.random.default_rng(seed)
    for leaf in iter_leaves(graph.root):
        if isinstance(leaf, (Conv2d, Linear)):
            leaf.weight = trunc_normal(rng, leaf.weight.shape, std)
            if leaf.bias is not None:
                leaf.bias = _zeros(*leaf.bias.shape)
        elif isinstance(leaf, BatchNorm):
            c = leaf.params.channels
            if bn_stats == "random":
                leaf.params = BatchNormParams(
                    rng.uniform(0.5, 1.5, c), rng.normal(0.0, 0.1, c),
                    rng.normal(0.0, 0.1, c), rng.uniform(0.5, 1.5, c), leaf.params.eps,
                )
            else:
                leaf.params = BatchNormParams.identity(c, leaf.params.eps)
        elif isinstance(leaf, MambaMixer):
            p = leaf.params
            p.in_weight = trunc_normal(rng, p.in_weight.shape, std)
            p.conv_weight = trunc_normal(rng, p.conv_weight.shape, std)
            p.out_weight = trunc_normal(rng, p.out_weight.shape, std)
            for sp in (p.fwd, p.bwd):
                sp.a_log = _zeros(*sp.a_log.shape)
                sp.dt_weight = trunc_normal(rng, sp.dt_weight.shape, std)
                dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), sp.c_inner))
                sp.dt_bias = inverse_softplus(dt).astype(F32)
                sp.b_weight = trunc_normal(rng, sp.b_weight.shape, std)
                sp.c_weight = trunc_normal(rng, sp.c_weight.shape, std)
                if sp.d_skip is not None:
                    sp.d_skip = np.ones(sp.c_inner, F32)
    return graph


def forward(graph: BlockGraph, x: np.ndarray) -> np.ndarray:
    return graph(x)


def forward_features(graph: BlockGraph, x: np.ndarray) -> dict[str, np.ndarray]:
    """Outputs of each top-level section (patch_embed, stageS, downsampleS, head)."""
    x = np.asarray(x, dtype=F32)
    if x.shape[1:] != tuple(graph.input_shape[1:]):
        raise ShapeError(f"model expects input (n, {graph.input_shape[1:]}), got {x.shape}")
    out = {}
    for section in graph.root.layers:
        x = section(x)
        out[section.name] = x
    return out


def section(graph: BlockGraph, name: str) -> Sequential:
    for s in graph.root.layers:
        if s.name == name:
            return s
    raise KeyError(name)


def patch_embed(x: np.ndarray, stem: Sequential) -> np.ndarray:
    h, w = x.shape[2:]
    if h % PATCH_STRIDE or w % PATCH_STRIDE:
        raise ShapeError(f"patch embed needs H, W divisible by {PATCH_STRIDE}, got {h}x{w}")
    return stem(x)


def mobile_mamba_block(x: np.ndarray, block: Sequential) -> np.ndarray:
    return block(x)


def downsample(x: np.ndarray, ds: Sequential) -> np.ndarray:
    return ds(x)
