"""Inference-time folding of batch norm into the preceding conv / linear layer."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .graph import BatchNorm, BlockGraph, Conv2d, Layer, Linear, iter_layers
from .tensor import F32, BatchNormParams, ShapeError

EQUIVALENCE_TOL = 1e-4


class FusionError(RuntimeError):
    pass


@dataclass
class FusionReport:
    layers_before: int
    layers_after: int
    fused_pairs: list[tuple[str, str]] = field(default_factory=list)
    unfused_bn: list[str] = field(default_factory=list)
    max_abs_divergence: float | None = None

    def to_text(self) -> str:
        lines = [
            f"layers_before: {self.layers_before}",
            f"layers_after: {self.layers_after}",
            f"fused_pairs: {len(self.fused_pairs)}",
        ]
        lines += [f"  {p} <- {b}" for p, b in self.fused_pairs]
        lines.append(f"unfused_bn: {len(self.unfused_bn)}")
        lines += [f"  {b}" for b in self.unfused_bn]
        if self.max_abs_divergence is not None:
            lines.append(f"max_abs_divergence: {self.max_abs_divergence:.3e}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "layers_before": self.layers_before,
            "layers_after": self.layers_after,
            "fused_pairs": [list(p) for p in self.fused_pairs],
            "unfused_bn": list(self.unfused_bn),
            "max_abs_divergence": self.max_abs_divergence,
        }


def fold_bn(weight, bias, p: BatchNormParams) -> tuple[np.ndarray, np.ndarray]:
    """Fold ``bn(W x + b)`` into ``W' x + b'``; output channels on axis 0."""
    weight = np.asarray(weight, dtype=F32)
    if weight.shape[0] != p.channels:
        raise ShapeError(f"weight has {weight.shape[0]} output channels, batchnorm has {p.channels}")
    bias = np.zeros(p.channels, F32) if bias is None else np.asarray(bias, dtype=F32).reshape(-1)
    denom = p.running_var.astype(np.float64) + p.eps
    if np.any(denom <= 0):
        raise ValueError("batchnorm running_var + eps must be > 0")
    s = p.gamma.astype(np.float64) / np.sqrt(denom)
    w = weight.astype(np.float64) * s.reshape((-1,) + (1,) * (weight.ndim - 1))
    b = (bias.astype(np.float64) - p.running_mean) * s + p.beta
    return w.astype(F32), b.astype(F32)


def _fuse_sequence(layers: list[Layer], report: FusionReport) -> list[Layer]:
    out: list[Layer] = []
    for layer in layers:
        prev = out[-1] if out else None
        if isinstance(layer, BatchNorm) and isinstance(prev, (Conv2d, Linear)):
            w, b = fold_bn(prev.weight, prev.bias, layer.params)
            prev.weight, prev.bias = w, b
            report.fused_pairs.append((prev.name, layer.name))
            continue
        if isinstance(layer, BatchNorm):
            report.unfused_bn.append(layer.name)
        out.append(layer)
    return out


def fuse_model(g: BlockGraph, *, probe: np.ndarray | None = None,
               tol: float = EQUIVALENCE_TOL) -> tuple[BlockGraph, FusionReport]:
    """Return a folded deep copy of ``g`` and a report; ``g`` is untouched.

    With a ``probe`` batch, the divergence between both graphs is measured and
    a ``FusionError`` is raised beyond ``tol``.
    """
    fused = copy.deepcopy(g)
    report = FusionReport(layers_before=g.layer_count(), layers_after=0)
    seen = set()
    for layer in list(iter_layers(fused.root)):
        for seq in layer.sequences():
            if id(seq) in seen:
                continue
            seen.add(id(seq))
            seq.layers = _fuse_sequence(seq.layers, report)
    fused.validate()
    report.layers_after = fused.layer_count()
    if probe is not None:
        ref = g(probe)
        got = fused(probe)
        report.max_abs_divergence = float(np.max(np.abs(ref.astype(np.float64) - got)))
        if not report.max_abs_divergence <= tol:
            raise FusionError(
                f"fused graph diverges by {report.max_abs_divergence:.3e} (> {tol:.1e})"
            )
    return fused, report
