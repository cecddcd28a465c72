"""Static cost accounting (MACs, parameters) and a wall-clock throughput bench.

Counting convention
-------------------
* conv: ``out_c * out_h * out_w * (in_c / groups) * k * k`` MACs
* linear: ``tokens * in * out`` MACs
* Haar analysis/synthesis: 4 MACs per output element (a stride-2 2x2 filter)
* selective scan, per token and inner channel: ``SCAN_MACS_PER_STATE`` MACs
  per state (``B*x``, ``b_bar*(Bx)``, ``a_bar*h + .``, ``C*h``) plus one for
  the ``D`` skip term when present
* activations, batch norm, residual adds, gating, softplus/exp:
  1 op per element, tallied separately as ``elementwise``

1 MAC is reported as 1 FLOP; ``flops_2x`` doubles it.
"""

from __future__ import annotations

import csv
import io
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    Activation, BatchNorm, BlockGraph, Conv2d, GlobalAvgPool, Layer, Linear, Residual, Sequential,
)
from .mrffi import MambaMixer, MkDeConv, Mrffi, WteBranch

SCAN_MACS_PER_STATE = 4
MIN_MEASURED_ITERS = 10

BRANCHES = ("stem", "lp", "mamba", "wt", "mk", "identity", "mrffi", "ffn", "downsample", "head")


@dataclass
class CostRow:
    name: str
    kind: str
    macs: int
    params: int
    elementwise: int = 0

    @property
    def stage(self) -> str:
        return self.name.split(".", 1)[0]

    @property
    def branch(self) -> str:
        parts = self.name.split(".")
        if parts[0] == "patch_embed":
            return "stem"
        if parts[0] == "head":
            return "head"
        for tag in ("mamba", "wt", "mk", "identity"):
            if f"mrffi.{tag}" in self.name:
                return tag
        if ".ffn" in self.name:
            return "ffn"
        if ".mrffi" in self.name:
            return "mrffi"
        if parts[0].startswith("downsample"):
            return "downsample"
        if ".lp" in self.name:
            return "lp"
        return "other"


@dataclass
class CostReport:
    rows: list[CostRow]
    resolution: int
    notes: list[str] = field(default_factory=list)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def flops(self) -> int:
        return self.macs

    @property
    def flops_2x(self) -> int:
        return 2 * self.macs

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def elementwise(self) -> int:
        return sum(r.elementwise for r in self.rows)

    def group(self, key: str) -> dict[str, tuple[int, int]]:
        out: dict[str, list[int]] = {}
        for r in self.rows:
            acc = out.setdefault(getattr(r, key), [0, 0])
            acc[0] += r.macs
            acc[1] += r.params
        return {k: (v[0], v[1]) for k, v in out.items()}

    def by_stage(self):
        return self.group("stage")

    def by_branch(self):
        return self.group("branch")

    def header(self) -> list[str]:
        return [
            f"resolution: {self.resolution}",
            f"convention: 1 MAC = 1 FLOP; scan = {SCAN_MACS_PER_STATE} MACs/state/token/channel (+1 D skip)",
            *self.notes,
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "kind", "stage", "branch", "macs", "params", "elementwise"])
        for r in self.rows:
            w.writerow([r.name, r.kind, r.stage, r.branch, r.macs, r.params, r.elementwise])
        w.writerow(["TOTAL", "", "", "", self.macs, self.params, self.elementwise])
        return buf.getvalue()

    def to_text(self, rows: bool = True) -> str:
        lines = [f"# {h}" for h in self.header()]
        if rows:
            width = max([len(r.name) for r in self.rows] + [4])
            lines.append(f"{'name':<{width}}  {'kind':<10} {'MACs':>14} {'params':>11} {'elementwise':>12}")
            for r in self.rows:
                lines.append(f"{r.name:<{width}}  {r.kind:<10} {r.macs:>14,} {r.params:>11,} {r.elementwise:>12,}")
        lines.append("")
        lines.append("by branch:")
        for k, (m, p) in sorted(self.by_branch().items()):
            lines.append(f"  {k:<11} {m / 1e6:>10.2f} MMACs {p / 1e6:>8.3f} M params")
        lines.append("by stage:")
        for k, (m, p) in self.by_stage().items():
            lines.append(f"  {k:<11} {m / 1e6:>10.2f} MMACs {p / 1e6:>8.3f} M params")
        lines.append(
            f"TOTAL {self.flops / 1e6:.1f} MFLOPs ({self.flops_2x / 1e6:.1f} at 2/MAC), "
            f"{self.params / 1e6:.3f} M params, {self.elementwise / 1e6:.1f} M elementwise ops"
        )
        return "\n".join(lines)


def _numel(shape) -> int:
    return int(np.prod(shape[1:]))


def _layer_costs(layer: Layer, shape, rows: list[CostRow]):
    """Append per-image rows for ``layer`` fed ``shape``; return the output shape."""
    if isinstance(layer, Conv2d):
        out = layer.out_shape(shape)
        _, oc, oh, ow = out
        k = layer.spec.kernel
        macs = oc * oh * ow * (layer.in_channels // layer.spec.groups) * k * k
        rows.append(CostRow(layer.name, "conv2d", macs, layer.n_params()))
        return out
    if isinstance(layer, Linear):
        out = layer.out_shape(shape)
        tokens = 1
        rows.append(CostRow(layer.name, "linear", tokens * layer.weight.shape[1] * layer.weight.shape[0], layer.n_params()))
        return out
    if isinstance(layer, BatchNorm):
        rows.append(CostRow(layer.name, "batchnorm", 0, layer.n_params(), _numel(shape)))
        return shape
    if isinstance(layer, Activation):
        rows.append(CostRow(layer.name, "activation", 0, 0, _numel(shape)))
        return shape
    if isinstance(layer, GlobalAvgPool):
        rows.append(CostRow(layer.name, "avgpool", 0, 0, _numel(shape)))
        return layer.out_shape(shape)
    if isinstance(layer, Sequential):
        for child in layer.layers:
            shape = _layer_costs(child, shape, rows)
        return shape
    if isinstance(layer, Residual):
        out = _layer_costs(layer.body, shape, rows)
        rows.append(CostRow(f"{layer.name}.add", "add", 0, 0, _numel(shape)))
        return out
    if isinstance(layer, MambaMixer):
        _mamba_costs(layer, shape, rows)
        return shape
    if isinstance(layer, WteBranch):
        n, c, h, w = shape
        wshape = (n, 4 * c, (h + 1) // 2, (w + 1) // 2)
        bands = _numel(wshape)
        rows.append(CostRow(f"{layer.name}.dwt", "haar", 4 * bands, 0))
        _layer_costs(layer.body, wshape, rows)
        rows.append(CostRow(f"{layer.name}.idwt", "haar", 4 * bands, 0))
        return shape
    if isinstance(layer, MkDeConv):
        n, _, h, w = shape
        for seq in layer.splits:
            _layer_costs(seq, (n, layer.group_channels, h, w), rows)
        return shape
    if isinstance(layer, Mrffi):
        n, _, h, w = shape
        c_g, c_l, c_id = layer.sizes
        if layer.mamba is not None:
            _layer_costs(layer.mamba, (n, c_g, h, w), rows)
            if layer.wte is not None:
                _layer_costs(layer.wte, (n, c_g, h, w), rows)
                rows.append(CostRow(f"{layer.name}.global_add", "add", 0, 0, c_g * h * w))
        if layer.mk is not None:
            _layer_costs(layer.mk, (n, c_l, h, w), rows)
        rows.append(CostRow(f"{layer.name}.identity", "identity", 0, 0))
        return shape
    raise TypeError(f"no cost rule for layer type {type(layer).__name__}")


def _mamba_costs(layer: MambaMixer, shape, rows: list[CostRow]) -> None:
    p = layer.params
    _, cg, h, w = shape
    L = h * w
    ci = p.c_inner
    m = p.fwd.d_state
    t = p.tensors()

    def n(*keys):
        return sum(int(t[k].size) for k in keys if k in t)

    name = layer.name
    rows.append(CostRow(f"{name}.in_proj", "linear", L * cg * 2 * ci, n("in_proj.weight", "in_proj.bias")))
    rows.append(CostRow(f"{name}.conv1d", "conv1d", L * ci * p.conv_weight.shape[1],
                        n("conv1d.weight", "conv1d.bias"), 2 * L * ci))  # + SiLU
    for tag, sp in (("fwd", p.fwd), ("bwd", p.bwd)):
        rows.append(CostRow(f"{name}.{tag}.dt_proj", "linear", L * ci * ci,
                            n(f"{tag}.dt_proj.weight", f"{tag}.dt_proj.bias"), L * ci))  # softplus
        rows.append(CostRow(f"{name}.{tag}.bc_proj", "linear", 2 * L * ci * m,
                            n(f"{tag}.b_proj.weight", f"{tag}.c_proj.weight")))
        scan = L * ci * (SCAN_MACS_PER_STATE * m + (1 if sp.d_skip is not None else 0))
        rows.append(CostRow(f"{name}.{tag}.scan", "ssm_scan", scan,
                            n(f"{tag}.a_log", f"{tag}.d_skip"), 2 * L * ci * m))  # exp, expm1
    rows.append(CostRow(f"{name}.gate", "gate", 0, 0, 3 * L * ci))  # silu, product, direction sum
    rows.append(CostRow(f"{name}.out_proj", "linear", L * ci * cg, n("out_proj.weight", "out_proj.bias")))


def count_costs(g: BlockGraph, resolution: int | None = None, batch: int = 1) -> CostReport:
    """Per-image cost rows for ``g``; ``resolution`` overrides the build resolution."""
    _, c, h, w = g.input_shape
    if resolution is not None:
        h = w = resolution
    res = w
    rows: list[CostRow] = []
    _layer_costs(g.root, (batch, c, h, w), rows)
    return CostReport(rows, res)


# --- throughput -------------------------------------------------------------------


@dataclass
class BenchResult:
    batch_size: int
    warmup_iters: int
    measured_iters: int
    threads: int
    images_per_second: float
    latency_ms_mean: float
    latency_ms_p50: float
    latency_ms_p95: float
    samples_ms: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("samples_ms")
        return d

    def to_text(self) -> str:
        return (
            f"batch={self.batch_size} warmup={self.warmup_iters} iters={self.measured_iters} "
            f"threads={self.threads}\n"
            f"images/s: {self.images_per_second:.2f}\n"
            f"latency ms/batch: mean {self.latency_ms_mean:.2f}  p50 {self.latency_ms_p50:.2f}  "
            f"p95 {self.latency_ms_p95:.2f}"
        )


def thread_cap(requested: int | None = None) -> int:
    cap = os.environ.get("MM_THREADS")
    n = requested or (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def bench_input(g: BlockGraph, batch: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    _, c, h, w = g.input_shape
    return rng.random((batch, c, h, w), dtype=np.float32)


def _runner(g: BlockGraph, x: np.ndarray, threads: int):
    if threads == 1 or x.shape[0] == 1:
        return lambda: g(x), None
    chunks = np.array_split(x, min(threads, x.shape[0]))
    pool = ThreadPoolExecutor(max_workers=len(chunks))
    return (lambda: list(pool.map(g, chunks))), pool


def bench(g: BlockGraph, batch: int = 1, warmup: int = 2, iters: int = 10, threads: int | None = 1,
          seed: int = 0) -> BenchResult:
    """Time ``iters`` forward passes after ``warmup`` untimed ones."""
    if iters < MIN_MEASURED_ITERS:
        raise ValueError(f"measured iters must be >= {MIN_MEASURED_ITERS}, got {iters}")
    if batch < 1 or warmup < 0:
        raise ValueError("batch must be >= 1 and warmup >= 0")
    threads = thread_cap(threads)
    x = bench_input(g, batch, seed)
    run, pool = _runner(g, x, threads)
    try:
        for _ in range(warmup):
            run()
        samples = []
        for _ in range(iters):
            t0 = time.perf_counter()
            run()
            samples.append((time.perf_counter() - t0) * 1e3)
    finally:
        if pool is not None:
            pool.shutdown()
    return summarize(samples, batch, warmup, threads)


def summarize(samples_ms: list[float], batch: int, warmup: int, threads: int) -> BenchResult:
    mean = statistics.fmean(samples_ms)
    return BenchResult(
        batch_size=batch, warmup_iters=warmup, measured_iters=len(samples_ms), threads=threads,
        images_per_second=batch / (mean / 1e3),
        latency_ms_mean=mean,
        latency_ms_p50=float(np.percentile(samples_ms, 50)),
        latency_ms_p95=float(np.percentile(samples_ms, 95)),
        samples_ms=list(samples_ms),
    )


def bench_pair(a: BlockGraph, b: BlockGraph, batch: int = 1, warmup: int = 2, iters: int = 10,
               threads: int | None = 1, seed: int = 0) -> tuple[BenchResult, BenchResult]:
    """Interleaved timing of two graphs on the same input, so drift hits both alike."""
    if iters < MIN_MEASURED_ITERS:
        raise ValueError(f"measured iters must be >= {MIN_MEASURED_ITERS}, got {iters}")
    threads = thread_cap(threads)
    x = bench_input(a, batch, seed)
    runs = [_runner(a, x, threads), _runner(b, x, threads)]
    samples: list[list[float]] = [[], []]
    try:
        for _ in range(warmup):
            for run, _ in runs:
                run()
        for i in range(iters):
            order = (0, 1) if i % 2 == 0 else (1, 0)
            for k in order:
                t0 = time.perf_counter()
                runs[k][0]()
                samples[k].append((time.perf_counter() - t0) * 1e3)
    finally:
        for _, pool in runs:
            if pool is not None:
                pool.shutdown()
    return summarize(samples[0], batch, warmup, threads), summarize(samples[1], batch, warmup, threads)
