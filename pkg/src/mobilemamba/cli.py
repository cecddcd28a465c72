"""Command-line entry point: ``mobilemamba <subcommand> ...``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import weights as W
from .fusion import FusionError, fuse_model
from .graph import BlockGraph
from .metrics import bench, bench_pair, count_costs, thread_cap
from .model import PRESETS, build, preset
from .mrffi import SsmConfig
from .tensor import F32, ShapeError
from .verify import FAULTS, run_all

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=F32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=F32)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class CliConfig:
    subcommand: str
    variant: str | None = None
    weights: str | None = None
    input: str | None = None
    output: str | None = None
    batch: int = 1
    threads: int = 1
    seed: int = 0
    euler_b: bool = False
    wt_enabled: bool = True
    symmetric_lp: bool = False
    fuse: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self) -> "CliConfig":
        if self.variant is not None:
            try:
                preset(self.variant)
            except KeyError as exc:
                raise UsageError(exc.args[0]) from None
        if self.batch < 1:
            raise UsageError(f"--batch must be >= 1, got {self.batch}")
        if self.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {self.threads}")
        if self.seed < 0:
            raise UsageError(f"--seed must be >= 0, got {self.seed}")
        return self

    def model_config(self):
        cfg = preset(self.variant)
        return cfg.replace(
            ssm=SsmConfig(euler_b=self.euler_b),
            wt_enabled=self.wt_enabled,
            symmetric_lp=self.symmetric_lp,
        )


def load_image(path: str | Path, resolution: int) -> np.ndarray:
    """Read raw planar little-endian f32 ``C x H x W`` image(s) in [0, 1] and normalize."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {p}")
    raw = np.fromfile(p, dtype="<f4").astype(F32)
    per = 3 * resolution * resolution
    if raw.size == 0 or raw.size % per:
        raise DataError(f"{p} holds {raw.size} floats, not a multiple of 3x{resolution}x{resolution}")
    x = raw.reshape(-1, 3, resolution, resolution)
    return normalize_image(x)


def normalize_image(x: np.ndarray) -> np.ndarray:
    return ((x - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]).astype(F32)


def random_image(batch: int, resolution: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return normalize_image(rng.random((batch, 3, resolution, resolution), dtype=F32))


def _model(cfg: CliConfig) -> BlockGraph:
    g = build(cfg.model_config(), seed=cfg.seed)
    if cfg.weights:
        try:
            W.load_weights(cfg.weights, g)
        except FileNotFoundError:
            raise DataError(f"weight file not found: {cfg.weights}") from None
    return g


def _maybe_fuse(g: BlockGraph, cfg: CliConfig) -> BlockGraph:
    return fuse_model(g)[0] if cfg.fuse else g


def cmd_build(cfg: CliConfig, out) -> int:
    g = _model(cfg)
    width = max(len(info.name) for info in g.layers)
    for info in g.layers:
        print(f"{info.name:<{width}}  {info.kind:<10} {str(info.in_shape):<22} -> {info.out_shape}", file=out)
    print(f"layers: {g.layer_count()}  params: {g.n_params():,}  output: {g.output_shape}", file=out)
    return EXIT_OK


def cmd_infer(cfg: CliConfig, out) -> int:
    g = _maybe_fuse(_model(cfg), cfg)
    res = g.input_shape[-1]
    x = load_image(cfg.input, res) if cfg.input else random_image(cfg.batch, res, cfg.seed)
    logits = g(x)
    top = int(cfg.extra.get("top", 5))
    for i, row in enumerate(logits):
        idx = np.argsort(-row, kind="stable")[:top]
        pairs = ", ".join(f"{int(k)}:{row[k]:.4e}" for k in idx)
        print(f"image {i}: top{top} [{pairs}]", file=out)
    print(f"logits: shape {logits.shape} mean {float(logits.mean()):.8f} std {float(logits.std()):.8f}", file=out)
    return EXIT_OK


def cmd_costs(cfg: CliConfig, out) -> int:
    g = _maybe_fuse(_model(cfg), cfg)
    rep = count_costs(g, cfg.extra.get("resolution"))
    if cfg.extra.get("csv"):
        print(rep.to_csv(), end="", file=out)
    elif cfg.subcommand == "params":
        print(f"{cfg.variant}: {rep.params:,} params ({rep.params / 1e6:.3f} M)", file=out)
        for k, (_, p) in sorted(rep.by_branch().items()):
            print(f"  {k:<11} {p:>12,}", file=out)
    else:
        print(rep.to_text(rows=cfg.extra.get("rows", False)), file=out)
    return EXIT_OK


def cmd_bench(cfg: CliConfig, out) -> int:
    g = _model(cfg)
    threads = thread_cap(cfg.threads)
    kw = dict(batch=cfg.batch, warmup=cfg.extra["warmup"], iters=cfg.extra["iters"], threads=threads, seed=cfg.seed)
    if cfg.extra.get("compare_fused"):
        unfused_res, fused_res = bench_pair(g, fuse_model(g)[0], **kw)
        if cfg.extra.get("json"):
            print(json.dumps({"unfused": unfused_res.to_dict(), "fused": fused_res.to_dict()}, indent=2), file=out)
        else:
            print("unfused\n" + unfused_res.to_text(), file=out)
            print("fused\n" + fused_res.to_text(), file=out)
            ratio = fused_res.images_per_second / unfused_res.images_per_second
            print(f"fused/unfused images/s: {ratio:.3f}", file=out)
        return EXIT_OK
    res = bench(_maybe_fuse(g, cfg), **kw)
    print(json.dumps(res.to_dict(), indent=2) if cfg.extra.get("json") else res.to_text(), file=out)
    return EXIT_OK


def cmd_fuse(cfg: CliConfig, out) -> int:
    g = build(cfg.model_config(), seed=cfg.seed, bn_stats="random" if not cfg.weights else "identity")
    if cfg.weights:
        W.load_weights(cfg.weights, g)
    probe = random_image(cfg.batch, g.input_shape[-1], cfg.seed)
    try:
        fused, rep = fuse_model(g, probe=probe)
    except FusionError as exc:
        print(f"fusion failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    if cfg.output:
        W.save_weights(fused, cfg.output)
    print(json.dumps(rep.to_dict(), indent=2) if cfg.extra.get("json") else rep.to_text(), file=out)
    return EXIT_OK


def cmd_verify(cfg: CliConfig, out) -> int:
    results = run_all(tuple(cfg.extra.get("faults") or ()), quick=cfg.extra.get("quick", False))
    ok = all(r.passed for r in results)
    if cfg.extra.get("json"):
        payload = {"passed": ok, "checks": [r.__dict__ for r in results]}
        print(json.dumps(payload, indent=2), file=out)
    else:
        for r in results:
            print(r.line(), file=out)
        print(f"{sum(r.passed for r in results)}/{len(results)} checks passed", file=out)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_export(cfg: CliConfig, out) -> int:
    g = _maybe_fuse(_model(cfg), cfg)
    W.save_weights(g, cfg.output)
    print(f"wrote {len(g.state_dict())} tensors ({g.n_params():,} params) to {cfg.output}", file=out)
    return EXIT_OK


def cmd_import(cfg: CliConfig, out) -> int:
    """Validate a weight file (MMWS or numpy .npz) against a variant and write MMWS."""
    src = Path(cfg.input)
    if not src.is_file():
        raise DataError(f"weight file not found: {src}")
    if src.suffix == ".npz":
        with np.load(src) as z:
            tensors = {k: z[k] for k in z.files}
    else:
        tensors = W.load_tensors(src)
    g = _maybe_fuse(build(cfg.model_config(), seed=None), cfg)
    W.assign_tensors(g, tensors)
    if cfg.output:
        W.save_weights(g, cfg.output)
    print(f"{src}: {len(tensors)} tensors match {cfg.variant}"
          + (f"; wrote {cfg.output}" if cfg.output else ""), file=out)
    return EXIT_OK


COMMANDS = {
    "build": cmd_build, "infer": cmd_infer, "flops": cmd_costs, "params": cmd_costs,
    "bench": cmd_bench, "fuse": cmd_fuse, "verify": cmd_verify,
    "export-weights": cmd_export, "import-weights": cmd_import,
}


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobilemamba", description="MobileMamba inference engine and tooling")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def model_cmd(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("variant", help=f"one of {', '.join(PRESETS)}")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--weights", help="MMWS weight file (default: seeded random init)")
        p.add_argument("--euler-b", action="store_true", help="Euler input discretization instead of exact ZOH")
        p.add_argument("--no-wt", action="store_true", help="drop the wavelet branch")
        p.add_argument("--symmetric-lp", action="store_true", help="add a post-MRFFI depthwise conv")
        p.add_argument("--fuse", action="store_true", help="fold batch norm before running")
        return p

    model_cmd("build", "build a variant and print its layer table")
    p = model_cmd("infer", "run a forward pass and print top-k classes")
    p.add_argument("--input", help="raw planar f32 image file (C x H x W, values in [0, 1])")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--top", type=int, default=5)
    for name in ("flops", "params"):
        p = model_cmd(name, f"static {name} report")
        p.add_argument("--resolution", type=int)
        p.add_argument("--csv", action="store_true")
        p.add_argument("--rows", action="store_true", help="include per-layer rows")
    p = model_cmd("bench", "wall-clock throughput")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--compare-fused", action="store_true", help="interleaved fused vs unfused timing")
    p.add_argument("--json", action="store_true")
    p = model_cmd("fuse", "fold batch norm and report")
    p.add_argument("--batch", type=int, default=2, help="probe batch size")
    p.add_argument("--out", dest="output", help="write fused weights (MMWS)")
    p.add_argument("--json", action="store_true")
    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--json", action="store_true")
    p.add_argument("--quick", action="store_true", help="fewer random cases")
    p.add_argument("--fault", dest="faults", action="append", choices=FAULTS, help="inject a fault (negative control)")
    p = model_cmd("export-weights", "write weights to an MMWS file")
    p.add_argument("--out", dest="output", required=True)
    p = model_cmd("import-weights", "validate MMWS/.npz weights against a variant")
    p.add_argument("src", help="weight file to import")
    p.add_argument("--out", dest="output", help="write validated weights as MMWS")
    return parser


def parse_config(argv=None) -> CliConfig:
    ns = vars(make_parser().parse_args(argv))
    known = {f for f in CliConfig.__dataclass_fields__ if f != "extra"}
    cfg = CliConfig(subcommand=ns.pop("subcommand"))
    cfg.euler_b = ns.pop("euler_b", False)
    cfg.wt_enabled = not ns.pop("no_wt", False)
    cfg.symmetric_lp = ns.pop("symmetric_lp", False)
    if "src" in ns:
        cfg.input = ns.pop("src")
    for key in list(ns):
        if key in known:
            setattr(cfg, key, ns.pop(key))
    cfg.extra = ns
    return cfg.validate()


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"mobilemamba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[cfg.subcommand](cfg, out)
    except UsageError as exc:
        print(f"mobilemamba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, W.WeightFormatError, ShapeError, FileNotFoundError) as exc:
        print(f"mobilemamba: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"mobilemamba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
