"""Self-check runner: executes the engine's invariants and reports pass/fail."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .fusion import fuse_model
from .metrics import count_costs
from .model import PRESETS, build, forward_features
from .mrffi import MrffiConfig, partition
from .ssm import (
    LtiSsm, ScanDirection, SelectiveSsmParams, scan_convolutional, scan_recurrent, selective_scan,
    selective_scan_naive, zoh,
)
from .wavelet import HAAR, iwt2d, pad_even, wt2d

# published costs per preset: (MFLOPs, M params)
REFERENCE_COSTS = {
    "T2": (255, 8.8), "T4": (413, 14.2), "S6": (652, 15.0),
    "B1": (1080, 17.1), "B2": (2427, 17.1), "B4": (4313, 17.1),
}
FLOPS_TOL = 0.15
PARAMS_TOL = 0.10

FAULTS = ("perturb-abar", "perturb-wavelet", "perturb-fusion")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_lti(rng: np.random.Generator) -> LtiSsm:
    return LtiSsm.from_log(rng.uniform(-3, 1.5), rng.normal(), rng.normal(), math.exp(rng.uniform(-5, 0)))


def scan_rel_err(p: LtiSsm, x: np.ndarray, abar_scale: float = 1.0) -> float:
    """Normwise relative error between convolutional and recurrent scans."""
    a_bar, b_bar = zoh(p.a, p.b, p.delta)
    ref = scan_recurrent(a_bar * np.float32(abar_scale), b_bar, p.c_out, x)
    got = scan_convolutional(p, x)
    scale = max(float(np.max(np.abs(ref))), 1e-30)
    return float(np.max(np.abs(got.astype(np.float64) - ref))) / scale


def random_selective_params(rng: np.random.Generator, ci: int, d_state: int = 1):
    """Fan-in scaled projections, so outputs stay O(1) for unit-variance tokens."""
    fan = 1.0 / math.sqrt(ci)
    return SelectiveSsmParams(
        a_log=rng.normal(0, 0.5, (ci, d_state)),
        dt_weight=rng.normal(0, fan, (ci, ci)),
        dt_bias=rng.normal(-2, 1, ci),
        b_weight=rng.normal(0, fan, (d_state, ci)),
        c_weight=rng.normal(0, fan, (d_state, ci)),
        d_skip=rng.normal(0, 1, ci),
    )


def check_scan_equivalence(n_cases: int = 1000, seed: int = 0, fault: bool = False) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        p = random_lti(rng)
        L = int(rng.integers(1, 129))
        x = rng.normal(size=L).astype(np.float32)
        worst = max(worst, scan_rel_err(p, x, 1.01 if fault else 1.0))
    return worst <= 1e-4, f"{n_cases} LTI cases, max rel err {worst:.2e} (tol 1e-4)"


def check_selective_oracle(n_cases: int = 200, seed: int = 1) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_cases):
        L = int(rng.integers(1, 65))
        ci = int(rng.integers(1, 17))
        p = random_selective_params(rng, ci)
        x = rng.normal(size=(L, ci)).astype(np.float32)
        d = ScanDirection.FORWARD if i % 2 == 0 else ScanDirection.BACKWARD
        worst = max(worst, float(np.max(np.abs(selective_scan(x, p, d) - selective_scan_naive(x, p, d)))))
    return worst <= 1e-5, f"{n_cases} cases, max abs err {worst:.2e} (tol 1e-5)"


def check_wavelet(n_cases: int = 500, seed: int = 2, fault: bool = False) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    sizes = [(3, 3), (7, 7)] + [tuple(rng.integers(1, 17, 2)) for _ in range(n_cases - 2)]
    worst_rec = worst_energy = 0.0
    for h, w in sizes:
        x = rng.normal(size=(1, int(rng.integers(1, 5)), int(h), int(w))).astype(np.float32)
        y = wt2d(x)
        if fault:
            y = y * np.float32(1.001)
        r = iwt2d(y, size=(int(h), int(w)))
        worst_rec = max(worst_rec, float(np.max(np.abs(r - x))))
        xp, _ = pad_even(x)
        e_in = float(np.linalg.norm(xp.astype(np.float64)))
        e_out = float(np.linalg.norm(y.astype(np.float64)))
        worst_energy = max(worst_energy, abs(e_out - e_in) / max(e_in, 1e-30))
    ok = worst_rec <= 1e-5 and worst_energy <= 1e-4
    return ok, (f"{len(sizes)} tensors, max reconstruction err {worst_rec:.2e} (tol 1e-5), "
                f"max energy rel err {worst_energy:.2e} (tol 1e-4)")


def check_filters() -> tuple[bool, str]:
    gram = HAAR.gram()
    ok = np.array_equal(gram, np.eye(4))
    return ok, f"gram matrix {'==' if ok else '!='} I4 exactly"


def check_fusion(variants=("T2",), n_images: int = 2, seed: int = 3, fault: bool = False) -> tuple[bool, str]:
    worst = 0.0
    shrink = True
    for v in variants:
        g = build(v, seed=seed, bn_stats="random")
        fused, rep = fuse_model(g)
        if fault:
            head = fused.leaves()[-1]
            head.bias = head.bias + np.float32(1e-2)
        x = np.random.default_rng(seed).random((n_images,) + g.input_shape[1:], dtype=np.float32)
        worst = max(worst, float(np.max(np.abs(g(x).astype(np.float64) - fused(x)))))
        shrink &= rep.layers_after < rep.layers_before
    return worst <= 1e-4 and shrink, (f"{','.join(variants)}: max |fused - unfused| {worst:.2e} (tol 1e-4), "
                                      f"layer count {'shrinks' if shrink else 'does not shrink'}")


def check_split_concat(n_cases: int = 200, seed: int = 4) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        c = int(rng.integers(1, 33))
        cuts = np.sort(rng.integers(0, c + 1, int(rng.integers(0, 4))))
        sizes = np.diff(np.concatenate([[0], cuts, [c]])).tolist()
        sizes = [s for s in sizes if s > 0]
        x = rng.normal(size=(2, c, 3, 2)).astype(np.float32)
        if not np.array_equal(T.concat_channels(T.split_channels(x, sizes)), x):
            return False, f"round trip broke for c={c}, sizes={sizes}"
    return True, f"{n_cases} random partitions round-trip bit-exactly"


def check_partition(n_cases: int = 1000, seed: int = 5) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        xi = float(rng.uniform(0, 1))
        mu = float(rng.uniform(0, 1 - xi))
        n = int(rng.integers(1, 4))
        c = int(rng.integers(1, 513))
        cg, cl, cid = partition(c, MrffiConfig(xi, mu, n))
        if cg + cl + cid != c or min(cg, cl, cid) < 0 or cl % n:
            return False, f"bad partition {cg, cl, cid} for c={c}, xi={xi}, mu={mu}, n={n}"
    return True, f"{n_cases} random configs conserve channels"


def check_shapes() -> tuple[bool, str]:
    details = []
    for name, cfg in PRESETS.items():
        g = build(cfg, seed=None)
        details.append(f"{name}->{g.output_shape}")
    g = build("T2", seed=0)
    x = np.zeros((1, 3, 192, 192), np.float32)
    feats = forward_features(g, x)
    maps = [feats[f"stage{s}"].shape[-1] for s in (1, 2, 3)]
    ok = maps == [12, 6, 3] and feats["head"].shape == (1, 1000)
    return ok, f"all presets build; T2 stage maps {maps} (expect [12, 6, 3])"


def check_costs() -> tuple[bool, str]:
    ok = True
    parts = []
    for name, (f_ref, p_ref) in REFERENCE_COSTS.items():
        rep = count_costs(build(name, seed=None))
        df = rep.flops / 1e6 / f_ref - 1
        dp = rep.params / 1e6 / p_ref - 1
        ok &= abs(df) <= FLOPS_TOL and abs(dp) <= PARAMS_TOL
        parts.append(f"{name} F{df:+.1%} P{dp:+.1%}")
    return ok, "; ".join(parts)


def run_all(faults: tuple[str, ...] = (), quick: bool = False) -> list[CheckResult]:
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown fault(s) {sorted(unknown)}; valid: {', '.join(FAULTS)}")
    checks = [
        ("wavelet_reconstruction", lambda: check_wavelet(100 if quick else 500, fault="perturb-wavelet" in faults)),
        ("filter_orthonormality", check_filters),
        ("scan_kernel_equivalence", lambda: check_scan_equivalence(200 if quick else 1000, fault="perturb-abar" in faults)),
        ("selective_scan_oracle", lambda: check_selective_oracle(40 if quick else 200)),
        ("fusion_equivalence", lambda: check_fusion(fault="perturb-fusion" in faults)),
        ("split_concat_roundtrip", check_split_concat),
        ("partition_conservation", check_partition),
        ("variant_shapes", check_shapes),
        ("cost_tolerances", check_costs),
    ]
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"error: {exc!r}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
