import numpy as np
import pytest

from mobilemamba.graph import BatchNorm, BlockGraph, Conv2d, GlobalAvgPool, Linear, Sequential
from mobilemamba.metrics import SCAN_MACS_PER_STATE, bench, bench_pair, count_costs, summarize, thread_cap
from mobilemamba.model import build, preset
from mobilemamba.mrffi import MrffiConfig, build_mrffi
from mobilemamba.tensor import BatchNormParams, ConvSpec


def _graph(layers, shape):
    return BlockGraph(Sequential("m", layers), shape)


def test_linear_macs():
    g = _graph([GlobalAvgPool("p"), Linear("fc", np.zeros((8, 4), np.float32), None)], (1, 4, 3, 3))
    rep = count_costs(g)
    fc = [r for r in rep.rows if r.name == "fc"][0]
    assert fc.macs == 32 and fc.params == 32


def test_conv_macs_formula():
    conv = Conv2d("c", np.zeros((6, 2, 3, 3), np.float32), np.zeros(6, np.float32), ConvSpec(3, 2, 1, groups=2))
    rep = count_costs(_graph([conv, BatchNorm("bn", BatchNormParams.identity(6))], (1, 4, 9, 9)))
    row = {r.name: r for r in rep.rows}
    assert row["c"].macs == 6 * 5 * 5 * 2 * 9
    assert row["c"].params == 6 * 2 * 9 + 6
    assert row["bn"].params == 12 and row["bn"].macs == 0


def test_totals_are_row_sums():
    rep = count_costs(build("T2", seed=None))
    assert rep.macs == sum(r.macs for r in rep.rows)
    assert rep.params == sum(r.params for r in rep.rows)
    assert rep.flops_2x == 2 * rep.flops
    assert sum(p for _, p in rep.by_branch().values()) == rep.params
    assert sum(m for m, _ in rep.by_stage().values()) == rep.macs


def test_identity_rows_cost_nothing():
    rep = count_costs(build("T2", seed=None))
    ident = [r for r in rep.rows if r.branch == "identity"]
    assert ident and all(r.macs == 0 and r.params == 0 and r.elementwise == 0 for r in ident)


def test_mamba_scan_constant():
    blk = build_mrffi("m", 10, MrffiConfig(1.0, 0.0, wt_enabled=False))
    rep = count_costs(_graph([blk], (1, 10, 4, 4)))
    scan = [r for r in rep.rows if r.name.endswith("fwd.scan")][0]
    assert scan.macs == 16 * 20 * (SCAN_MACS_PER_STATE * 1 + 1)


def test_params_match_graph_param_count():
    g = build("S6", seed=None)
    rep = count_costs(g)
    bn_stats = sum(l.params.channels * 2 for l in g.leaves() if isinstance(l, BatchNorm))
    assert rep.params == sum(v.size for v in g.state_dict().values()) - bn_stats


def test_batch_invariance():
    g = build("T2", seed=None)
    assert count_costs(g, batch=1).macs == count_costs(g, batch=8).macs


def test_resolution_doubling_quadruples_conv_macs():
    a = count_costs(build("B1", seed=None), resolution=256)
    b = count_costs(build("B1", seed=None), resolution=512)
    ra = {r.name: r for r in a.rows if r.kind == "conv2d"}
    rb = {r.name: r for r in b.rows if r.kind == "conv2d"}
    assert ra.keys() == rb.keys() and ra
    for k in ra:
        assert rb[k].macs == 4 * ra[k].macs, k
    assert a.params == b.params


def test_report_outputs():
    rep = count_costs(build("T2", seed=None))
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("name,kind,stage,branch,macs,params")
    assert csv[-1].startswith("TOTAL") and str(rep.macs) in csv[-1]
    txt = rep.to_text()
    assert "scan = 4 MACs" in txt and "TOTAL" in txt


def test_bench_requires_ten_iters():
    g = _graph([GlobalAvgPool("p")], (1, 2, 2, 2))
    with pytest.raises(ValueError, match=">= 10"):
        bench(g, iters=0)
    with pytest.raises(ValueError, match=">= 10"):
        bench_pair(g, g, iters=9)


def test_bench_result_fields():
    g = _graph([GlobalAvgPool("p")], (1, 2, 4, 4))
    res = bench(g, batch=3, warmup=1, iters=12)
    assert res.measured_iters == 12 == len(res.samples_ms) and res.warmup_iters == 1
    assert res.latency_ms_p50 <= res.latency_ms_p95 + 1e-12
    assert res.images_per_second > 0
    assert "samples_ms" not in res.to_dict()


def test_summarize_statistics():
    res = summarize([10.0] * 9 + [20.0], batch=2, warmup=0, threads=1)
    assert res.latency_ms_mean == 11.0 and res.latency_ms_p50 == 10.0
    assert abs(res.images_per_second - 2 / 0.011) < 1e-9


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("MM_THREADS", "2")
    assert thread_cap(8) == 2
    monkeypatch.delenv("MM_THREADS")
    assert thread_cap(3) == 3


def test_threaded_bench_runs():
    g = _graph([GlobalAvgPool("p")], (1, 2, 4, 4))
    assert bench(g, batch=4, iters=10, threads=2).threads >= 1
