import io
import json

import numpy as np
import pytest

from mobilemamba import weights as W
from mobilemamba.cli import IMAGENET_MEAN, IMAGENET_STD, load_image, main, parse_config
from mobilemamba.model import build


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_build_lists_layers():
    code, out = run("build", "T2")
    assert code == 0
    assert "patch_embed.0.conv" in out and "head.fc" in out and "layers: 85" in out


def test_unknown_variant_is_usage_error(capsys):
    assert run("build", "X9")[0] == 1
    assert "T2, T4, S6, B1, B2, B4" in capsys.readouterr().err


def test_bad_args_exit_1():
    with pytest.raises(SystemExit) as e:
        main(["nosuch"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["infer", "T2", "--batch", "abc"])
    assert e.value.code == 1
    assert run("infer", "T2", "--batch", "0")[0] == 1


def test_config_flags():
    cfg = parse_config(["infer", "S6", "--euler-b", "--no-wt", "--symmetric-lp", "--fuse", "--seed", "4", "--batch", "2"])
    assert (cfg.variant, cfg.euler_b, cfg.wt_enabled, cfg.symmetric_lp, cfg.fuse, cfg.seed, cfg.batch) == \
        ("S6", True, False, True, True, 4, 2)
    mc = cfg.model_config()
    assert mc.ssm.euler_b and not mc.wt_enabled and mc.symmetric_lp


def test_infer_deterministic():
    a = run("infer", "T2", "--seed", "3", "--batch", "2")
    b = run("infer", "T2", "--seed", "3", "--batch", "2")
    assert a == b and a[0] == 0
    assert a[1].count("top5") == 2


def test_infer_missing_file_is_data_error(tmp_path):
    assert run("infer", "T2", "--input", str(tmp_path / "none.f32"))[0] == 2


def test_infer_from_file_and_normalization(tmp_path):
    img = np.random.default_rng(0).random((3, 192, 192), dtype=np.float32)
    path = tmp_path / "img.f32"
    img.astype("<f4").tofile(path)
    x = load_image(path, 192)
    np.testing.assert_allclose(x[0], (img - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None], rtol=1e-6)
    code, out = run("infer", "T2", "--input", str(path))
    assert code == 0 and "image 0" in out
    (tmp_path / "bad.f32").write_bytes(b"\0" * 12)
    assert run("infer", "T2", "--input", str(tmp_path / "bad.f32"))[0] == 2


def test_infer_fused_close_to_unfused(tmp_path):
    g = build("T2", seed=0, bn_stats="random")
    wpath = tmp_path / "w.mmws"
    W.save_weights(g, wpath)
    img = np.random.default_rng(1).random((3, 192, 192), dtype=np.float32)
    ipath = tmp_path / "i.f32"
    img.tofile(ipath)
    x = load_image(ipath, 192)
    from mobilemamba.fusion import fuse_model
    assert np.max(np.abs(fuse_model(g)[0](x) - g(x))) <= 1e-4
    code_u, out_u = run("infer", "T2", "--weights", str(wpath), "--input", str(ipath), "--top", "3")
    code_f, out_f = run("infer", "T2", "--weights", str(wpath), "--input", str(ipath), "--top", "3", "--fuse")
    assert code_u == code_f == 0
    top_u = out_u.split("[")[1].split("]")[0]
    top_f = out_f.split("[")[1].split("]")[0]
    assert [p.split(":")[0] for p in top_u.split(", ")] == [p.split(":")[0] for p in top_f.split(", ")]


def test_flops_params_csv():
    code, out = run("flops", "T2", "--csv")
    assert code == 0 and out.startswith("name,kind") and "TOTAL" in out
    code, out = run("params", "B1")
    assert code == 0 and "M)" in out and "mamba" in out
    code, out = run("flops", "T2")
    assert "convention" in out and "MFLOPs" in out


def test_fuse_command(tmp_path):
    out_path = tmp_path / "f.mmws"
    code, out = run("fuse", "T2", "--json", "--out", str(out_path))
    rep = json.loads(out)
    assert code == 0 and rep["layers_after"] < rep["layers_before"] and rep["max_abs_divergence"] <= 1e-4
    assert "head.bn.weight" in W.load_tensors(out_path)


def test_export_import_roundtrip(tmp_path):
    p = tmp_path / "t2.mmws"
    assert run("export-weights", "T2", "--seed", "5", "--out", str(p))[0] == 0
    assert run("import-weights", "T2", str(p))[0] == 0
    assert run("import-weights", "S6", str(p))[0] == 2
    npz = tmp_path / "t2.npz"
    np.savez(npz, **W.load_tensors(p))
    out = tmp_path / "back.mmws"
    assert run("import-weights", "T2", str(npz), "--out", str(out))[0] == 0
    assert W.load_tensors(out).keys() == W.load_tensors(p).keys()
    assert run("import-weights", "T2", str(tmp_path / "missing.mmws"))[0] == 2


def test_bench_command():
    code, out = run("bench", "T2", "--iters", "10", "--warmup", "1", "--json")
    res = json.loads(out)
    assert code == 0 and res["measured_iters"] == 10 and res["images_per_second"] > 0
    assert run("bench", "T2", "--iters", "3")[0] == 1


def test_verify_quick_json():
    code, out = run("verify", "--quick", "--json")
    res = json.loads(out)
    assert code == 0 and res["passed"] and len(res["checks"]) == 9


def test_verify_fault_exit_3():
    code, out = run("verify", "--quick", "--fault", "perturb-abar")
    assert code == 3
    assert "[FAIL] scan_kernel_equivalence" in out
