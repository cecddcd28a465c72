import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobilemamba import tensor as T
from mobilemamba.graph import named_tensors, tensor_owners
from mobilemamba.mrffi import MrffiConfig, SsmConfig, build_mrffi, partition
from mobilemamba.ssm import mamba_mixer
from mobilemamba.wavelet import wte_branch


def _randomize(block, rng):
    """Fill every tensor of a built block with non-trivial values."""
    for name, (leaf, local) in tensor_owners(block).items():
        arr = leaf.tensors()[local]
        if name.endswith("running_var"):
            v = rng.uniform(0.5, 1.5, arr.shape)
        elif name.endswith("a_log"):
            v = rng.normal(0, 0.5, arr.shape)
        elif name.endswith("dt_proj.bias"):
            v = rng.normal(-2, 1, arr.shape)
        else:
            fan = arr.shape[-1] if arr.ndim == 2 else 1
            v = rng.normal(0, 1 / np.sqrt(fan), arr.shape)
        leaf.set_tensor(local, v.astype(np.float32))
    return block


def test_partition_examples():
    assert partition(448, MrffiConfig(0.6, 0.3)) == (268, 134, 46)
    assert partition(37, MrffiConfig(1.0, 0.0)) == (37, 0, 0)
    assert partition(37, MrffiConfig(0.0, 0.0)) == (0, 0, 37)


def test_partition_rounds_local_to_multiple_of_splits():
    assert partition(100, MrffiConfig(0.5, 0.25, n_splits=3)) == (50, 24, 26)


def test_config_errors():
    with pytest.raises(ValueError):
        MrffiConfig(0.7, 0.4)
    with pytest.raises(ValueError):
        MrffiConfig(-0.1, 0.2)
    with pytest.raises(ValueError):
        MrffiConfig(0.5, 0.2, n_splits=0)
    with pytest.raises(ValueError):
        partition(0, MrffiConfig(0.5, 0.2))


@given(c=st.integers(1, 600), xi=st.floats(0, 1), frac=st.floats(0, 1), n=st.integers(1, 4))
def test_partition_conservation(c, xi, frac, n):
    mu = (1 - xi) * frac
    cg, cl, cid = partition(c, MrffiConfig(xi, mu, n))
    assert cg + cl + cid == c
    assert min(cg, cl, cid) >= 0 and cl % n == 0
    assert cg == int(np.floor(xi * c + 1e-9))


def test_mk_kernels_n3():
    blk = build_mrffi("m", 12, MrffiConfig(0.0, 0.5, n_splits=3))
    assert blk.sizes == (0, 6, 6)
    convs = [s.layers[0] for s in blk.mk.splits]
    assert [c.spec.kernel for c in convs] == [3, 5, 7]
    assert all(c.weight.shape[0] == 2 and c.spec.groups == 2 for c in convs)


def test_mk_n1_single_k3():
    blk = build_mrffi("m", 10, MrffiConfig(0.0, 0.5))
    assert len(blk.mk.splits) == 1 and blk.mk.splits[0].layers[0].spec.kernel == 3


def test_zero_weights_branches_give_zero(rng):
    blk = build_mrffi("m", 12, MrffiConfig(0.5, 0.5))
    x = rng.normal(size=(1, 12, 5, 5)).astype(np.float32)
    out = blk(x)
    assert np.all(out[:, 6:] == 0)                      # mk with zero weights, identity BN
    assert np.all(blk.wte(x[:, :6]) == 0)


def test_all_identity_is_bit_exact(rng):
    blk = build_mrffi("m", 9, MrffiConfig(0.0, 0.0))
    x = rng.normal(size=(2, 9, 3, 3)).astype(np.float32)
    assert blk.mamba is None and blk.mk is None
    assert np.array_equal(blk(x), x)


@given(seed=st.integers(0, 2**31), c=st.integers(2, 20), xi=st.floats(0, 1), frac=st.floats(0, 1),
       n=st.integers(1, 3), hw=st.integers(1, 5), wt=st.booleans())
def test_identity_slice_and_shape(seed, c, xi, frac, n, hw, wt):
    r = np.random.default_rng(seed)
    blk = _randomize(build_mrffi("m", c, MrffiConfig(xi, (1 - xi) * frac, n, wt_enabled=wt)), r)
    x = r.normal(size=(1, c, hw, hw + 1)).astype(np.float32)
    out = blk(x)
    cg, cl, cid = blk.sizes
    assert out.shape == x.shape
    assert np.array_equal(out[:, cg + cl:], x[:, cg + cl:])


def test_wt_disabled_is_mamba_only(rng):
    on = _randomize(build_mrffi("m", 8, MrffiConfig(0.5, 0.25)), rng)
    off = build_mrffi("m", 8, MrffiConfig(0.5, 0.25, wt_enabled=False))
    assert off.wte is None
    src = named_tensors(on)
    for name, (leaf, local) in tensor_owners(off).items():
        leaf.set_tensor(local, src[name])
    x = rng.normal(size=(1, 8, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(off(x)[:, :4], mamba_mixer(x[:, :4], on.mamba.params))


def test_compositional_oracle(rng):
    blk = _randomize(build_mrffi("m", 32, MrffiConfig(0.5, 0.25)), rng)
    assert blk.sizes == (16, 8, 8)
    x = rng.normal(size=(1, 32, 8, 8)).astype(np.float32)
    xg, xl, xid = x[:, :16], x[:, 16:24], x[:, 24:]
    wt_conv, wt_bn = blk.wte.body.layers
    g = mamba_mixer(xg, blk.mamba.params) + wte_branch(xg, wt_conv.weight, None, wt_bn.params)
    mk_conv, mk_bn = blk.mk.splits[0].layers
    l = T.batchnorm2d(T.conv2d(xl, mk_conv.weight, None, mk_conv.spec), mk_bn.params)
    ref = np.concatenate([g, l, xid], axis=1)
    np.testing.assert_allclose(blk(x), ref, atol=1e-5)


def test_names_and_leaves():
    blk = build_mrffi("s.b", 20, MrffiConfig(0.5, 0.3, ssm=SsmConfig(d_skip=False)))
    names = set(named_tensors(blk))
    assert "s.b.mamba.in_proj.weight" in names and "s.b.mamba.fwd.a_log" in names
    assert "s.b.mamba.fwd.d_skip" not in names
    assert "s.b.wt.conv.weight" in names and "s.b.mk.k3.bn.running_var" in names
    assert len(named_tensors(blk)) == len(tensor_owners(blk))


def test_channel_mismatch(rng):
    blk = build_mrffi("m", 8, MrffiConfig(0.5, 0.25))
    with pytest.raises(T.ShapeError):
        blk(np.zeros((1, 9, 2, 2), np.float32))
