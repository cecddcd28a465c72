import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    """Direct seven-loop cross-correlation in float64."""
    n, c, h, wd = x.shape
    oc, cpg, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    opg = oc // groups
    out = np.zeros((n, oc, oh, ow))
    for bi in range(n):
        for o in range(oc):
            g = o // opg
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cpg):
                        for p in range(k):
                            for q in range(k):
                                acc += w[o, ci, p, q] * xp[bi, g * cpg + ci, i * stride + p, j * stride + q]
                    out[bi, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
