import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volgibbs import kernels

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def _nv(mod, n, seed, deriv=True):
    rng = np.random.default_rng(seed)
    args = [rng.uniform(0.001, 0.05, n), rng.choice([0.0, 0.5, 1.0, 0.3], n), rng.uniform(0, 2, n),
            rng.uniform(-0.9, 0.9, n), np.full(n, 0.04), rng.uniform(-0.01, 0.05, n)]
    K = args[5] + rng.choice([0.0, 1e-9, -0.01, 0.005, 0.02, 1e-5], n)
    args += [K, rng.uniform(0.1, 30, n)]
    return mod.normal_vol(*args, 1e-8, deriv)


@needs_cython
def test_normal_vol_backends_agree():
    s1, d1, st1 = _nv(py, 5000, 0)
    s2, d2, st2 = _nv(cy, 5000, 0)
    assert np.array_equal(st1, st2)
    ok = st1 == 0
    assert np.allclose(s1[ok], s2[ok], rtol=1e-10, atol=0)  # near-ATM cancellation
    assert np.allclose(d1[ok], d2[ok], rtol=1e-9, atol=1e-14)
    assert d2 is not None and cy.normal_vol(*[np.ones(1)] * 8, 1e-8, False)[1] is None


@needs_cython
@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 0.1), st.sampled_from([0.0, 0.25, 0.5, 1.0]), st.floats(0.0, 3.0),
       st.floats(-0.95, 0.95), st.floats(-0.03, 0.1), st.floats(-0.03, 0.1), st.floats(0.01, 30))
def test_normal_vol_backends_agree_property(a, be, v, r, F, K, T):
    args = [np.array([x]) for x in (a, be, v, r, 0.04, F, K, T)]
    s1, d1, st1 = py.normal_vol(*args, 1e-8, True)
    s2, d2, st2 = cy.normal_vol(*args, 1e-8, True)
    assert st1[0] == st2[0]
    if st1[0] == 0:
        assert s2[0] == pytest.approx(s1[0], rel=1e-11)
        assert d2[0] == pytest.approx(d1[0], rel=1e-7, abs=1e-12)


def test_bad_shifted_rate_status():
    one = lambda x: np.array([x], dtype=float)
    _, _, st = py.normal_vol(one(0.01), one(0.5), one(0.3), one(0.0), one(0.01), one(0.01),
                             one(-0.02), one(1.0), 1e-8, False)
    assert st[0] == kernels.BAD_SHIFTED_RATE


def _paths(mod, seed=0):
    rng = np.random.default_rng(seed)
    P, S, N = 7, 50, 4
    z1, z2 = rng.standard_normal((P, S)), rng.standard_normal((P, S))
    F0 = np.array([0.01, 0.02, -0.01, 0.0])
    return mod.sabr_paths(F0, np.array([0.01, 0.02, 0.05, 0.03]), np.array([0.5, 0.0, 2.0, 1.0]),
                          np.array([0.3, 0.0, -0.5, 0.6]), 0.5, 0.04, 1e-6, 1 / 50,
                          np.array([50, 10, 50, 0], dtype=np.int64), z1, z2,
                          np.array([0, 10, 25, 50], dtype=np.int64), 0)


@needs_cython
def test_sabr_paths_backends_agree():
    r1, t1 = _paths(py)
    r2, t2 = _paths(cy)
    assert np.allclose(r1, r2, rtol=1e-13, atol=1e-16)
    assert np.allclose(t1, t2, rtol=1e-13, atol=1e-16)


def test_sabr_paths_freeze_and_record():
    rec, track = _paths(py)
    assert np.array_equal(rec[:, 0], np.broadcast_to([0.01, 0.02, -0.01, 0.0], (7, 4)))
    assert np.array_equal(rec[:, 1, 1], rec[:, 3, 1])  # node 1 stops after 10 steps
    assert np.all(rec[:, :, 3] == 0.0)  # never active
    assert np.array_equal(track[:, [0, 10, 25, 50]], rec[:, :, 0])
    assert np.all(rec + 0.04 >= 1e-6 - 1e-18)
