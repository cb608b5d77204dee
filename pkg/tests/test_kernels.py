"""Compiled and numpy kernels agree; both match brute-force enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepp import _pykernels as py

try:
    from sepp import _ckernels as cy
except ImportError:  # extension not built
    cy = None

needs_c = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def events(n, seed, target_share=0.8):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 50, n))
    t[5:8] = t[5]  # ties
    return t, rng.uniform(0, 30, n), rng.uniform(0, 30, n), rng.random(n) < target_share


def brute_pairs(t, x, y, is_child, max_dt, max_r):
    out = set()
    for i in range(len(t)):
        if not is_child[i]:
            continue
        for j in range(len(t)):
            if t[j] < t[i] and t[i] - t[j] <= max_dt and (x[i] - x[j]) ** 2 + (y[i] - y[j]) ** 2 <= max_r ** 2:
                out.add((i, j))
    return out


@pytest.mark.parametrize("max_dt,max_r", [(np.inf, np.inf), (5.0, 4.0), (1.0, np.inf), (np.inf, 3.0)])
def test_find_pairs_brute_force(max_dt, max_r):
    t, x, y, c = events(120, 1)
    ch, pa = py.find_pairs(t, x, y, c, max_dt, max_r)
    assert set(zip(ch.tolist(), pa.tolist())) == brute_pairs(t, x, y, c, max_dt, max_r)
    if cy is not None:
        ch2, pa2 = cy.find_pairs(t, x, y, c, max_dt, max_r)
        assert set(zip(ch2.tolist(), pa2.tolist())) == set(zip(ch.tolist(), pa.tolist()))


def _pairs(seed=2):
    t, x, y, c = events(200, seed)
    ch, pa = py.find_pairs(t, x, y, c, 10.0, 8.0)
    dt = t[ch] - t[pa]
    r2 = (x[ch] - x[pa]) ** 2 + (y[ch] - y[pa]) ** 2
    return t, x, y, c, ch, pa, dt, r2


@needs_c
@pytest.mark.parametrize("delta2", [0.0, 0.5])
def test_trigger_pairs_equivalent(delta2):
    t, x, y, c, ch, pa, dt, r2 = _pairs()
    w = np.random.default_rng(0).uniform(0, 1, len(ch))
    g1, l1 = py.trigger_pairs(ch, dt, r2, w, 2.0, 3.0, delta2, len(t))
    g2, l2 = cy.trigger_pairs(ch, dt, r2, w, 2.0, 3.0, delta2, len(t))
    np.testing.assert_allclose(g1, g2, rtol=1e-13, atol=0)
    np.testing.assert_allclose(l1, l2, rtol=1e-12, atol=1e-300)


@needs_c
def test_pair_responsibilities_equivalent():
    t, x, y, c, ch, pa, dt, r2 = _pairs(3)
    rng = np.random.default_rng(4)
    w = rng.uniform(0, 1, len(t))
    mu = np.where(c, rng.uniform(0.01, 0.1, len(t)), 0.0)
    p1, l1 = py.pair_responsibilities(ch, pa, dt, r2, w, mu, 2.0, 3.0, 0.0)
    p2, l2 = cy.pair_responsibilities(ch, pa, dt, r2, w, mu, 2.0, 3.0, 0.0)
    np.testing.assert_allclose(p1, p2, rtol=1e-12)
    np.testing.assert_allclose(l1, l2, rtol=1e-12)
    # responsibilities plus background share sum to one per child
    tot = np.bincount(ch, weights=p1, minlength=len(t))[c] + mu[c] / l1[c]
    np.testing.assert_allclose(tot, 1.0, rtol=1e-12)


@needs_c
@pytest.mark.parametrize("integrated", [False, True])
@pytest.mark.parametrize("max_r", [np.inf, 6.0])
def test_point_sums_equivalent(integrated, max_r):
    t, x, y, c = events(150, 5)
    rng = np.random.default_rng(6)
    px, py_, pt = rng.uniform(0, 30, 80), rng.uniform(0, 30, 80), rng.uniform(0, 50, 80)
    w = rng.uniform(0, 1, len(t))
    a = py.point_sums(px, py_, pt, x, y, t, w, 2.0, 3.0, 0.0, max_r, 20.0, 10.0, 30.0, integrated)
    b = cy.point_sums(px, py_, pt, x, y, t, w, 2.0, 3.0, 0.0, max_r, 20.0, 10.0, 30.0, integrated)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)


def test_point_sums_integrated_is_time_integral():
    from scipy import integrate
    t, x, y, _ = events(30, 7)
    w = np.full(len(t), 0.5)
    val = py.point_sums(np.array([15.0]), np.array([15.0]), None, x, y, t, w, 2.0, 3.0, 0.0, np.inf, np.inf,
                        20.0, 25.0, True)[0]
    f = lambda s: py.point_sums(np.array([15.0]), np.array([15.0]), np.array([s]), x, y, t, w, 2.0, 3.0, 0.0,
                                np.inf, np.inf, 0.0, 0.0, False)[0]
    ref, _ = integrate.quad(f, 20.0, 25.0, points=t[(t > 20) & (t < 25)], limit=200)
    assert val == pytest.approx(ref, rel=1e-7)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), max_dt=st.floats(0.1, 60), max_r=st.floats(0.1, 45))
def test_find_pairs_property(seed, max_dt, max_r):
    t, x, y, c = events(60, seed)
    ch, pa = py.find_pairs(t, x, y, c, max_dt, max_r)
    assert np.all(t[pa] < t[ch]) and np.all(c[ch])
    assert np.all(t[ch] - t[pa] <= max_dt)
    assert np.all((x[ch] - x[pa]) ** 2 + (y[ch] - y[pa]) ** 2 <= max_r ** 2 * (1 + 1e-12))
    if cy is not None:
        ch2, pa2 = cy.find_pairs(t, x, y, c, max_dt, max_r)
        assert len(ch2) == len(ch)
