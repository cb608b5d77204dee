import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sepp.evaluate import (cell_integrated_intensity, delta_aic, fit_poisson_baseline, hit_rate, hotspot_cells,
                           information_gain, max_pai_cell, n_free_params, pai, rolling_hit_rates)
from sepp.model import log_likelihood
from sepp.residuals import integrated_intensity


def brute_hit_rate(scores, areas, test_cells, fraction):
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    chosen, used = set(), 0.0
    for k in order:
        if used + areas[k] > fraction * sum(areas) * (1 + 1e-12):
            break
        chosen.add(k)
        used += areas[k]
    return sum(c in chosen for c in test_cells) / len(test_cells)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0, 1))
def test_hit_rate_matches_brute_force(seed, frac):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    scores = rng.integers(0, 5, n).astype(float)
    areas = rng.uniform(0.5, 2.0, n)
    cells = rng.integers(0, n, 25)
    assert hit_rate(scores, areas, cells, frac) == pytest.approx(brute_hit_rate(scores, areas, cells, frac))


def test_hotspot_extremes():
    areas = np.ones(4)
    assert len(hotspot_cells([1, 2, 3, 4], areas, 0.0)) == 0
    assert sorted(hotspot_cells([1, 2, 3, 4], areas, 1.0)) == [0, 1, 2, 3]
    assert list(hotspot_cells([1, 2, 3, 4], areas, 0.5)) == [3, 2]
    with pytest.raises(ValueError):
        hotspot_cells([1.0], [1.0], 1.5)


def test_pai_and_degenerate_single_cell():
    assert pai(0.5, 0.1) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        pai(0.5, 0.0)
    # one event in a tiny cell beats many events in a large one
    counts = np.array([50.0, 1.0, 0.0])
    areas = np.array([100.0, 0.01, 1.0])
    k, value = max_pai_cell(counts, areas)
    assert k == 1 and value == pytest.approx((1 / 51) / (0.01 / 101.01))


@settings(max_examples=100, deadline=None)
@given(l1=st.floats(-1e5, 1e5), l0=st.floats(-1e5, 1e5), k1=st.integers(1, 20), k0=st.integers(1, 20),
       T=st.floats(1.0, 1e4))
def test_aic_information_gain_identity(l1, l0, k1, k0, T):
    lhs = delta_aic(l1, k1, l0, k0) / (2 * T) + information_gain(l1, l0, T)
    assert lhs == pytest.approx((k1 - k0) / T, abs=1e-12 * max(1.0, abs(l1), abs(l0)) / T)


def test_self_information_gain_zero(cov, params, catalog):
    ll = log_likelihood(params, cov, catalog)
    assert information_gain(ll, ll, catalog.T) == 0.0
    assert n_free_params(cov, catalog) == cov.p + 2 + 2


def test_poisson_baseline_k_and_loglik(cov, catalog):
    base = fit_poisson_baseline(catalog, cov)
    assert base.k == 1
    n = int(np.sum(catalog.is_target))
    area = cov.areas.sum()
    # intercept-only MLE is n / (|X| T)
    assert np.exp(base.params.beta[0]) == pytest.approx(n / (area * catalog.T), rel=1e-8)
    assert base.loglik == pytest.approx(n * np.log(n / (area * catalog.T)) - n, rel=1e-8)


def test_cell_integrated_intensity_quadrature(cov, params, catalog):
    t1, t2 = 30.0, 36.0
    est = cell_integrated_intensity(params, cov, catalog, t1, t2, n_mc=4000, seed=3)
    k = int(np.argmax(est - cov.areas * np.exp(cov.log_rates(params.beta)) * (t2 - t1)))
    poly = cov.cell_polygon(k)
    x0, y0, x1, y1 = poly.bounds
    ref, _ = integrate.dblquad(lambda y, x: integrated_intensity(params, cov, catalog, (t1, t2), np.array([x, y])),
                               x0, x1, y0, y1, epsabs=1e-6, epsrel=1e-5)
    assert est[k] == pytest.approx(ref, rel=0.02)


def test_rolling_hit_rates_sanity(cov, params, catalog):
    out = rolling_hit_rates(params, cov, catalog, [0.0, 0.2, 1.0], step=5.0)
    assert out["hit_rate"][0] == 0.0 and out["hit_rate"][2] == 1.0
    assert 0.0 <= out["hit_rate"][1] <= 1.0
    assert out["area_fraction"][1] <= 0.2 + 1e-12
    assert out["n_test"] == int(np.sum(catalog.is_target))
