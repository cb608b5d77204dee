import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from sepp.em import (FitConfig, e_step, fit, m_step_omega, m_step_sigma2, m_step_theta, piecewise_poisson_beta)
from sepp.model import InteriorSpec, ModelParams, build_pairs, score
from sepp.simulate import SimConfig, simulate

from conftest import make_catalog, small_cov


def test_responsibilities_brute_force(cov, params, catalog):
    resp = e_step(params, cov, catalog)
    w = params.theta_for(catalog.marks)[catalog.codes]
    for row, i in enumerate(resp.target_index[:40]):
        mu = np.exp(cov.log_rates(params.beta)[catalog.cells(cov)[i]])
        prior = np.flatnonzero(catalog.t < catalog.t[i])
        g = w[prior] / params.omega * np.exp(-(catalog.t[i] - catalog.t[prior]) / params.omega) * np.exp(
            -((catalog.x[i] - catalog.x[prior]) ** 2 + (catalog.y[i] - catalog.y[prior]) ** 2)
            / (2 * params.sigma2)) / (2 * np.pi * params.sigma2)
        lam = mu + g.sum()
        assert resp.lam[row] == pytest.approx(lam, rel=1e-12)
        assert resp.p_background[row] == pytest.approx(mu / lam, rel=1e-12)
        sel = resp.pairs.child == i
        got = dict(zip(resp.pairs.parent[sel].tolist(), resp.p_pair[sel]))
        for j, gj in zip(prior, g):
            assert got.get(int(j), 0.0) == pytest.approx(gj / lam, rel=1e-10, abs=1e-300)


def test_theta_zero_gives_all_background(cov, catalog):
    p = ModelParams([-6.0, 0.4, -0.3], {"target": 0.0, "alarm": 0.0}, 3.0, 9.0)
    resp = e_step(p, cov, catalog)
    np.testing.assert_allclose(resp.p_background, 1.0)


def test_omega_update_maximises_surrogate(cov, params, catalog):
    resp = e_step(params, cov, catalog)
    interior = InteriorSpec(cov.domain.erode(5.0), 50.0)
    om = m_step_omega(resp, catalog, interior, params)
    j0 = interior.contains(catalog)
    par_in = j0[resp.pairs.parent]
    W = resp.p_pair[par_in].sum()
    S = resp.p_pair[par_in] @ resp.pairs.dt[par_in]
    a = catalog.T - catalog.t[j0]
    th = params.theta_for(catalog.marks)[catalog.codes][j0]
    obj = lambda o: -(-W * np.log(o) - S / o - np.sum(th * (1 - np.exp(-a / o))))
    ref = minimize_scalar(obj, bounds=(0.01, 100), method="bounded", options={"xatol": 1e-10}).x
    assert om == pytest.approx(ref, rel=1e-6)
    # without params the update is the weighted mean lag
    assert m_step_omega(resp, catalog, interior) == pytest.approx(S / W, rel=1e-12)


def test_sigma2_update_with_delta_maximises_surrogate(cov, catalog):
    p = ModelParams([-6.0, 0.4, -0.3], {"target": 0.4, "alarm": 0.2}, 3.0, 9.0, delta=1.0)
    resp = e_step(p, cov, catalog)
    s2 = m_step_sigma2(resp, catalog, None, p)
    W = resp.p_pair.sum()
    R = resp.p_pair @ resp.pairs.r2
    w = p.theta_for(catalog.marks)[catalog.codes]
    C = np.sum(w * (1 - np.exp(-(catalog.T - catalog.t) / p.omega)))
    obj = lambda s: -(-W * np.log(s) - R / (2 * s) - C * np.exp(-1.0 / (2 * s)))
    ref = minimize_scalar(obj, bounds=(0.1, 200), method="bounded", options={"xatol": 1e-10}).x
    assert s2 == pytest.approx(ref, rel=1e-6)
    assert m_step_sigma2(resp, catalog, None) == pytest.approx(R / (2 * W), rel=1e-12)


def test_theta_update_long_window_limit():
    # all parents end far before T so the survival factor is one
    cov = small_cov()
    p = ModelParams([-6.0, 0.0, 0.0], {"target": 0.5}, 0.01, 4.0)
    cat = make_catalog(cov, [[1.0, 10, 10], [1.001, 10.5, 10], [2.0, 30, 30], [3.0, 40, 5]], 100.0)
    resp = e_step(p, cov, cat)
    th = m_step_theta(resp, cat, p)
    assert th["target"] == pytest.approx(resp.p_pair.sum() / cat.n, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(theta=st.floats(0.0, 0.9), omega=st.floats(0.5, 10), sigma2=st.floats(1, 50))
def test_responsibilities_sum_to_one(theta, omega, sigma2):
    cov = small_cov()
    p = ModelParams([-6.0, 0.2, 0.1], {"target": theta}, omega, sigma2)
    cat = simulate(SimConfig(cov, ModelParams([-6.0, 0.2, 0.1], {"target": 0.4}, 2.0, 9.0), 40.0, seed=1)).catalog
    resp = e_step(p, cov, cat)
    tot = resp.row_sums(cat.n)
    np.testing.assert_allclose(tot, 1.0, rtol=1e-12)
    assert np.all(resp.p_pair >= 0)


def test_piecewise_poisson_matches_statsmodels(cov, catalog):
    ours = piecewise_poisson_beta(cov, catalog)
    y = np.bincount(catalog.cells(cov)[catalog.is_target], minlength=cov.ncells)
    ref = sm.GLM(y, cov.design, family=sm.families.Poisson(), exposure=cov.areas * catalog.T).fit(tol=1e-13)
    np.testing.assert_allclose(ours.beta, ref.params, rtol=1e-7)


@pytest.fixture(scope="module")
def sim_data():
    cov = small_cov(n=12, d=5.0, seed=3)
    truth = ModelParams([-5.5, 0.5, -0.4], {"target": 0.5}, 2.0, 6.0)
    sim = simulate(SimConfig(cov, truth, 120.0, seed=9))
    return cov, truth, sim.catalog


def test_uncorrected_fit_is_stationary_point(sim_data):
    cov, truth, cat = sim_data
    res = fit(cat, cov, FitConfig(interior="full", ll_tol=1e-12, param_tol=1e-10, max_iter=5000))
    assert res.converged
    pairs = build_pairs(cat, res.temporal_cutoff, res.spatial_cutoff)
    s = score(res.params, cov, cat, pairs)
    scale = np.abs(res.params.to_vector(cat.marks))
    # score times parameter scale is the change in ll per relative step
    assert np.max(np.abs(s * scale)) < 1e-3


def test_uncorrected_ll_trace_monotone(sim_data):
    cov, truth, cat = sim_data
    res = fit(cat, cov, FitConfig(interior="full", ll_tol=1e-9, param_tol=1e-8))
    assert np.all(np.diff(res.ll_trace) >= -1e-8)


def test_corrected_fit_recovers_parameters(sim_data):
    cov, truth, cat = sim_data
    res = fit(cat, cov, FitConfig(interior=InteriorSpec(cov.domain.erode(5.0), 105.0)))
    assert res.params.theta["target"] == pytest.approx(0.5, abs=0.12)
    assert res.params.omega == pytest.approx(2.0, rel=0.3)
    assert res.params.beta[1] == pytest.approx(0.5, abs=0.25)


def test_theta_zero_data_gives_small_theta():
    cov = small_cov(seed=4)
    truth = ModelParams([-5.0, 0.5, -0.4], {"target": 0.0}, 2.0, 6.0)
    cat = simulate(SimConfig(cov, truth, 200.0, seed=2)).catalog
    res = fit(cat, cov, FitConfig(interior="full"))
    assert res.params.theta["target"] < 0.05


def test_small_cutoffs_are_enlarged(sim_data):
    cov, truth, cat = sim_data
    res = fit(cat, cov, FitConfig(interior="full", spatial_cutoff=2.0, temporal_cutoff=3.0))
    assert res.spatial_cutoff >= 5 * np.sqrt(res.params.sigma2)
    assert res.temporal_cutoff >= 8 * res.params.omega


def test_default_interior_is_pilot_derived(sim_data):
    cov, truth, cat = sim_data
    res = fit(cat, cov, FitConfig(interior=None, ll_tol=1e-5, param_tol=1e-4))
    assert any("pilot" in f for f in res.flags)
    assert res.interior.t0 < cat.T and res.interior.x0.area < cov.domain.area
