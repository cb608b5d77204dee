import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sepp.geometry import CovariateMap, Domain
from sepp.model import (ModelParams, build_pairs, compensator, conditional_intensity, event_gradients,
                        log_likelihood, score, triggering)

from conftest import make_catalog, small_cov


def brute_intensity(params, cov, cat, x, y, t):
    mu = np.exp(cov.log_rates(params.beta)[cov.cell_index(np.array([x]), np.array([y]))[0]])
    total = mu
    for j in range(cat.n):
        if cat.t[j] < t:
            r2 = (x - cat.x[j]) ** 2 + (y - cat.y[j]) ** 2
            if r2 >= params.delta ** 2:
                th = params.theta.get(cat.marks[cat.codes[j]], 0.0)
                total += th / params.omega * np.exp(-(t - cat.t[j]) / params.omega) \
                    * np.exp(-r2 / (2 * params.sigma2)) / (2 * np.pi * params.sigma2)
    return total


def test_intensity_matches_direct_sum(cov, params, catalog):
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, y, t = rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(0, 60)
        assert conditional_intensity(params, cov, catalog, (x, y), t) == pytest.approx(
            brute_intensity(params, cov, catalog, x, y, t), rel=1e-12)


def test_single_prior_event(cov, params):
    cat = make_catalog(cov, [[1.0, 20.0, 20.0]], 10.0)
    mu = np.exp(cov.log_rates(params.beta)[cov.cell_index(np.array([23.0]), np.array([24.0]))[0]])
    g = triggering(params, (3.0, 4.0), 2.0, "target")
    assert conditional_intensity(params, cov, cat, (23.0, 24.0), 3.0) == pytest.approx(mu + g, rel=1e-13)


def test_ties_do_not_excite(cov, params):
    cat = make_catalog(cov, [[2.0, 20.0, 20.0], [2.0, 21.0, 20.0]], 10.0)
    lam = conditional_intensity(params, cov, cat, (21.0, 20.0), 2.0)
    mu = np.exp(cov.log_rates(params.beta)[cov.cell_index(np.array([21.0]), np.array([20.0]))[0]])
    assert lam == pytest.approx(mu, rel=1e-14)
    with pytest.raises(ValueError):
        triggering(params, (0.0, 0.0), 0.0, "target")


def test_kernel_normalisation_quadrature():
    p = ModelParams([0.0], {"target": 0.7}, omega=2.5, sigma2=4.0)
    # radial form: integral over the plane = int 2 pi r g dr
    spatial, _ = integrate.quad(lambda r: 2 * np.pi * r * np.exp(-r * r / 8.0) / (8.0 * np.pi), 0, np.inf)
    temporal, _ = integrate.quad(lambda s: np.exp(-s / 2.5) / 2.5, 0, np.inf)
    assert 0.7 * spatial * temporal == pytest.approx(0.7, rel=1e-4)
    val, _ = integrate.dblquad(lambda y, x: triggering(p, (x, y), 1.0, "target"), -40, 40, -40, 40,
                               epsabs=1e-12)
    assert val == pytest.approx(0.7 * np.exp(-1.0 / 2.5) / 2.5, rel=1e-4)


def test_delta_deficit_equals_ball_mass():
    p = ModelParams([0.0], {"target": 1.0}, omega=1.0, sigma2=4.0, delta=1.5)
    val, _ = integrate.quad(lambda r: 2 * np.pi * r * np.exp(-r * r / 8.0) / (8.0 * np.pi), 1.5, np.inf)
    assert val == pytest.approx(p.delta_mass, rel=1e-8)
    inside = triggering(p, (1.0, 0.5), 1.0, "target")
    assert inside == 0.0


def test_compensator_matches_quadrature_on_large_domain():
    # events far from the edge so the plane approximation is exact to quadrature tolerance
    dom = Domain.rectangle(-200, -200, 200, 200)
    cov = CovariateMap.homogeneous(dom)
    p = ModelParams([np.log(1e-5)], {"target": 0.5}, omega=2.0, sigma2=1.0)
    cat = make_catalog(cov, [[1.0, 0.0, 0.0], [4.0, 1.0, -1.0]], 10.0)

    def space_integral(t):
        total = 1e-5 * dom.area
        for tj, xj, yj in zip(cat.t, cat.x, cat.y):
            if tj < t:
                total += 0.5 / 2.0 * np.exp(-(t - tj) / 2.0)
        return total

    val, _ = integrate.quad(space_integral, 0, 10.0, points=[1.0, 4.0])
    assert compensator(p, cov, cat) == pytest.approx(val, rel=1e-9)


def test_log_likelihood_brute_force(cov, params, catalog):
    ll = log_likelihood(params, cov, catalog)
    tgt = np.flatnonzero(catalog.is_target)
    s = sum(np.log(brute_intensity(params, cov, catalog, catalog.x[i], catalog.y[i], catalog.t[i])) for i in tgt)
    assert ll == pytest.approx(s - compensator(params, cov, catalog), rel=1e-11)


def test_compensator_omega_changes_only_triggering(cov, params, catalog):
    a = params.copy()
    b = params.copy()
    b.omega *= 3
    zero = params.copy()
    zero.theta = {k: 0.0 for k in zero.theta}
    bg = compensator(zero, cov, catalog)
    assert compensator(a, cov, catalog) > bg
    assert compensator(b, cov, catalog) > bg
    assert compensator(a, cov, catalog) - bg != pytest.approx(compensator(b, cov, catalog) - bg)


def test_score_matches_central_differences(cov, params, catalog):
    pairs = build_pairs(catalog)
    marks = catalog.marks
    base = params.to_vector(marks)
    s = score(params, cov, catalog, pairs)
    for k in range(len(base)):
        h = 1e-6 * max(1.0, abs(base[k]))
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        fd = (log_likelihood(ModelParams.from_vector(up, marks, cov.p), cov, catalog, pairs)
              - log_likelihood(ModelParams.from_vector(dn, marks, cov.p), cov, catalog, pairs)) / (2 * h)
        assert s[k] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_gradient_defined_at_theta_zero(cov, catalog):
    p = ModelParams([-6.0, 0.4, -0.3], {"target": 0.0, "alarm": 0.0}, 3.0, 9.0)
    lam, grad = event_gradients(p, cov, catalog)
    assert np.all(np.isfinite(grad)) and np.any(grad[:, 3] > 0)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0, 49.9), y=st.floats(0, 49.9), t=st.floats(0, 59.9))
def test_intensity_at_least_background(x, y, t):
    cov = small_cov()
    p = ModelParams([-6.0, 0.4, -0.3], {"target": 0.4}, 3.0, 9.0)
    cat = make_catalog(cov, [[1.0, 10.0, 10.0], [5.0, 30.0, 40.0], [20.0, 25.0, 25.0]], 60.0)
    mu = np.exp(cov.log_rates(p.beta)[cov.cell_index(np.array([x]), np.array([y]))[0]])
    assert conditional_intensity(p, cov, cat, (x, y), t) >= mu


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.1, 10.0))
def test_theta_linearity(scale):
    cov = small_cov()
    cat = make_catalog(cov, [[1.0, 10.0, 10.0], [2.0, 12.0, 11.0], [3.0, 11.0, 9.0]], 10.0)
    p1 = ModelParams([-6.0, 0.0, 0.0], {"target": 0.3}, 2.0, 4.0)
    p2 = p1.copy()
    p2.theta["target"] *= scale
    zero = p1.copy()
    zero.theta["target"] = 0.0
    t1 = conditional_intensity(p1, cov, cat, (11.0, 10.0), 5.0) - conditional_intensity(zero, cov, cat, (11.0, 10.0), 5.0)
    t2 = conditional_intensity(p2, cov, cat, (11.0, 10.0), 5.0) - conditional_intensity(zero, cov, cat, (11.0, 10.0), 5.0)
    assert t2 == pytest.approx(scale * t1, rel=1e-10)
