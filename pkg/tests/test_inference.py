import numpy as np
import pytest
import statsmodels.api as sm

from sepp import inference
from sepp.em import piecewise_poisson_beta
from sepp.errors import SingularCovarianceError
from sepp.geometry import CovariateMap
from sepp.inference import hessian_covariance, intensity_gradient, rathbun_covariance
from sepp.model import ModelParams, build_pairs, conditional_intensity
from sepp.simulate import SimConfig, simulate

from conftest import small_cov


def test_intensity_gradient_finite_differences(cov, params, catalog):
    marks = catalog.marks
    base = params.to_vector(marks)
    rng = np.random.default_rng(0)
    for _ in range(5):
        s, t = rng.uniform(1, 49, 2), rng.uniform(10, 60)
        g = intensity_gradient(params, cov, catalog, s, t)
        for k in range(len(base)):
            h = 1e-6 * max(1.0, abs(base[k]))
            up, dn = base.copy(), base.copy()
            up[k] += h
            dn[k] -= h
            fd = (conditional_intensity(ModelParams.from_vector(up, marks, cov.p), cov, catalog, s, t)
                  - conditional_intensity(ModelParams.from_vector(dn, marks, cov.p), cov, catalog, s, t)) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-6, abs=1e-14)


def test_rathbun_matches_direct_sum(cov, params, catalog):
    res = rathbun_covariance(params, cov, catalog, pairs=build_pairs(catalog))
    info = np.zeros((len(res.names), len(res.names)))
    for i in np.flatnonzero(catalog.is_target):
        s = (catalog.x[i], catalog.y[i])
        g = intensity_gradient(params, cov, catalog, s, catalog.t[i])
        lam = conditional_intensity(params, cov, catalog, s, catalog.t[i])
        info += np.outer(g, g) / lam ** 2
    np.testing.assert_allclose(res.matrix, np.linalg.inv(info), rtol=1e-9)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(res.matrix)))
    # default pairs stop at 12 omega and 10 sigma
    trunc = rathbun_covariance(params, cov, catalog)
    np.testing.assert_allclose(trunc.matrix, res.matrix, atol=1e-3 * np.abs(res.matrix).max())


@pytest.fixture(scope="module")
def poisson_case():
    cov = small_cov(seed=5)
    truth = ModelParams([-4.5, 0.6, -0.3], {"target": 0.0}, 2.0, 5.0)
    cat = simulate(SimConfig(cov, truth, 50.0, seed=3)).catalog
    beta = piecewise_poisson_beta(cov, cat).beta
    return cov, cat, ModelParams(beta, {"target": 0.0}, 2.0, 5.0)


def test_hessian_beta_block_equals_glm_covariance(poisson_case):
    cov, cat, p = poisson_case
    names = [f"beta[{n}]" for n in cov.names]
    res = hessian_covariance(p, cov, cat, keep=names)
    y = np.bincount(cat.cells(cov), minlength=cov.ncells)
    ref = sm.GLM(y, cov.design, family=sm.families.Poisson(), exposure=cov.areas * cat.T).fit(tol=1e-13)
    np.testing.assert_allclose(res.matrix, ref.cov_params(), rtol=1e-5)


def test_boundary_theta_gets_one_sided_interval(poisson_case):
    cov, cat, p = poisson_case
    # omega and sigma2 are unidentified at theta = 0, so only beta and theta are kept
    with pytest.raises(SingularCovarianceError):
        rathbun_covariance(p, cov, cat)
    res = rathbun_covariance(p, cov, cat, keep=[f"beta[{n}]" for n in cov.names] + ["theta[target]"])
    k = res.names.index("theta[target]")
    assert res.one_sided == ["theta[target]"]
    assert res.ci[k, 0] == 0.0
    assert res.ci[k, 1] == pytest.approx(inference.Z95_ONE_SIDED * res.se[k])
    assert any("one-sided" in f for f in res.flags)


def test_symmetric_interval_and_coverage_helper(cov, params, catalog):
    res = rathbun_covariance(params, cov, catalog)
    np.testing.assert_allclose(res.ci[:, 1] - res.estimate, inference.Z95 * res.se)
    assert np.all(res.covers(res.estimate))


def test_ill_conditioned_information_raises(catalog, params):
    cov0 = small_cov()
    cov = CovariateMap(design=np.column_stack([cov0.design, np.zeros(cov0.ncells)]), areas=cov0.areas,
                       names=cov0.names + ("dead",), grid=cov0.grid)
    p = ModelParams(list(params.beta) + [0.0], params.theta, params.omega, params.sigma2)
    with pytest.raises(SingularCovarianceError, match="ill-conditioned"):
        rathbun_covariance(p, cov, catalog)


def test_indefinite_hessian_falls_back_to_pseudo_inverse(monkeypatch, cov, params, catalog):
    monkeypatch.setattr(inference, "numerical_hessian", lambda *a: np.diag([-1.0, 2.0, -3.0, -1.0, -1.0, -1.0, -1.0]))
    with pytest.warns(UserWarning, match="negative definite"):
        res = hessian_covariance(params, cov, catalog)
    assert any("pseudo-inverse" in f for f in res.flags)
    np.testing.assert_allclose(res.matrix, -np.linalg.pinv(np.diag([-1.0, 2.0, -3.0, -1.0, -1.0, -1.0, -1.0])))


def test_unknown_keep_name(cov, params, catalog):
    with pytest.raises(ValueError, match="unknown parameter"):
        rathbun_covariance(params, cov, catalog, keep=["beta[nope]"])


def _interior(cat, buffer=8.0, tbuf=10.0):
    from sepp.model import InteriorSpec
    return InteriorSpec(cat.domain.erode(buffer), cat.T - tbuf)


def test_interior_score_finite_differences(cov, catalog):
    p = ModelParams([-6.1, 0.35, -0.25], {"target": 0.35, "alarm": 0.25}, 3.3, 8.0, delta=0.5)
    interior = _interior(catalog)
    pairs = build_pairs(catalog)
    g = inference.interior_score(p, cov, catalog, interior, pairs)
    base = p.to_vector(catalog.marks)
    for k in range(len(base)):
        h = 1e-6 * max(1.0, abs(base[k]))
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        f = [inference.interior_objective(ModelParams.from_vector(v, catalog.marks, cov.p, p.delta), cov, catalog,
                                          interior, pairs) for v in (up, dn)]
        fd = (f[0] - f[1]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-4)


def test_interior_beta_score_vanishes_at_corrected_fit(cov, catalog):
    from sepp.em import FitConfig, fit
    interior = _interior(catalog)
    res = fit(catalog, cov, FitConfig(interior=interior, ll_tol=1e-10, param_tol=1e-9, spatial_cutoff=40.0,
                                      temporal_cutoff=40.0))
    pairs = build_pairs(catalog, 40.0, 40.0)
    g = inference.interior_score(res.params, cov, catalog, interior, pairs)
    n_in = np.sum(interior.contains(catalog) & catalog.is_target)
    assert np.max(np.abs(g[:cov.p])) < 1e-5 * n_in


def test_interior_covariances_are_wider(cov, params, catalog):
    interior = _interior(catalog)
    full = rathbun_covariance(params, cov, catalog)
    inner = rathbun_covariance(params, cov, catalog, interior=interior)
    assert np.all(inner.se[:cov.p] > full.se[:cov.p])
    hess = hessian_covariance(params, cov, catalog, interior=interior)
    assert np.all(np.isfinite(hess.se))
