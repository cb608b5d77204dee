import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm

from sepp.studies import (BiasStudyConfig, BoundaryStudyConfig, StudyResult, bias_study_covariates,
                          intercept_for_count, replicate_seeds, ring_square_covariates, run_bias_study,
                          run_boundary_study, spatial_poisson_glm)


def test_replicate_seeds_deterministic_and_distinct():
    a, b = replicate_seeds(5, 20), replicate_seeds(5, 20)
    assert a == b and len(set(a)) == 20
    assert replicate_seeds(5, 3) == a[:3]


def test_spatial_glm_matches_statsmodels():
    cov = bias_study_covariates(12)
    rng = np.random.default_rng(0)
    mu = np.exp(cov.design @ np.array([-1.0, 1.5, -0.7])) * cov.areas * 10
    y = rng.poisson(mu).astype(float)
    ours = spatial_poisson_glm(y, cov.design, cov.areas * 10)
    ref = sm.GLM(y, cov.design, family=sm.families.Poisson(), offset=np.log(cov.areas * 10)).fit(tol=1e-12)
    np.testing.assert_allclose(ours.beta, ref.params, rtol=1e-7)
    np.testing.assert_allclose(ours.se, ref.bse, rtol=1e-6)


def test_intercept_for_count():
    cov = bias_study_covariates(10)
    b0 = intercept_for_count(cov, [0.5, -1.0], 20.0, 300.0)
    beta = np.array([b0, 0.5, -1.0])
    assert np.sum(np.exp(cov.design @ beta) * cov.areas) * 20.0 == pytest.approx(300.0)


def test_ring_square_layout():
    cov = ring_square_covariates(60, 10, 5)
    ring, square = cov.design[:, 1], cov.design[:, 2]
    assert ring.sum() > 0 and square.sum() == 400
    assert not np.any((ring > 0) & (square > 0))


def test_bias_study_small_is_deterministic(tmp_path):
    cfg = BiasStudyConfig(thetas=(0.0, 0.6), reps=2, expected_background=200.0)
    r1, r2 = run_bias_study(cfg), run_bias_study(cfg)
    pd.testing.assert_frame_equal(r1.table, r2.table)
    assert len(r1.table) == 4
    paths = r1.save(tmp_path)
    text = open(paths["results"]).read()
    assert text.startswith("# study=bias seed=2024")


def test_boundary_study_single_rep():
    res = run_boundary_study(BoundaryStudyConfig(reps=1))
    assert isinstance(res, StudyResult)
    assert set(res.table.fit) == {"corrected", "uncorrected"}
    corrected = res.table[res.table.fit == "corrected"].iloc[0]
    assert 0.2 < corrected.theta < 0.8
