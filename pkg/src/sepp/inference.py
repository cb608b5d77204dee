"""Asymptotic covariance of fitted parameters.

Two estimators are offered: Rathbun's sum over events of the outer product
of intensity gradients divided by squared intensity, and the inverse of the
negated finite-difference Hessian of the log-likelihood (observed
information). Given an interior, both use the objective the
boundary-corrected fit maximizes instead of the full-window likelihood.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SingularCovarianceError
from .geometry import CovariateMap
from .model import (EventCatalog, InteriorSpec, ModelParams, PairSet, build_pairs, background_intensity,
                    event_gradients, event_weights, score)

Z95 = 1.959963984540054
Z95_ONE_SIDED = 1.6448536269514722


@dataclass
class CovarianceResult:
    """Covariance matrix with per-parameter standard errors and 95% intervals.

    ``ci`` has one (lower, upper) row per parameter. Parameters flagged in
    ``one_sided`` sit on the theta >= 0 boundary and get the interval
    [0, estimate + 1.645 se] instead of the symmetric one.
    """

    method: str
    names: list
    estimate: np.ndarray
    matrix: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    one_sided: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.ci[:, 0] <= truth) & (truth <= self.ci[:, 1])

    def to_dict(self) -> dict:
        return {"method": self.method, "names": list(self.names), "estimate": self.estimate.tolist(),
                "se": self.se.tolist(), "ci": self.ci.tolist(), "matrix": self.matrix.tolist(),
                "one_sided": list(self.one_sided), "flags": list(self.flags)}


def default_pairs(params: ModelParams, catalog: EventCatalog) -> PairSet:
    """Pairs out to 10 sigma and 12 omega, where the neglected kernel mass is below 1e-5."""
    return build_pairs(catalog, 12.0 * params.omega, 10.0 * np.sqrt(params.sigma2))


def intensity_gradient(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, s, t) -> np.ndarray:
    """d lambda(s, t) / d Theta in ``ModelParams.to_vector`` order, by direct summation."""
    x, y = (float(v) for v in s)
    t = float(t)
    p, nm = cov.p, len(catalog.marks)
    om, s2 = params.omega, params.sigma2
    grad = np.zeros(p + nm + 2)
    mu = background_intensity(params, cov, (x, y))
    grad[:p] = mu * cov.design[cov.cell_index(np.array([x]), np.array([y]))[0]]
    prior = catalog.t < t
    dt = t - catalog.t[prior]
    r2 = (x - catalog.x[prior]) ** 2 + (y - catalog.y[prior]) ** 2
    unit = np.exp(-dt / om) / om * np.exp(-r2 / (2 * s2)) / (2 * np.pi * s2)
    unit = np.where(r2 < params.delta ** 2, 0.0, unit)
    codes = catalog.codes[prior]
    grad[p:p + nm] = np.bincount(codes, weights=unit, minlength=nm)
    g = params.theta_for(catalog.marks)[codes] * unit
    grad[p + nm] = np.sum(g * (dt / om ** 2 - 1.0 / om))
    grad[p + nm + 1] = np.sum(g * (r2 / (2 * s2 ** 2) - 1.0 / s2))
    return grad


def _select(names: list, keep: Sequence[str] | None) -> np.ndarray:
    if keep is None:
        return np.arange(len(names))
    missing = [k for k in keep if k not in names]
    if missing:
        raise ValueError(f"unknown parameter names {missing}; available: {names}")
    return np.array([names.index(k) for k in keep])


def _finish(method: str, names: list, estimate: np.ndarray, V: np.ndarray, flags: list,
            boundary_tol: float) -> CovarianceResult:
    V = 0.5 * (V + V.T)
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    ci = np.column_stack([estimate - Z95 * se, estimate + Z95 * se])
    one_sided = []
    for k, name in enumerate(names):
        if name.startswith("theta[") and estimate[k] <= boundary_tol:
            ci[k] = (0.0, estimate[k] + Z95_ONE_SIDED * se[k])
            one_sided.append(name)
    if one_sided:
        flags = flags + [f"boundary estimate, one-sided interval: {', '.join(one_sided)}"]
    return CovarianceResult(method=method, names=names, estimate=estimate, matrix=V, se=se, ci=ci,
                            one_sided=one_sided, flags=flags)


def rathbun_covariance(params: ModelParams, cov: CovariateMap, catalog: EventCatalog,
                       pairs: PairSet | None = None, keep: Sequence[str] | None = None,
                       max_cond: float = 1e12, boundary_tol: float = 1e-8,
                       interior: InteriorSpec | None = None) -> CovarianceResult:
    """Inverse of sum_i grad(lambda_i) grad(lambda_i)^T / lambda_i^2 over target events.

    ``keep`` restricts the parameter set (names as in
    ``ModelParams.vector_names``); other parameters are treated as known.
    With ``interior`` only interior target events enter the sum.
    """
    names = ModelParams.vector_names(cov.names, catalog.marks)
    idx = _select(names, keep)
    if pairs is None:
        pairs = default_pairs(params, catalog)
    lam, grad = event_gradients(params, cov, catalog, pairs)
    if interior is not None:
        rows = interior.contains(catalog)[catalog.is_target]
        lam, grad = lam[rows], grad[rows]
    G = grad[:, idx] / lam[:, None]
    info = G.T @ G
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularCovarianceError(
            f"information matrix is ill-conditioned (condition number {cond:.3g}); rescale covariates or "
            f"time/length units, fix unidentified parameters, or use more data")
    V = np.linalg.inv(info)
    estimate = params.to_vector(catalog.marks)[idx]
    return _finish("rathbun", [names[k] for k in idx], estimate, V, [], boundary_tol)


def _interior_terms(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, interior: InteriorSpec):
    j0 = interior.contains(catalog)
    a = catalog.T - catalog.t[j0]
    survive = 1.0 - np.exp(-a / params.omega)
    exposure = cov.intersect_areas(interior.x0) * interior.t0
    return j0, a, survive, exposure


def interior_objective(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, interior: InteriorSpec,
                       pairs: PairSet | None = None) -> float:
    """Log intensity at interior target events minus the interior compensator.

    The background is integrated over the interior region and time span;
    each interior event's offspring mass is taken over the plane and [t_i, T).
    """
    if pairs is None:
        pairs = build_pairs(catalog)
    j0, _, survive, exposure = _interior_terms(params, cov, catalog, interior)
    lam, _ = event_gradients(params, cov, catalog, pairs)
    rows = j0[catalog.is_target]
    comp = float(exposure @ np.exp(cov.log_rates(params.beta)))
    comp += float(np.sum(event_weights(params, catalog)[j0] * survive)) * params.delta_mass
    return float(np.sum(np.log(lam[rows]))) - comp


def interior_score(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, interior: InteriorSpec,
                   pairs: PairSet | None = None) -> np.ndarray:
    """Analytic gradient of ``interior_objective``."""
    if pairs is None:
        pairs = build_pairs(catalog)
    p, nm = cov.p, len(catalog.marks)
    om, s2, m = params.omega, params.sigma2, params.delta_mass
    j0, a, survive, exposure = _interior_terms(params, cov, catalog, interior)
    lam, grad = event_gradients(params, cov, catalog, pairs)
    rows = j0[catalog.is_target]
    out = np.sum(grad[rows] / lam[rows, None], axis=0)
    w = event_weights(params, catalog)[j0]
    out[:p] -= cov.design.T @ (exposure * np.exp(cov.log_rates(params.beta)))
    out[p:p + nm] -= np.bincount(catalog.codes[j0], weights=survive * m, minlength=nm)
    out[p + nm] += float(np.sum(w * a * np.exp(-a / om))) * m / om ** 2
    out[p + nm + 1] -= float(np.sum(w * survive)) * m * params.delta ** 2 / (2 * s2 ** 2)
    return out


def numerical_hessian(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, pairs: PairSet,
                      idx: np.ndarray, interior: InteriorSpec | None = None) -> np.ndarray:
    """Central differences of the analytic score, step max(1e-5, 1e-5 |Theta_k|)."""
    if interior is None:
        grad_fn = score
    else:
        def grad_fn(pr, c, cat, pa):
            return interior_score(pr, c, cat, interior, pa)
    marks, p = catalog.marks, cov.p
    base = params.to_vector(marks)
    H = np.empty((len(idx), len(idx)))
    for col, k in enumerate(idx):
        h = max(1e-5, 1e-5 * abs(base[k]))
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        s_up = grad_fn(ModelParams.from_vector(up, marks, p, params.delta), cov, catalog, pairs)[idx]
        s_dn = grad_fn(ModelParams.from_vector(dn, marks, p, params.delta), cov, catalog, pairs)[idx]
        H[:, col] = (s_up - s_dn) / (2.0 * h)
    return 0.5 * (H + H.T)


def hessian_covariance(params: ModelParams, cov: CovariateMap, catalog: EventCatalog,
                       pairs: PairSet | None = None, keep: Sequence[str] | None = None,
                       boundary_tol: float = 1e-8, interior: InteriorSpec | None = None) -> CovarianceResult:
    """-H^{-1}; a pseudo-inverse is used (and flagged) when H is not negative definite.

    With ``interior`` H is the Hessian of ``interior_objective``.
    """
    names = ModelParams.vector_names(cov.names, catalog.marks)
    idx = _select(names, keep)
    if pairs is None:
        pairs = default_pairs(params, catalog)
    H = numerical_hessian(params, cov, catalog, pairs, idx, interior)
    flags = []
    eig = np.linalg.eigvalsh(H)
    if np.max(eig) >= 0:
        warnings.warn("Hessian is not negative definite; using a pseudo-inverse")
        flags.append(f"Hessian not negative definite (largest eigenvalue {np.max(eig):.3g}); pseudo-inverse used")
        V = -np.linalg.pinv(H)
    else:
        V = -np.linalg.inv(H)
    estimate = params.to_vector(catalog.marks)[idx]
    return _finish("hessian", [names[k] for k in idx], estimate, V, flags, boundary_tol)
