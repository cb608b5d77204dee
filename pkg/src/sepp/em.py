"""Expectation-maximization fitting with interior-region boundary correction.

All events in the domain contribute to the intensity, but the M-step
averages only run over parents inside the interior region X0 x [0, T0).
Each parent's offspring are credited wherever they land in the domain,
and the background coefficients use interior responses and exposure.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError
from .geometry import CovariateMap
from .glm import poisson_newton
from .model import (EventCatalog, InteriorSpec, ModelParams, PairSet, build_pairs, compensator,
                    event_weights)

logger = logging.getLogger(__name__)


@dataclass
class Responsibilities:
    """Branching probabilities for every target event.

    ``p_background[i]`` is P(u_i = 0) for the i-th target event (catalog
    order); ``p_pair[k]`` is P(u_child = parent) for pair k of ``pairs``.
    """

    target_index: np.ndarray
    p_background: np.ndarray
    pairs: PairSet
    p_pair: np.ndarray
    lam: np.ndarray

    def row_sums(self, n_events: int) -> np.ndarray:
        full = np.bincount(self.pairs.child, weights=self.p_pair, minlength=n_events)
        return self.p_background + full[self.target_index]


@dataclass
class FitConfig:
    interior: InteriorSpec | str | None = None
    max_iter: int = 1000
    ll_tol: float = 1e-6
    param_tol: float = 1e-6
    spatial_cutoff: float | None = None
    temporal_cutoff: float | None = None
    delta: float = 0.0
    beta_tol: float = 1e-8
    beta_max_iter: int = 100
    max_cutoff_rebuilds: int = 5

    def __post_init__(self):
        if self.ll_tol <= 0 or self.param_tol <= 0 or self.beta_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class FitResult:
    params: ModelParams
    ll_trace: list
    iterations: int
    converged: bool
    expected_background: float
    expected_triggered: dict
    interior: InteriorSpec
    n_interior_targets: int
    loglik: float
    spatial_cutoff: float
    temporal_cutoff: float
    flags: list = field(default_factory=list)


def e_step(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, interior: InteriorSpec | None = None,
           pairs: PairSet | None = None) -> Responsibilities:
    """Responsibilities for all target events; ``interior`` only matters to the M-steps."""
    if pairs is None:
        pairs = build_pairs(catalog)
    w = event_weights(params, catalog)
    tgt = np.flatnonzero(catalog.is_target)
    mu_full = np.zeros(catalog.n)
    mu_full[tgt] = np.exp(cov.log_rates(params.beta)[catalog.cells(cov)[tgt]])
    p_pair, lam_full = kernels.pair_responsibilities(pairs.child, pairs.parent, pairs.dt, pairs.r2, w, mu_full,
                                                     params.omega, params.sigma2, params.delta ** 2)
    lam = lam_full[tgt]
    if np.any(~(lam > 0)) or not np.all(np.isfinite(lam)):
        k = int(tgt[np.flatnonzero(~(lam > 0) | ~np.isfinite(lam))[0]])
        raise NumericError(f"zero or non-finite total intensity at event {k} "
                           f"(t={catalog.t[k]}, x={catalog.x[k]}, y={catalog.y[k]})", params.to_dict())
    return Responsibilities(target_index=tgt, p_background=mu_full[tgt] / lam, pairs=pairs,
                            p_pair=p_pair, lam=lam)


@dataclass
class _Masks:
    """Interior membership of events and pair parents, fixed for one pair set."""

    j0: np.ndarray
    pair_idx: np.ndarray
    dt: np.ndarray
    r2: np.ndarray
    parent_mark: np.ndarray
    target_in: np.ndarray

    @classmethod
    def build(cls, catalog: EventCatalog, interior: InteriorSpec | None, pairs: PairSet, target_index):
        j0 = interior.contains(catalog) if interior is not None else np.ones(catalog.n, dtype=bool)
        idx = np.flatnonzero(j0[pairs.parent])
        return cls(j0=j0, pair_idx=idx, dt=pairs.dt[idx], r2=pairs.r2[idx],
                   parent_mark=catalog.codes[pairs.parent[idx]], target_in=j0[target_index])


@dataclass
class _Moments:
    """Responsibility-weighted sums over interior-parent pairs."""

    by_mark: np.ndarray
    W: float
    S: float
    R: float

    @classmethod
    def build(cls, resp: Responsibilities, masks: _Masks, n_marks: int):
        w = np.take(resp.p_pair, masks.pair_idx)
        by_mark = np.bincount(masks.parent_mark, weights=w, minlength=n_marks)
        return cls(by_mark=by_mark, W=float(by_mark.sum()), S=float(w @ masks.dt), R=float(w @ masks.r2))


def _theta_step(catalog, params, masks: _Masks, mom: _Moments) -> dict:
    survive = (1.0 - np.exp(-(catalog.T - catalog.t) / params.omega)) * params.delta_mass
    den = np.bincount(catalog.codes[masks.j0], weights=survive[masks.j0], minlength=len(catalog.marks))
    counts = np.bincount(catalog.codes[masks.j0], minlength=len(catalog.marks))
    out = dict(params.theta)
    for m, name in enumerate(catalog.marks):
        if counts[m] == 0:
            warnings.warn(f"no interior events of mark {name!r}; theta left at {out.get(name, 0.0)}")
            continue
        out[name] = float(mom.by_mark[m]) / float(den[m])
    return out


def _prep(resp, catalog, interior):
    masks = _Masks.build(catalog, interior, resp.pairs, resp.target_index)
    return masks, _Moments.build(resp, masks, len(catalog.marks))


def m_step_theta(resp: Responsibilities, catalog: EventCatalog, params: ModelParams,
                 interior: InteriorSpec | None = None) -> dict:
    """theta_L = offspring credited to interior type-L parents / their expected observable count."""
    return _theta_step(catalog, params, *_prep(resp, catalog, interior))


def _solve_scale(start: float, fixed_point, objective, previous: float) -> float:
    x = start
    for _ in range(200):
        nxt = fixed_point(x)
        if not np.isfinite(nxt) or nxt <= 0:
            break
        if abs(nxt - x) <= 1e-13 * abs(x):
            x = nxt
            break
        x = nxt
    if not (np.isfinite(x) and x > 0) or objective(x) < objective(previous):
        return previous
    return x


def _omega_step(catalog, masks: _Masks, mom: _Moments, params: ModelParams | None) -> float:
    W, S = mom.W, mom.S
    if W <= 0:
        if params is None:
            raise ValueError("no triggered weight to estimate omega")
        return params.omega
    if params is None:
        return S / W
    a = catalog.T - catalog.t[masks.j0]
    th = event_weights(params, catalog)[masks.j0] * params.delta_mass

    def fixed_point(om):
        return (S + float(np.sum(th * a * np.exp(-a / om)))) / W

    def objective(om):
        return -W * np.log(om) - S / om - float(np.sum(th * (1.0 - np.exp(-a / om))))

    return _solve_scale(S / W, fixed_point, objective, params.omega)


def m_step_omega(resp: Responsibilities, catalog: EventCatalog, interior: InteriorSpec | None = None,
                 params: ModelParams | None = None) -> float:
    """Weighted mean lag over interior-parent pairs.

    When ``params`` is given, offspring falling after T are accounted for
    (a term that vanishes once the parents end well before T), which makes
    this the exact conditional maximizer of the EM surrogate.
    """
    return _omega_step(catalog, *_prep(resp, catalog, interior), params)


def _sigma2_step(catalog, masks: _Masks, mom: _Moments, params: ModelParams | None) -> float:
    W, R = mom.W, mom.R
    if W <= 0:
        if params is None:
            raise ValueError("no triggered weight to estimate sigma2")
        return params.sigma2
    if params is None or params.delta == 0:
        return R / (2.0 * W)
    j0 = masks.j0
    c = event_weights(params, catalog)[j0] * (1.0 - np.exp(-(catalog.T - catalog.t[j0]) / params.omega))
    d2 = params.delta ** 2
    C = float(c.sum())

    def fixed_point(s2):
        return (R - C * np.exp(-d2 / (2 * s2)) * d2) / (2.0 * W)

    def objective(s2):
        return -W * np.log(s2) - R / (2 * s2) - C * np.exp(-d2 / (2 * s2))

    return _solve_scale(R / (2.0 * W), fixed_point, objective, params.sigma2)


def m_step_sigma2(resp: Responsibilities, catalog: EventCatalog, interior: InteriorSpec | None = None,
                  params: ModelParams | None = None) -> float:
    """sum P r^2 / (2 sum P) over interior-parent pairs (delta-ball deficit handled when delta > 0)."""
    return _sigma2_step(catalog, *_prep(resp, catalog, interior), params)


def _beta_step(resp, cov, catalog, masks: _Masks, exposure, beta_init, tol, max_iter):
    cells = catalog.cells(cov)[resp.target_index[masks.target_in]]
    y = np.bincount(cells, weights=resp.p_background[masks.target_in], minlength=cov.ncells)
    return poisson_newton(y, cov.design, exposure, beta0=beta_init, tol=tol, max_iter=max_iter,
                          names=cov.names).beta


def m_step_beta(resp: Responsibilities, cov: CovariateMap, catalog: EventCatalog,
                interior: InteriorSpec | None = None, beta_init=None, tol: float = 1e-8,
                max_iter: int = 100) -> np.ndarray:
    """Newton maximization of the background part of the EM surrogate."""
    if interior is None:
        interior = InteriorSpec.full(catalog)
    masks = _Masks.build(catalog, interior, resp.pairs, resp.target_index)
    exposure = cov.intersect_areas(interior.x0) * interior.t0
    return _beta_step(resp, cov, catalog, masks, exposure, beta_init, tol, max_iter)


def piecewise_poisson_beta(cov: CovariateMap, catalog: EventCatalog, interior: InteriorSpec | None = None):
    """Background MLE ignoring triggering."""
    if interior is None:
        interior = InteriorSpec.full(catalog)
    sel = catalog.is_target & interior.contains(catalog)
    y = np.bincount(catalog.cells(cov)[sel], minlength=cov.ncells).astype(float)
    exposure = cov.intersect_areas(interior.x0) * interior.t0
    return poisson_newton(y, cov.design, exposure, names=cov.names)


def default_init(catalog: EventCatalog, cov: CovariateMap, interior: InteriorSpec | None = None,
                 delta: float = 0.0) -> ModelParams:
    t0 = interior.t0 if interior is not None else catalog.T
    theta = {m: (0.3 if k == 0 else 0.1) for k, m in enumerate(catalog.marks)}
    return ModelParams(beta=piecewise_poisson_beta(cov, catalog, interior).beta, theta=theta,
                       omega=t0 / 20.0, sigma2=(catalog.domain.diameter / 50.0) ** 2, delta=delta)


def default_interior(catalog: EventCatalog, sigma2: float, omega: float) -> InteriorSpec:
    """Erode the domain by 4 sigma and drop the last 8 omega of the window."""
    sigma = float(np.sqrt(sigma2))
    x0 = catalog.domain.erode(4.0 * sigma)
    t0 = catalog.T - 8.0 * omega
    if t0 <= 0.5 * catalog.T:
        t0 = 0.5 * catalog.T
    return InteriorSpec(x0, t0)


def _max_rel_change(a: ModelParams, b: ModelParams, marks) -> float:
    """Relative change for the scales, change relative to max(|x|, 1) for beta and theta.

    A purely relative test never passes when theta decays geometrically towards 0.
    """
    va, vb = a.to_vector(marks), b.to_vector(marks)
    scale = np.maximum(np.abs(va), 1.0)
    scale[-2:] = np.abs(va[-2:])
    return float(np.max(np.abs(va - vb) / scale))


def _cutoffs_ok(params: ModelParams, r: float, tau: float) -> bool:
    return r >= 5.0 * np.sqrt(params.sigma2) and tau >= 8.0 * params.omega


def fit(catalog: EventCatalog, cov: CovariateMap, config: FitConfig | None = None,
        init: ModelParams | None = None) -> FitResult:
    """Alternate E-steps and conditional M-steps until both tolerances are met.

    ``config.interior`` may be an InteriorSpec, ``"full"`` (no boundary
    correction) or None, which derives the interior from a pilot
    uncorrected fit.
    """
    config = config or FitConfig()
    if not np.any(catalog.is_target):
        raise ValueError("catalog has no target events")
    interior = config.interior
    flags = []
    if interior is None:
        pilot_cfg = FitConfig(**{**config.__dict__, "interior": "full"})
        pilot = fit(catalog, cov, pilot_cfg, init)
        interior = default_interior(catalog, pilot.params.sigma2, pilot.params.omega)
        if init is None:
            init = pilot.params
        flags.append("interior derived from pilot uncorrected fit")
    elif interior == "full":
        interior = InteriorSpec.full(catalog)
    interior.validate(catalog.domain, catalog.T)
    j0 = interior.contains(catalog)
    n_int = int(np.sum(j0 & catalog.is_target))
    if n_int == 0:
        raise ValueError("no target events inside the interior region")

    params = init.copy() if init is not None else default_init(catalog, cov, interior, config.delta)
    params.validate()
    r = config.spatial_cutoff if config.spatial_cutoff is not None else 8.0 * np.sqrt(params.sigma2)
    tau = config.temporal_cutoff if config.temporal_cutoff is not None else 10.0 * params.omega
    pairs = build_pairs(catalog, tau, r)
    marks = catalog.marks
    tgt = np.flatnonzero(catalog.is_target)
    masks = _Masks.build(catalog, interior, pairs, tgt)
    exposure = cov.intersect_areas(interior.x0) * interior.t0

    trace, converged, it, rebuilds = [], False, 0, 0
    prev_ll, change = None, np.inf
    while True:
        resp = e_step(params, cov, catalog, interior, pairs)
        ll = float(np.sum(np.log(resp.lam))) - compensator(params, cov, catalog)
        if not np.isfinite(ll):
            raise NumericError("log-likelihood is not finite", params.to_dict())
        trace.append(ll)
        done = prev_ll is not None and abs(ll - prev_ll) < config.ll_tol and change < config.param_tol
        if done or it >= config.max_iter:
            converged = done
            if (converged and not _cutoffs_ok(params, r, tau) and rebuilds < config.max_cutoff_rebuilds
                    and (np.isfinite(r) or np.isfinite(tau))):
                r = max(r, 8.0 * np.sqrt(params.sigma2))
                tau = max(tau, 10.0 * params.omega)
                pairs = build_pairs(catalog, tau, r)
                masks = _Masks.build(catalog, interior, pairs, tgt)
                rebuilds += 1
                flags.append(f"pair cutoffs enlarged at iteration {it} to r={r:.6g}, dt={tau:.6g}")
                prev_ll, change = None, np.inf
                continue
            break
        prev_ll = ll
        new = params.copy()
        mom = _Moments.build(resp, masks, len(marks))
        new.theta = _theta_step(catalog, new, masks, mom)
        new.omega = _omega_step(catalog, masks, mom, new)
        new.sigma2 = _sigma2_step(catalog, masks, mom, new)
        new.beta = _beta_step(resp, cov, catalog, masks, exposure, params.beta, config.beta_tol,
                              config.beta_max_iter)
        change = _max_rel_change(params, new, marks)
        params = new
        it += 1

    if not converged:
        flags.append(f"not converged after {it} iterations")
        logger.warning("EM did not converge in %d iterations", it)
    if not _cutoffs_ok(params, r, tau):
        flags.append("pair cutoffs below 5 sigma / 8 omega; truncated triggering mass may exceed 1e-3 theta")

    inside_t = j0[resp.target_index]
    expected_bg = float(np.sum(resp.p_background[inside_t]))
    child_in = j0[resp.pairs.child]
    pm = catalog.codes[resp.pairs.parent]
    expected_trig = {m: float(np.sum(resp.p_pair[child_in & (pm == k)])) for k, m in enumerate(marks)}
    return FitResult(params=params, ll_trace=trace, iterations=it, converged=converged,
                     expected_background=expected_bg, expected_triggered=expected_trig, interior=interior,
                     n_interior_targets=n_int, loglik=trace[-1], spatial_cutoff=float(r),
                     temporal_cutoff=float(tau), flags=flags)
