"""Predictive scoring: hotspot hit rate, PAI, information gain and AIC."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .em import piecewise_poisson_beta
from .geometry import CovariateMap
from .model import EventCatalog, ModelParams, event_weights, log_likelihood


@dataclass
class BaselineFit:
    """Piecewise-homogeneous Poisson fit (no triggering)."""

    params: ModelParams
    cov: CovariateMap
    loglik: float
    k: int


def fit_poisson_baseline(catalog: EventCatalog, cov: CovariateMap, columns: Sequence[int] = ()) -> BaselineFit:
    """Poisson fit using the intercept plus the listed covariate columns (1-based)."""
    sub = cov.select(columns)
    beta = piecewise_poisson_beta(sub, catalog).beta
    params = ModelParams(beta=beta, theta={m: 0.0 for m in catalog.marks}, omega=1.0, sigma2=1.0)
    return BaselineFit(params=params, cov=sub, loglik=log_likelihood(params, sub, catalog), k=sub.p)


def n_free_params(cov: CovariateMap, catalog: EventCatalog) -> int:
    """Dimension of Theta for the full model."""
    return cov.p + len(catalog.marks) + 2


def cell_integrated_intensity(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, t1: float,
                              t2: float, n_mc: int = 64, seed: int = 0) -> np.ndarray:
    """Expected number of target events in each cell over [t1, t2).

    The background part is exact; the triggering part averages the
    time-integrated kernel over ``n_mc`` uniform points per cell. History
    events at any time before t2 contribute.
    """
    if t2 < t1:
        raise ValueError("t2 must not precede t1")
    rates = np.exp(cov.log_rates(params.beta))
    out = cov.areas * rates * (t2 - t1)
    if t2 == t1 or catalog.n == 0 or not np.any(event_weights(params, catalog) > 0):
        return out
    rng = np.random.default_rng(seed)
    cells = np.repeat(np.arange(cov.ncells), n_mc)
    pts = cov.sample_in_cells(cells, rng)
    trig = kernels.point_sums(pts[:, 0], pts[:, 1], None, catalog.x, catalog.y, catalog.t,
                              event_weights(params, catalog), params.omega, params.sigma2,
                              params.delta ** 2, np.inf, np.inf, float(t1), float(t2), True)
    return out + cov.areas * trig.reshape(cov.ncells, n_mc).mean(axis=1)


def hotspot_cells(scores, areas, fraction: float) -> np.ndarray:
    """Highest-scoring cells whose cumulative area does not exceed ``fraction`` of the total."""
    if not 0 <= fraction <= 1:
        raise ValueError("hotspot fraction must lie in [0, 1]")
    scores = np.asarray(scores, dtype=float)
    areas = np.asarray(areas, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    cum = np.cumsum(areas[order]) / areas.sum()
    n = int(np.searchsorted(cum, fraction * (1 + 1e-12), side="right"))
    return order[:n]


def hit_rate(scores, areas, test_cells, fraction: float) -> float:
    """Share of test events falling in the top-ranked cells covering ``fraction`` of the area.

    ``scores`` ranks cells (typically predicted integrated intensity) and
    ``test_cells`` holds the cell index of each test event.
    """
    test_cells = np.asarray(test_cells, dtype=np.int64)
    if len(test_cells) == 0:
        raise ValueError("no test events")
    chosen = np.zeros(len(np.asarray(scores)), dtype=bool)
    chosen[hotspot_cells(scores, areas, fraction)] = True
    return float(np.mean(chosen[test_cells]))


def hit_rate_curve(scores, areas, test_cells, fractions) -> np.ndarray:
    return np.array([hit_rate(scores, areas, test_cells, f) for f in fractions])


def pai(hit: float, area_fraction: float) -> float:
    """Hit rate divided by area fraction; grows without bound as the area shrinks."""
    if area_fraction <= 0:
        raise ValueError("area fraction must be positive")
    return float(hit) / float(area_fraction)


def max_pai_cell(counts, areas) -> tuple:
    """Exhaustive search for the single cell with the largest PAI.

    Returns (cell, pai). Among cells with any events the smallest cells win,
    which is the degeneracy of PAI as a selection criterion.
    """
    counts = np.asarray(counts, dtype=float)
    areas = np.asarray(areas, dtype=float)
    total, area = counts.sum(), areas.sum()
    values = (counts / total) / (areas / area)
    k = int(np.argmax(values))
    return k, float(values[k])


def information_gain(ll_model: float, ll_baseline: float, T: float) -> float:
    """Per-unit-time log-likelihood ratio (l1 - l0) / T."""
    if T <= 0:
        raise ValueError("T must be positive")
    return (ll_model - ll_baseline) / T


def aic(ll: float, k: int) -> float:
    return 2.0 * k - 2.0 * ll


def delta_aic(ll_model: float, k_model: int, ll_baseline: float, k_baseline: int) -> float:
    """AIC(model) - AIC(baseline); negative favours the model."""
    return aic(ll_model, k_model) - aic(ll_baseline, k_baseline)


def rolling_hit_rates(params: ModelParams, cov: CovariateMap, test: EventCatalog, fractions,
                      history: EventCatalog | None = None, step: float = 1.0, n_mc: int = 8, seed: int = 0) -> dict:
    """Hit rate and PAI of step-ahead hotspot forecasts over the test window.

    Each step [a, a + step) ranks cells by expected target count given the
    events before a, then counts test target events in the selected cells.
    ``history`` events (on their own [0, T)) are placed immediately before
    the test window.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    fractions = np.asarray(fractions, dtype=float)
    if history is not None:
        if history.marks != test.marks:
            raise ValueError("history and test catalogs declare different marks")
        et = np.concatenate([history.t - history.T, test.t])
        ex = np.concatenate([history.x, test.x])
        ey = np.concatenate([history.y, test.y])
        ew = np.concatenate([event_weights(params, history), event_weights(params, test)])
    else:
        et, ex, ey, ew = test.t, test.x, test.y, event_weights(params, test)
    live = ew > 0
    et, ex, ey, ew = et[live], ex[live], ey[live], ew[live]
    max_r = 10.0 * np.sqrt(params.sigma2)
    max_dt = 12.0 * params.omega
    rng = np.random.default_rng(seed)
    pts = cov.sample_in_cells(np.repeat(np.arange(cov.ncells), n_mc), rng)
    bg = cov.areas * np.exp(cov.log_rates(params.beta))
    test_cells = test.cells(cov)
    hits = np.zeros(len(fractions))
    area_sum = np.zeros(len(fractions))
    n_test = n_steps = 0
    for a in np.arange(0.0, test.T, step):
        b = min(a + step, test.T)
        now = test.is_target & (test.t >= a) & (test.t < b)
        if not np.any(now):
            continue
        scores = bg * (b - a)
        prior = (et < a) & (et >= a - max_dt)
        if np.any(prior):
            trig = kernels.point_sums(pts[:, 0], pts[:, 1], None, ex[prior], ey[prior], et[prior], ew[prior],
                                      params.omega, params.sigma2, params.delta ** 2, max_r, max_dt,
                                      float(a), float(b), True)
            scores = scores + cov.areas * trig.reshape(cov.ncells, n_mc).mean(axis=1)
        cells_now = test_cells[now]
        for k, f in enumerate(fractions):
            chosen = np.zeros(cov.ncells, dtype=bool)
            chosen[hotspot_cells(scores, cov.areas, f)] = True
            hits[k] += np.sum(chosen[cells_now])
            area_sum[k] += cov.areas[chosen].sum() / cov.areas.sum()
        n_test += int(np.sum(now))
        n_steps += 1
    if n_test == 0:
        raise ValueError("no target events in the test window")
    rates = hits / n_test
    # realised area fraction of the selected cells can fall below the nominal one
    area_frac = area_sum / n_steps
    pai_values = np.array([pai(h, af) if af > 0 else np.nan for h, af in zip(rates, area_frac)])
    return {"fractions": fractions.tolist(), "area_fraction": area_frac.tolist(), "hit_rate": rates.tolist(),
            "pai": pai_values.tolist(), "n_test": n_test, "step": step}
