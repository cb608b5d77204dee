"""Branching (cluster) simulation of the model and of misspecified variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import SupercriticalError
from .geometry import CovariateMap, Domain, GridSpec
from .model import EventCatalog, ModelParams

SPATIAL_KERNELS = ("gaussian", "cauchy", "student_t", "boxcar", "double_exponential")
TEMPORAL_KERNELS = ("exponential", "gamma")


@dataclass
class OffspringSpec:
    """Offspring displacement and lag distributions.

    Kernels are matched to the Gaussian by per-coordinate variance sigma2
    where that exists; Cauchy (and t with nu <= 2) uses scale sigma. The
    gamma lag distribution keeps mean omega unless ``gamma_scale`` is set.
    """

    spatial_kernel: str = "gaussian"
    temporal_kernel: str = "exponential"
    nu: float = 3.0
    gamma_shape: float = 2.0
    gamma_scale: float | None = None

    def __post_init__(self):
        if self.spatial_kernel not in SPATIAL_KERNELS:
            raise ValueError(f"unknown spatial kernel {self.spatial_kernel!r}")
        if self.temporal_kernel not in TEMPORAL_KERNELS:
            raise ValueError(f"unknown temporal kernel {self.temporal_kernel!r}")
        if self.nu <= 0 or self.gamma_shape <= 0:
            raise ValueError("kernel shape parameters must be positive")


@dataclass
class SimConfig:
    cov: CovariateMap
    params: ModelParams
    T: float
    offspring: OffspringSpec = field(default_factory=OffspringSpec)
    seed: int | None = 0
    exterior: str = "drop"
    target_mark: str = "target"
    indicator_rates: dict = field(default_factory=dict)
    allow_supercritical: bool = False
    max_events: int = 2_000_000

    def __post_init__(self):
        if self.exterior not in ("drop", "retain", "record"):
            raise ValueError("exterior must be 'drop', 'retain' or 'record'")


@dataclass
class SimulationResult:
    """Observed catalog plus provenance.

    ``parent[i]`` is the catalog index of event i's parent, -1 for
    background/immigrant events and -2 when the parent was not observed
    (it fell outside the domain). ``exterior`` holds (t, x, y, generation)
    rows of unobserved offspring in ``record`` mode.
    """

    catalog: EventCatalog
    generation: np.ndarray
    parent: np.ndarray
    n_background: int
    n_after_T: int
    n_exterior: int
    exterior: np.ndarray | None = None


def sample_background(cov: CovariateMap, beta, T: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson cluster centres in each cell; rows (t, x, y)."""
    rates = np.exp(cov.log_rates(beta))
    counts = rng.poisson(cov.areas * T * rates)
    cells = np.repeat(np.arange(cov.ncells), counts)
    pts = cov.sample_in_cells(cells, rng)
    t = rng.uniform(0.0, T, len(cells))
    return np.column_stack([t, pts]) if len(cells) else np.empty((0, 3))


def sample_displacements(n: int, sigma2: float, spec: OffspringSpec, rng: np.random.Generator) -> np.ndarray:
    sigma = np.sqrt(sigma2)
    kind = spec.spatial_kernel
    if kind == "gaussian":
        return rng.normal(0.0, sigma, (n, 2))
    if kind in ("cauchy", "student_t"):
        nu = 1.0 if kind == "cauchy" else spec.nu
        scale = sigma * np.sqrt((nu - 2.0) / nu) if nu > 2 else sigma
        z = rng.standard_normal((n, 2))
        w = np.sqrt(rng.chisquare(nu, n) / nu)
        return scale * z / w[:, None]
    if kind == "boxcar":
        # uniform disc of radius 2 sigma has per-coordinate variance sigma^2
        r = 2.0 * sigma * np.sqrt(rng.random(n))
        a = rng.uniform(0, 2 * np.pi, n)
        return np.column_stack([r * np.cos(a), r * np.sin(a)])
    return rng.laplace(0.0, sigma / np.sqrt(2.0), (n, 2))


def sample_lags(n: int, omega: float, spec: OffspringSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.temporal_kernel == "exponential":
        return rng.exponential(omega, n)
    scale = spec.gamma_scale if spec.gamma_scale is not None else omega / spec.gamma_shape
    return rng.gamma(spec.gamma_shape, scale, n)


def sample_offspring(parents: np.ndarray, theta: np.ndarray, params: ModelParams, spec: OffspringSpec,
                     T: float, rng: np.random.Generator):
    """Offspring of parent rows (t, x, y) with productivities ``theta``.

    Returns (rows, parent_row_index, n_after_T); offspring at or after T are
    discarded and only counted.
    """
    parents = np.atleast_2d(parents)
    counts = rng.poisson(theta) if len(parents) else np.zeros(0, dtype=np.int64)
    idx = np.repeat(np.arange(len(parents)), counts)
    m = len(idx)
    lags = sample_lags(m, params.omega, spec, rng)
    disp = sample_displacements(m, params.sigma2, spec, rng)
    rows = np.column_stack([parents[idx, 0] + lags, parents[idx, 1] + disp[:, 0], parents[idx, 2] + disp[:, 1]])
    keep = rows[:, 0] < T
    return rows[keep], idx[keep], int(m - keep.sum())


def simulate(config: SimConfig) -> SimulationResult:
    """Draw background and immigrant events, then offspring generation by generation."""
    p = config.params
    p.validate()
    marks = (config.target_mark,) + tuple(config.indicator_rates)
    theta = p.theta_for(marks)
    if theta[0] >= 1 and not config.allow_supercritical:
        raise SupercriticalError(f"target productivity {theta[0]} >= 1; the process is not subcritical")
    rng = np.random.default_rng(config.seed)
    cov, dom, T = config.cov, config.cov.domain, config.T

    bg = sample_background(cov, p.beta, T, rng)
    rows = [bg]
    codes = [np.zeros(len(bg), dtype=np.int64)]
    for k, (mark, rate) in enumerate(config.indicator_rates.items(), start=1):
        n = rng.poisson(rate * dom.area * T)
        pts = dom.sample_uniform(n, rng)
        rows.append(np.column_stack([rng.uniform(0, T, n), pts]))
        codes.append(np.full(n, k, dtype=np.int64))
    ev = np.vstack(rows) if rows else np.empty((0, 3))
    code = np.concatenate(codes)
    gen = np.zeros(len(ev), dtype=np.int64)
    parent = np.full(len(ev), -1, dtype=np.int64)
    observed = np.ones(len(ev), dtype=bool)
    n_background = len(bg)

    n_after, n_ext = 0, 0
    current = np.arange(len(ev))
    g = 0
    while len(current):
        g += 1
        kids, pidx, after = sample_offspring(ev[current], theta[code[current]], p, config.offspring, T, rng)
        n_after += after
        inside = dom.contains(kids[:, 1], kids[:, 2]) if len(kids) else np.zeros(0, dtype=bool)
        n_ext += int((~inside).sum())
        if config.exterior == "drop":
            kids, pidx, inside = kids[inside], pidx[inside], inside[inside]
        start = len(ev)
        ev = np.vstack([ev, kids])
        code = np.concatenate([code, np.zeros(len(kids), dtype=np.int64)])
        gen = np.concatenate([gen, np.full(len(kids), g, dtype=np.int64)])
        parent = np.concatenate([parent, current[pidx]])
        observed = np.concatenate([observed, inside if config.exterior == "record" else np.ones(len(kids), bool)])
        current = np.arange(start, len(ev))
        if len(ev) > config.max_events:
            raise SupercriticalError(f"simulation exceeded {config.max_events} events")

    obs = np.flatnonzero(observed)
    order = obs[np.argsort(ev[obs, 0], kind="stable")]
    new_index = np.full(len(ev), -2, dtype=np.int64)
    new_index[order] = np.arange(len(order))
    par = parent[order]
    par = np.where(par >= 0, new_index[np.maximum(par, 0)], -1)
    sim_domain = dom
    if config.exterior == "retain" and len(order):
        x0, y0, x1, y1 = dom.bounds
        xs, ys = ev[order, 1], ev[order, 2]
        sim_domain = Domain.rectangle(min(x0, xs.min()), min(y0, ys.min()), max(x1, xs.max()) + 1e-9,
                                      max(y1, ys.max()) + 1e-9)
    catalog = EventCatalog(ev[order, 0], ev[order, 1], ev[order, 2], code[order], domain=sim_domain, T=T,
                           target_mark=config.target_mark, indicator_marks=tuple(config.indicator_rates),
                           validate=False)
    exterior = None
    if config.exterior == "record":
        ext = np.flatnonzero(~observed)
        exterior = np.column_stack([ev[ext], gen[ext]])
    return SimulationResult(catalog=catalog, generation=gen[order], parent=par, n_background=n_background,
                            n_after_T=n_after, n_exterior=n_ext, exterior=exterior)


def gp_covariate_draw(grid: GridSpec, lengthscale: float, variance: float, rng: np.random.Generator,
                      correlated: bool = False) -> np.ndarray:
    """Zero-mean squared-exponential GP field on cell centroids.

    With ``correlated=True`` returns two rows: a field and the average of
    that field with an independent draw.
    """
    n = grid.ncells
    if variance == 0:
        return np.zeros((2, n)) if correlated else np.zeros(n)
    c = grid.centroids()
    K = variance * np.exp(-cdist(c, c, "sqeuclidean") / (2.0 * lengthscale ** 2))
    L = np.linalg.cholesky(K + 1e-8 * np.eye(n))
    if not correlated:
        return L @ rng.standard_normal(n)
    z = L @ rng.standard_normal((n, 2))
    return np.vstack([z[:, 0], 0.5 * (z[:, 0] + z[:, 1])])
