"""Voronoi residuals, their Gamma reference distribution and smoothed residual fields.

For a window [t1, t2) each target event in the window generates a Voronoi
cell clipped to the domain, with raw residual

    r_i = 1 - integral over the cell of the time-integrated intensity,

estimated by Monte Carlo. Normal scores -Phi^{-1}(F(1 - r_i)) use a Gamma
reference F, so positive scores mark more events than predicted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import special, stats
from scipy.spatial import Voronoi
from shapely.geometry import Polygon, mapping

from . import kernels
from .geometry import CovariateMap, Domain, GridSpec
from .model import EventCatalog, ModelParams, event_weights


@dataclass(frozen=True)
class GammaReference:
    """Gamma(shape, rate) reference law for 1 - r."""

    shape: float
    rate: float
    n_rejected: int = 0

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def dist(self):
        return stats.gamma(self.shape, scale=1.0 / self.rate)

    def median(self) -> float:
        return float(self.dist.median())


# Reference laws: homogeneous Poisson Voronoi cells, and a fit to residuals of
# simulated self-exciting processes with covariate backgrounds.
HOMOGENEOUS_REFERENCE = GammaReference(3.569, 3.569)
FITTED_REFERENCE = GammaReference(3.389, 3.400)


@dataclass
class VoronoiCell:
    index: int
    generator: tuple
    generator_time: float
    polygon: Polygon
    integral: float
    mc_se: float
    r_raw: float
    z: float = float("nan")


@dataclass
class ResidualMap:
    """Voronoi cells for one window."""

    cells: list
    window: tuple
    reference: GammaReference
    flags: list = field(default_factory=list)

    @property
    def r_raw(self) -> np.ndarray:
        return np.array([c.r_raw for c in self.cells])

    @property
    def z(self) -> np.ndarray:
        return np.array([c.z for c in self.cells])

    @property
    def mc_se(self) -> np.ndarray:
        return np.array([c.mc_se for c in self.cells])

    @property
    def integrals(self) -> np.ndarray:
        return np.array([c.integral for c in self.cells])

    def __len__(self):
        return len(self.cells)

    def to_geojson(self) -> dict:
        feats = []
        for c in self.cells:
            feats.append({"type": "Feature", "geometry": mapping(c.polygon),
                          "properties": {"r_raw": c.r_raw, "z": c.z, "mc_se": c.mc_se,
                                         "generator_time": c.generator_time,
                                         "generator_x": c.generator[0], "generator_y": c.generator[1]}})
        return {"type": "FeatureCollection", "features": feats,
                "properties": {"window": list(self.window),
                               "reference": {"shape": self.reference.shape, "rate": self.reference.rate},
                               "flags": list(self.flags)}}


def integrated_intensity(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, window, s,
                         max_r: float = np.inf) -> np.ndarray | float:
    """Integral of lambda(s, t) over t in [t1, t2) at one or many points, in closed form."""
    t1, t2 = (float(w) for w in window)
    if t2 < t1:
        raise ValueError("window end precedes its start")
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 1
    pts = np.atleast_2d(s)
    mu = np.exp(cov.log_rates(params.beta)[cov.cell_index(pts[:, 0], pts[:, 1])])
    out = mu * (t2 - t1)
    w = event_weights(params, catalog)
    live = (w != 0) & (catalog.t < t2)
    if t2 > t1 and np.any(live):
        out = out + kernels.point_sums(pts[:, 0], pts[:, 1], None, catalog.x[live], catalog.y[live],
                                       catalog.t[live], w[live], params.omega, params.sigma2,
                                       params.delta ** 2, float(max_r), np.inf, t1, t2, True)
    return float(out[0]) if scalar else out


def voronoi_polygons(points: np.ndarray, domain: Domain) -> list:
    """Voronoi cells of ``points`` clipped to the domain, in input order."""
    points = np.asarray(points, dtype=float)
    x0, y0, x1, y1 = domain.bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    span = max(x1 - x0, y1 - y0, np.ptp(points[:, 0]), np.ptp(points[:, 1]), 1.0)
    far = 10.0 * span
    dummies = np.array([[cx - far, cy - far], [cx + far, cy - far], [cx + far, cy + far], [cx - far, cy + far]])
    vor = Voronoi(np.vstack([points, dummies]))
    out = []
    for i in range(len(points)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise RuntimeError("unbounded Voronoi region for an interior generator")
        cell = Polygon(vor.vertices[region])
        out.append(shapely.make_valid(cell).intersection(domain.polygon))
    return out


def _jitter_duplicates(x, y, amount, rng):
    pts = np.column_stack([x, y])
    _, inv, counts = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
    inv = np.asarray(inv).ravel()
    dup = counts[inv] > 1
    if not np.any(dup):
        return x, y, 0
    angle = rng.uniform(0, 2 * np.pi, int(dup.sum()))
    x, y = x.copy(), y.copy()
    x[dup] += amount * np.cos(angle)
    y[dup] += amount * np.sin(angle)
    return x, y, int(dup.sum())


def _cell_points(poly: Polygon, n: int, rng: np.random.Generator) -> np.ndarray:
    """n uniform points in ``poly`` by rejection from its bounding box."""
    bx0, by0, bx1, by1 = poly.bounds
    frac = poly.area / max((bx1 - bx0) * (by1 - by0), 1e-300)
    out, have = [], 0
    while have < n:
        m = int((n - have) / max(frac, 1e-3) * 1.2) + 16
        x = rng.uniform(bx0, bx1, m)
        y = rng.uniform(by0, by1, m)
        ok = shapely.contains_xy(poly, x, y)
        out.append(np.column_stack([x[ok], y[ok]]))
        have += int(ok.sum())
    return np.vstack(out)[:n]


def voronoi_residuals(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, window,
                      n_mc: int = 2000, seed: int = 0, reference: GammaReference = FITTED_REFERENCE,
                      max_r: float | None = None) -> ResidualMap:
    """Raw and normal-score residuals over the Voronoi cells of target events in the window.

    Each cell integral is a Monte Carlo mean over ``n_mc`` uniform points
    times the cell area; cell k draws from the sub-stream (seed, k).
    """
    t1, t2 = (float(w) for w in window)
    if not (0 <= t1 < t2 <= catalog.T):
        raise ValueError(f"window must satisfy 0 <= t1 < t2 <= {catalog.T}")
    sel = np.flatnonzero(catalog.is_target & (catalog.t >= t1) & (catalog.t < t2))
    if len(sel) < 3:
        raise ValueError(f"at least 3 events are needed in the window, found {len(sel)}")
    if max_r is None:
        max_r = 10.0 * np.sqrt(params.sigma2)
    flags = []
    gx, gy = catalog.x[sel], catalog.y[sel]
    amount = params.delta / 10.0 if params.delta > 0 else 1e-6 * catalog.domain.diameter
    gx, gy, ndup = _jitter_duplicates(gx, gy, amount, np.random.default_rng([seed, 2 ** 31 - 1]))
    if ndup:
        msg = f"{ndup} generators share locations; jittered by {amount:.3g}"
        warnings.warn(msg)
        flags.append(msg)
    polys = voronoi_polygons(np.column_stack([gx, gy]), catalog.domain)
    pts, owner = [], []
    for k, poly in enumerate(polys):
        rng = np.random.default_rng([seed, k])
        pts.append(_cell_points(poly, n_mc, rng))
        owner.append(np.full(n_mc, k))
    pts = np.vstack(pts)
    vals = integrated_intensity(params, cov, catalog, (t1, t2), pts, max_r=max_r).reshape(len(polys), n_mc)
    areas = np.array([p.area for p in polys])
    integral = areas * vals.mean(axis=1)
    se = areas * vals.std(axis=1, ddof=1) / np.sqrt(n_mc)
    r = 1.0 - integral
    z = normal_score(r, reference)
    cells = [VoronoiCell(index=int(sel[k]), generator=(float(gx[k]), float(gy[k])),
                         generator_time=float(catalog.t[sel[k]]), polygon=polys[k], integral=float(integral[k]),
                         mc_se=float(se[k]), r_raw=float(r[k]), z=float(z[k])) for k in range(len(sel))]
    return ResidualMap(cells=cells, window=(t1, t2), reference=reference, flags=flags)


def normal_score(r, reference: GammaReference = FITTED_REFERENCE):
    """-Phi^{-1}(F(1 - r)), computed on whichever tail keeps precision."""
    r = np.asarray(r, dtype=float)
    x = 1.0 - r
    d = reference.dist
    cdf = d.cdf(x)
    sf = d.sf(x)
    z = np.where(cdf < 0.5, -stats.norm.ppf(cdf), stats.norm.ppf(sf))
    return float(z) if z.ndim == 0 else z


def fit_gamma_reference(samples) -> GammaReference:
    """Maximum-likelihood Gamma(shape, rate) for positive samples of 1 - r.

    Non-positive samples are dropped and counted in ``n_rejected``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    keep = x > 0
    rejected = int(np.sum(~keep))
    x = x[keep]
    if len(x) < 2:
        raise ValueError(f"need at least two positive samples ({rejected} non-positive rejected)")
    mean = float(x.mean())
    s = np.log(mean) - float(np.mean(np.log(x)))
    if not s > 1e-12:
        raise ValueError("samples are constant; the Gamma likelihood has no maximum")
    k = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(100):
        f = np.log(k) - special.digamma(k) - s
        fp = 1.0 / k - special.polygamma(1, k)
        step = f / fp
        k_new = k - step
        if k_new <= 0:
            k_new = k / 2.0
        if abs(k_new - k) <= 1e-12 * k:
            k = k_new
            break
        k = k_new
    return GammaReference(shape=float(k), rate=float(k / mean), n_rejected=rejected)


def smooth_residual_field(times, xs, ys, residuals, frame_time: float, grid: GridSpec, omega: float,
                          sigma2: float) -> np.ndarray:
    """sum_j r_j exp(-(tau - t_j)/omega)/omega N2(s - s_j; sigma2) over t_j < tau, on grid centroids.

    Returns an (nrows, ncols) array, row 0 at the grid origin.
    """
    times = np.asarray(times, dtype=float)
    c = grid.centroids()
    field_vals = kernels.point_sums(c[:, 0], c[:, 1], np.full(len(c), float(frame_time)),
                                    np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), times,
                                    np.asarray(residuals, dtype=float), omega, sigma2, 0.0, np.inf, np.inf,
                                    0.0, 0.0, False)
    return field_vals.reshape(grid.nrows, grid.ncols)


@dataclass
class ResidualSeries:
    frames: np.ndarray
    frame_times: np.ndarray
    windows: list
    grid: GridSpec
    maps: list

    def sidecar(self) -> dict:
        g = self.grid
        return {"origin_x": g.origin_x, "origin_y": g.origin_y, "cell_dx": g.dx, "cell_dy": g.dy,
                "ncols": g.ncols, "nrows": g.nrows, "frame_times": self.frame_times.tolist(),
                "windows": [list(w) for w in self.windows], "row_order": "row 0 at origin_y"}


def default_raster(domain: Domain, n: int = 100) -> GridSpec:
    x0, y0, x1, y1 = domain.bounds
    d = max(x1 - x0, y1 - y0) / n
    return GridSpec(x0, y0, d, d, int(np.ceil((x1 - x0) / d)), int(np.ceil((y1 - y0) / d)))


def residual_series(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, t1: float, dt: float,
                    frames: int, grid: GridSpec | None = None, n_mc: int = 2000, seed: int = 0,
                    reference: GammaReference = FITTED_REFERENCE, omega: float | None = None,
                    sigma2: float | None = None) -> ResidualSeries:
    """Smoothed residual fields at the ends of windows [t1 + (i-1) dt, t1 + i dt).

    Frame i smooths the residuals of all windows up to i with an
    exponential time kernel and Gaussian space kernel, by default with the
    fitted omega and sigma2. Windows with fewer than 3 events contribute
    nothing.
    """
    if dt <= 0 or frames < 1:
        raise ValueError("dt must be positive and frames at least 1")
    if t1 + frames * dt > catalog.T + 1e-9 * max(1.0, catalog.T):
        raise ValueError("frames extend past the end of the observation window")
    grid = grid or default_raster(catalog.domain)
    om = omega if omega is not None else params.omega
    s2 = sigma2 if sigma2 is not None else params.sigma2
    T_, X_, Y_, R_ = [], [], [], []
    out, maps, windows = [], [], []
    for i in range(frames):
        w = (t1 + i * dt, min(t1 + (i + 1) * dt, catalog.T))
        windows.append(w)
        n_in = int(np.sum(catalog.is_target & (catalog.t >= w[0]) & (catalog.t < w[1])))
        rm = None
        if n_in >= 3:
            rm = voronoi_residuals(params, cov, catalog, w, n_mc=n_mc, seed=seed + i, reference=reference)
            T_.extend(c.generator_time for c in rm.cells)
            X_.extend(c.generator[0] for c in rm.cells)
            Y_.extend(c.generator[1] for c in rm.cells)
            R_.extend(c.r_raw for c in rm.cells)
        maps.append(rm)
        out.append(smooth_residual_field(T_, X_, Y_, R_, w[1], grid, om, s2))
    return ResidualSeries(frames=np.array(out), frame_times=np.array([w[1] for w in windows]),
                          windows=windows, grid=grid, maps=maps)
