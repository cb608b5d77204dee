"""Spatial domains and piecewise-constant covariate maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from .errors import DomainError, InputError


class Domain:
    """A planar observation region.

    Rectangles take an arithmetic fast path for containment and sampling;
    any other polygon goes through shapely.
    """

    def __init__(self, polygon: Polygon):
        if polygon.is_empty or polygon.area <= 0:
            raise DomainError("domain polygon has zero area")
        self.polygon = polygon
        self.bounds = tuple(float(b) for b in polygon.bounds)
        self.is_rectangle = bool(
            abs(box(*self.bounds).area - polygon.area) <= 1e-12 * polygon.area
        )
        shapely.prepare(self.polygon)

    @classmethod
    def rectangle(cls, x0, y0, x1, y1) -> "Domain":
        return cls(box(x0, y0, x1, y1))

    @property
    def area(self) -> float:
        return float(self.polygon.area)

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.bounds
        return float(np.hypot(x1 - x0, y1 - y0))

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.is_rectangle:
            x0, y0, x1, y1 = self.bounds
            return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        return shapely.intersects_xy(self.polygon, x, y)

    def erode(self, distance: float) -> "Domain":
        if distance <= 0:
            return self
        if self.is_rectangle:
            x0, y0, x1, y1 = self.bounds
            if 2 * distance >= min(x1 - x0, y1 - y0):
                raise DomainError(f"eroding by {distance} leaves an empty region")
            return Domain.rectangle(x0 + distance, y0 + distance, x1 - distance, y1 - distance)
        inner = self.polygon.buffer(-distance)
        if inner.is_empty:
            raise DomainError(f"eroding by {distance} leaves an empty region")
        if inner.geom_type == "MultiPolygon":
            inner = max(inner.geoms, key=lambda g: g.area)
        return Domain(inner)

    def expand(self, distance: float) -> "Domain":
        if self.is_rectangle:
            x0, y0, x1, y1 = self.bounds
            return Domain.rectangle(x0 - distance, y0 - distance, x1 + distance, y1 + distance)
        return Domain(self.polygon.buffer(distance))

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform points, by rejection from the bounding box."""
        x0, y0, x1, y1 = self.bounds
        if self.is_rectangle:
            return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
        out = np.empty((0, 2))
        accept = self.area / ((x1 - x0) * (y1 - y0))
        while len(out) < n:
            m = int(1.2 * (n - len(out)) / accept) + 16
            pts = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
            out = np.vstack([out, pts[self.contains(pts[:, 0], pts[:, 1])]])
        return out[:n]

    def __repr__(self):
        kind = "rectangle" if self.is_rectangle else "polygon"
        return f"Domain({kind}, bounds={self.bounds})"


@dataclass
class GridSpec:
    origin_x: float
    origin_y: float
    dx: float
    dy: float
    ncols: int
    nrows: int

    @property
    def ncells(self) -> int:
        return self.ncols * self.nrows

    def centroids(self) -> np.ndarray:
        """Cell centres in row-major order (row 0 at origin_y)."""
        cx = self.origin_x + (np.arange(self.ncols) + 0.5) * self.dx
        cy = self.origin_y + (np.arange(self.nrows) + 0.5) * self.dy
        gx, gy = np.meshgrid(cx, cy)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def domain(self) -> Domain:
        return Domain.rectangle(
            self.origin_x,
            self.origin_y,
            self.origin_x + self.ncols * self.dx,
            self.origin_y + self.nrows * self.dy,
        )


@dataclass
class CovariateMap:
    """Partition of the domain into cells carrying covariate vectors.

    ``design`` always has the intercept as its first column. Grid maps
    resolve ``cell_index`` arithmetically; polygon maps use an STR-tree.
    """

    design: np.ndarray
    areas: np.ndarray
    names: tuple
    grid: GridSpec | None = None
    polygons: list | None = None
    domain: Domain = field(default=None)

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.areas = np.asarray(self.areas, dtype=float)
        if len(self.names) != self.design.shape[1]:
            raise InputError("covariate names do not match design columns")
        if not np.allclose(self.design[:, 0], 1.0):
            raise InputError("first design column must be the intercept (all ones)")
        if not np.all(np.isfinite(self.design)):
            raise InputError("covariate values must be finite")
        if self.grid is None and self.polygons is None:
            raise InputError("a covariate map needs a grid or polygons")
        if self.domain is None:
            if self.grid is not None:
                self.domain = self.grid.domain()
            else:
                self.domain = Domain(shapely.union_all(self.polygons))
        self._tree = None

    @classmethod
    def from_grid(cls, grid: GridSpec, covariates=None, names: Sequence[str] = ()) -> "CovariateMap":
        n = grid.ncells
        if covariates is None:
            covariates = np.zeros((n, 0))
        covariates = np.asarray(covariates, dtype=float).reshape(n, -1)
        design = np.column_stack([np.ones(n), covariates])
        names = ("intercept",) + tuple(names or (f"x{k + 1}" for k in range(covariates.shape[1])))
        return cls(design=design, areas=np.full(n, grid.dx * grid.dy), names=names, grid=grid)

    @classmethod
    def from_polygons(cls, polygons, covariates, names: Sequence[str] = (), domain: Domain | None = None,
                      tolerance: float = 1e-9) -> "CovariateMap":
        covariates = np.asarray(covariates, dtype=float).reshape(len(polygons), -1)
        design = np.column_stack([np.ones(len(polygons)), covariates])
        names = ("intercept",) + tuple(names or (f"x{k + 1}" for k in range(covariates.shape[1])))
        cmap = cls(
            design=design,
            areas=np.array([p.area for p in polygons]),
            names=names,
            polygons=list(polygons),
            domain=domain,
        )
        cmap.validate_tiling(tolerance)
        return cmap

    @classmethod
    def homogeneous(cls, domain: Domain) -> "CovariateMap":
        """One cell covering the whole domain, intercept only."""
        if domain.is_rectangle:
            x0, y0, x1, y1 = domain.bounds
            return cls.from_grid(GridSpec(x0, y0, x1 - x0, y1 - y0, 1, 1))
        return cls(design=np.ones((1, 1)), areas=np.array([domain.area]), names=("intercept",),
                   polygons=[domain.polygon], domain=domain)

    @property
    def ncells(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def validate_tiling(self, tolerance: float = 1e-9) -> None:
        """Gap/overlap check relative to the domain area."""
        if self.polygons is None:
            return
        union = shapely.union_all(self.polygons)
        total = float(self.areas.sum())
        dom = self.domain.area
        overlap = total - union.area
        if overlap > tolerance * dom:
            raise InputError(f"covariate cells overlap (excess area {overlap:.6g})")
        gap = self.domain.polygon.symmetric_difference(union).area
        if gap > tolerance * dom:
            raise InputError(f"covariate cells leave gaps or spill outside the domain (area {gap:.6g})")

    def cell_polygon(self, k: int) -> Polygon:
        if self.polygons is not None:
            return self.polygons[k]
        g = self.grid
        r, c = divmod(int(k), g.ncols)
        x0 = g.origin_x + c * g.dx
        y0 = g.origin_y + r * g.dy
        return box(x0, y0, x0 + g.dx, y0 + g.dy)

    def cell_index(self, x, y, strict: bool = True) -> np.ndarray:
        """Index of the cell containing each point; -1 (or an error) outside."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.grid is not None:
            g = self.grid
            cx = np.floor((x - g.origin_x) / g.dx).astype(np.int64)
            cy = np.floor((y - g.origin_y) / g.dy).astype(np.int64)
            # points on the far edge belong to the last cell
            cx = np.where(x == g.origin_x + g.ncols * g.dx, g.ncols - 1, cx)
            cy = np.where(y == g.origin_y + g.nrows * g.dy, g.nrows - 1, cy)
            ok = (cx >= 0) & (cx < g.ncols) & (cy >= 0) & (cy < g.nrows)
            idx = np.where(ok, cy * g.ncols + cx, -1)
        else:
            if self._tree is None:
                self._tree = shapely.STRtree(self.polygons)
            pts = shapely.points(x, y)
            pi, ci = self._tree.query(pts, predicate="intersects")
            idx = np.full(len(x), -1, dtype=np.int64)
            # first match wins for points on shared edges
            order = np.lexsort((ci, pi))
            pi, ci = pi[order], ci[order]
            first = np.ones(len(pi), dtype=bool)
            first[1:] = pi[1:] != pi[:-1]
            idx[pi[first]] = ci[first]
        if strict and np.any(idx < 0):
            bad = int(np.flatnonzero(idx < 0)[0])
            raise DomainError(f"point ({x[bad]}, {y[bad]}) lies outside every covariate cell")
        return idx

    def log_rates(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.p,):
            raise ValueError(f"beta has length {beta.size}, expected {self.p}")
        return self.design @ beta

    def intersect_areas(self, region: Domain) -> np.ndarray:
        """|c ∩ region| for every cell."""
        if region is self.domain:
            return self.areas.copy()
        if self.grid is not None and region.is_rectangle:
            g = self.grid
            rx0, ry0, rx1, ry1 = region.bounds
            x0 = g.origin_x + np.arange(g.ncols) * g.dx
            y0 = g.origin_y + np.arange(g.nrows) * g.dy
            wx = np.clip(np.minimum(x0 + g.dx, rx1) - np.maximum(x0, rx0), 0, None)
            wy = np.clip(np.minimum(y0 + g.dy, ry1) - np.maximum(y0, ry0), 0, None)
            return np.outer(wy, wx).ravel()
        cells = [self.cell_polygon(k) for k in range(self.ncells)]
        return shapely.area(shapely.intersection(np.array(cells, dtype=object), region.polygon))

    def sample_in_cells(self, cells: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One uniform point inside each listed cell."""
        cells = np.asarray(cells, dtype=np.int64)
        if self.grid is not None:
            g = self.grid
            r, c = np.divmod(cells, g.ncols)
            x = g.origin_x + (c + rng.random(len(cells))) * g.dx
            y = g.origin_y + (r + rng.random(len(cells))) * g.dy
            return np.column_stack([x, y])
        out = np.empty((len(cells), 2))
        for k in np.unique(cells):
            sel = np.flatnonzero(cells == k)
            out[sel] = Domain(self.polygons[k]).sample_uniform(len(sel), rng)
        return out

    def select(self, columns: Sequence[int]) -> "CovariateMap":
        """Keep the intercept plus the listed non-intercept columns (1-based)."""
        keep = [0] + [int(c) for c in columns if int(c) != 0]
        return CovariateMap(
            design=self.design[:, keep],
            areas=self.areas,
            names=tuple(self.names[k] for k in keep),
            grid=self.grid,
            polygons=self.polygons,
            domain=self.domain,
        )
