"""Event catalogs, model parameters, conditional intensity and log-likelihood.

The intensity is

    lambda(s, t) = exp(beta . X_C(s)) + sum_{t_j < t} g(s - s_j, t - t_j, M_j)

with g(ds, dt, M) = theta_M * exp(-dt/omega)/omega * N2(ds; 0, sigma2 I),
zeroed for |ds| < delta. ``omega`` is the mean decay time, not a rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DomainError, NumericError
from .geometry import CovariateMap, Domain


@dataclass(frozen=True)
class Event:
    t: float
    x: float
    y: float
    mark: str


class EventCatalog:
    """Time-ordered marked events observed on ``domain`` x [0, T).

    Marks are stored as integer codes into ``marks``; code 0 is always the
    target mark and the remaining codes are leading-indicator marks.
    """

    def __init__(self, t, x, y, mark=None, *, domain: Domain, T: float, target_mark="target",
                 indicator_marks: Sequence = (), validate: bool = True):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if not (len(t) == len(x) == len(y)):
            raise ValueError("t, x, y must have equal length")
        target_mark = str(target_mark)
        indicator_marks = tuple(str(m) for m in indicator_marks)
        if target_mark in indicator_marks:
            raise ValueError("target mark cannot also be an indicator mark")
        self.marks = (target_mark,) + indicator_marks
        if mark is None:
            codes = np.zeros(len(t), dtype=np.int64)
        else:
            mark = np.atleast_1d(np.asarray(mark))
            if np.issubdtype(mark.dtype, np.integer) and not np.issubdtype(np.asarray(self.marks).dtype, np.integer):
                codes = mark.astype(np.int64)
                if len(codes) and (codes.min() < 0 or codes.max() >= len(self.marks)):
                    raise ValueError("mark code out of range")
            else:
                lookup = {m: k for k, m in enumerate(self.marks)}
                try:
                    codes = np.array([lookup[str(m)] for m in mark], dtype=np.int64)
                except KeyError as exc:
                    raise ValueError(f"undeclared mark {exc.args[0]!r}") from None
        order = np.argsort(t, kind="stable")
        self.t = t[order]
        self.x = x[order]
        self.y = y[order]
        self.codes = codes[order]
        self.domain = domain
        self.T = float(T)
        self._cell_cache = None
        if validate:
            self.validate()

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("event times and coordinates must be finite")
        if self.T <= 0:
            raise ValueError("observation window length must be positive")
        if len(self.t) and (self.t[0] < 0 or self.t[-1] >= self.T):
            raise ValueError(f"event times must lie in [0, {self.T})")
        inside = self.domain.contains(self.x, self.y)
        if not np.all(inside):
            k = int(np.flatnonzero(~inside)[0])
            raise DomainError(f"event at ({self.x[k]}, {self.y[k]}) lies outside the domain")

    @classmethod
    def from_events(cls, events: Sequence[Event], **kwargs) -> "EventCatalog":
        return cls([e.t for e in events], [e.x for e in events], [e.y for e in events],
                   [e.mark for e in events], **kwargs)

    def __len__(self):
        return len(self.t)

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def target_mark(self) -> str:
        return self.marks[0]

    @property
    def indicator_marks(self) -> tuple:
        return self.marks[1:]

    @property
    def is_target(self) -> np.ndarray:
        return self.codes == 0

    @property
    def events(self) -> list:
        return [Event(float(t), float(x), float(y), self.marks[c])
                for t, x, y, c in zip(self.t, self.x, self.y, self.codes)]

    def subset(self, mask, *, domain=None, T=None, t_shift=0.0) -> "EventCatalog":
        mask = np.asarray(mask)
        return EventCatalog(self.t[mask] - t_shift, self.x[mask], self.y[mask], self.codes[mask],
                            domain=domain if domain is not None else self.domain,
                            T=T if T is not None else self.T,
                            target_mark=self.marks[0], indicator_marks=self.marks[1:])

    def crop(self, domain: Domain, t_start: float, t_end: float) -> "EventCatalog":
        """Events inside ``domain`` x [t_start, t_end), re-timed to start at 0."""
        mask = domain.contains(self.x, self.y) & (self.t >= t_start) & (self.t < t_end)
        return self.subset(mask, domain=domain, T=t_end - t_start, t_shift=t_start)

    def cells(self, cov: CovariateMap) -> np.ndarray:
        if self._cell_cache is None or self._cell_cache[0] is not cov:
            self._cell_cache = (cov, cov.cell_index(self.x, self.y))
        return self._cell_cache[1]

    def __repr__(self):
        return f"EventCatalog(n={self.n}, marks={self.marks}, T={self.T})"


@dataclass
class ModelParams:
    beta: np.ndarray
    theta: dict
    omega: float
    sigma2: float
    delta: float = 0.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).copy()
        self.theta = {str(k): float(v) for k, v in self.theta.items()}
        self.omega = float(self.omega)
        self.sigma2 = float(self.sigma2)
        self.delta = float(self.delta)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta must be finite")
        if not (self.omega > 0 and np.isfinite(self.omega)):
            raise ValueError("omega must be positive")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be positive")
        if any(not (v >= 0 and np.isfinite(v)) for v in self.theta.values()):
            raise ValueError("theta values must be finite and non-negative")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    def theta_for(self, marks: Sequence[str]) -> np.ndarray:
        return np.array([self.theta.get(m, 0.0) for m in marks])

    @property
    def delta_mass(self) -> float:
        """Share of the spatial Gaussian outside the delta-ball."""
        return float(np.exp(-self.delta ** 2 / (2.0 * self.sigma2)))

    def to_vector(self, marks: Sequence[str]) -> np.ndarray:
        return np.concatenate([self.beta, self.theta_for(marks), [self.omega, self.sigma2]])

    @classmethod
    def from_vector(cls, vec, marks: Sequence[str], p: int, delta: float = 0.0) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        k = len(marks)
        return cls(beta=vec[:p], theta=dict(zip(marks, vec[p:p + k])), omega=vec[p + k],
                   sigma2=vec[p + k + 1], delta=delta)

    @staticmethod
    def vector_names(beta_names: Sequence[str], marks: Sequence[str]) -> list:
        return [f"beta[{b}]" for b in beta_names] + [f"theta[{m}]" for m in marks] + ["omega", "sigma2"]

    def copy(self) -> "ModelParams":
        return ModelParams(self.beta.copy(), dict(self.theta), self.omega, self.sigma2, self.delta)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "theta": dict(self.theta), "omega": self.omega,
                "sigma2": self.sigma2, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(beta=d["beta"], theta=d["theta"], omega=d["omega"], sigma2=d["sigma2"],
                   delta=d.get("delta", 0.0))


@dataclass
class InteriorSpec:
    """Interior region X0 and time T0 over which M-step averages run."""

    x0: Domain
    t0: float

    def validate(self, domain: Domain, T: float) -> None:
        if not (0 < self.t0 <= T):
            raise ValueError(f"interior end time must lie in (0, {T}]")
        if self.x0 is not domain and self.x0.polygon.difference(domain.polygon).area > 1e-9 * domain.area:
            raise ValueError("interior region must lie inside the domain")

    def contains(self, catalog: EventCatalog) -> np.ndarray:
        return self.x0.contains(catalog.x, catalog.y) & (catalog.t < self.t0)

    @classmethod
    def full(cls, catalog: EventCatalog) -> "InteriorSpec":
        return cls(catalog.domain, catalog.T)


@dataclass
class PairSet:
    """Sparse (child, parent) pairs with t_parent < t_child; children are target events."""

    child: np.ndarray
    parent: np.ndarray
    dt: np.ndarray
    r2: np.ndarray
    max_dt: float = np.inf
    max_r: float = np.inf

    def __len__(self):
        return len(self.child)


def empty_pairs() -> PairSet:
    e = np.empty(0, dtype=np.int64)
    return PairSet(e, e, np.empty(0), np.empty(0))


def build_pairs(catalog: EventCatalog, max_dt: float = np.inf, max_r: float = np.inf) -> PairSet:
    child, parent = kernels.find_pairs(catalog.t, catalog.x, catalog.y, catalog.is_target,
                                       float(max_dt), float(max_r))
    dt = catalog.t[child] - catalog.t[parent]
    r2 = (catalog.x[child] - catalog.x[parent]) ** 2 + (catalog.y[child] - catalog.y[parent]) ** 2
    return PairSet(child, parent, dt, r2, float(max_dt), float(max_r))


def background_intensity(params: ModelParams, cov: CovariateMap, s) -> np.ndarray | float:
    """exp(beta . X_C(s)) at one point (x, y) or an (n, 2) array of points."""
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 1
    pts = np.atleast_2d(s)
    idx = cov.cell_index(pts[:, 0], pts[:, 1])
    val = np.exp(cov.log_rates(params.beta)[idx])
    return float(val[0]) if scalar else val


def triggering(params: ModelParams, ds, dt, mark: str):
    """g(ds, dt, M) for displacement(s) ``ds`` and lag(s) ``dt`` > 0."""
    dt = np.asarray(dt, dtype=float)
    if np.any(dt <= 0):
        raise ValueError("triggering requires a strictly positive time lag")
    ds = np.asarray(ds, dtype=float)
    r2 = np.sum(ds * ds, axis=-1)
    theta = params.theta.get(mark, 0.0)
    val = (theta / params.omega) * np.exp(-dt / params.omega) \
        * np.exp(-r2 / (2 * params.sigma2)) / (2 * np.pi * params.sigma2)
    val = np.where(r2 < params.delta ** 2, 0.0, val)
    return float(val) if val.ndim == 0 else val


def event_weights(params: ModelParams, catalog: EventCatalog) -> np.ndarray:
    return params.theta_for(catalog.marks)[catalog.codes]


def conditional_intensity(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, s, t,
                          max_r: float = np.inf, max_dt: float = np.inf):
    """lambda(s, t) at one or many points; only strictly earlier events excite."""
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 1
    pts = np.atleast_2d(s)
    tt = np.broadcast_to(np.asarray(t, dtype=float), (len(pts),))
    mu = background_intensity(params, cov, pts)
    trig = kernels.point_sums(pts[:, 0], pts[:, 1], tt, catalog.x, catalog.y, catalog.t,
                              event_weights(params, catalog), params.omega, params.sigma2,
                              params.delta ** 2, float(max_r), float(max_dt), 0.0, 0.0, False)
    val = mu + trig
    return float(val[0]) if scalar else val


def _window(catalog: EventCatalog, window):
    if window is None:
        return 0.0, catalog.T
    ta, tb = (float(w) for w in window)
    if not (0 <= ta < tb <= catalog.T):
        raise ValueError(f"window must satisfy 0 <= t1 < t2 <= {catalog.T}")
    return ta, tb


def _temporal_mass(catalog: EventCatalog, omega: float, ta: float, tb: float):
    """Per-event share of the time kernel falling in [ta, tb), with the lags used."""
    before = catalog.t < tb
    a = np.maximum(ta - catalog.t, 0.0)
    b = tb - catalog.t
    mass = np.where(before, np.exp(-a / omega) - np.exp(-b / omega), 0.0)
    return mass, a, b, before


def _clipped_spatial_mass(params: ModelParams, catalog: EventCatalog, n_mc: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n_mc, 2)) * np.sqrt(params.sigma2)
    outside_delta = np.sum(z * z, axis=1) >= params.delta ** 2
    out = np.empty(catalog.n)
    for j in range(catalog.n):
        inside = catalog.domain.contains(catalog.x[j] + z[:, 0], catalog.y[j] + z[:, 1])
        out[j] = np.mean(inside & outside_delta)
    return out


def compensator(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, window=None,
                spatial: str = "r2", n_mc: int = 1000, seed: int = 0) -> float:
    """Integral of lambda over the domain and window.

    ``spatial="r2"`` integrates each triggering kernel over the whole plane;
    ``"clipped"`` estimates the share of each kernel inside the domain by
    Monte Carlo.
    """
    ta, tb = _window(catalog, window)
    background = float(np.sum(cov.areas * (tb - ta) * np.exp(cov.log_rates(params.beta))))
    mass, *_ = _temporal_mass(catalog, params.omega, ta, tb)
    if spatial == "r2":
        smass = params.delta_mass
    elif spatial == "clipped":
        smass = _clipped_spatial_mass(params, catalog, n_mc, seed)
    else:
        raise ValueError(f"unknown spatial mode {spatial!r}")
    return background + float(np.sum(event_weights(params, catalog) * mass * smass))


def _event_intensity(params, cov, catalog, pairs):
    """lambda at every event (zero triggering for non-target events) plus pieces."""
    w = event_weights(params, catalog)
    g, trig = kernels.trigger_pairs(pairs.child, pairs.dt, pairs.r2, w[pairs.parent],
                                    params.omega, params.sigma2, params.delta ** 2, catalog.n)
    mu = np.exp(cov.log_rates(params.beta)[catalog.cells(cov)])
    return mu, g, trig


def log_likelihood(params: ModelParams, cov: CovariateMap, catalog: EventCatalog,
                   pairs: PairSet | None = None, window=None, spatial: str = "r2") -> float:
    """Sum of log lambda over target events in the window minus the compensator."""
    ta, tb = _window(catalog, window)
    if not np.any(catalog.is_target & (catalog.t >= ta) & (catalog.t < tb)):
        raise ValueError("no target events in the likelihood window")
    if pairs is None:
        pairs = build_pairs(catalog) if np.any(event_weights(params, catalog) > 0) else empty_pairs()
    mu, _, trig = _event_intensity(params, cov, catalog, pairs)
    sel = catalog.is_target & (catalog.t >= ta) & (catalog.t < tb)
    lam = mu[sel] + trig[sel]
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = float(np.sum(np.log(lam))) - compensator(params, cov, catalog, (ta, tb), spatial)
    if not np.isfinite(ll):
        raise NumericError("log-likelihood is not finite", params.to_dict())
    return ll


def event_gradients(params: ModelParams, cov: CovariateMap, catalog: EventCatalog,
                    pairs: PairSet | None = None):
    """lambda and d lambda / d Theta at every target event.

    Returns (lam, grad) with grad of shape (n_target, k) in the
    ``ModelParams.to_vector`` order (beta, theta per mark, omega, sigma2).
    """
    if pairs is None:
        pairs = build_pairs(catalog)
    mu, g, trig = _event_intensity(params, cov, catalog, pairs)
    p, nm, n = cov.p, len(catalog.marks), catalog.n
    X = cov.design[catalog.cells(cov)]
    om, s2 = params.omega, params.sigma2
    # theta-free kernel, so the theta block stays defined at theta = 0
    k_unit, _ = kernels.trigger_pairs(pairs.child, pairs.dt, pairs.r2, np.ones(len(pairs)),
                                      om, s2, params.delta ** 2, n)
    grad = np.zeros((n, p + nm + 2))
    grad[:, :p] = mu[:, None] * X
    pm = catalog.codes[pairs.parent]
    for m in range(nm):
        sel = pm == m
        grad[:, p + m] = np.bincount(pairs.child[sel], weights=k_unit[sel], minlength=n)
    grad[:, p + nm] = np.bincount(pairs.child, weights=g * (pairs.dt / om ** 2 - 1.0 / om), minlength=n)
    grad[:, p + nm + 1] = np.bincount(pairs.child, weights=g * (pairs.r2 / (2 * s2 ** 2) - 1.0 / s2),
                                      minlength=n)
    tgt = catalog.is_target
    return (mu + trig)[tgt], grad[tgt]


def compensator_gradient(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, window=None) -> np.ndarray:
    ta, tb = _window(catalog, window)
    p, nm = cov.p, len(catalog.marks)
    om, s2 = params.omega, params.sigma2
    rates = np.exp(cov.log_rates(params.beta))
    out = np.zeros(p + nm + 2)
    out[:p] = cov.design.T @ (cov.areas * (tb - ta) * rates)
    mass, a, b, before = _temporal_mass(catalog, om, ta, tb)
    m = params.delta_mass
    out[p:p + nm] = np.bincount(catalog.codes, weights=mass * m, minlength=nm)
    w = event_weights(params, catalog)
    dmass = np.where(before, (np.exp(-a / om) * a - np.exp(-b / om) * b) / om ** 2, 0.0)
    out[p + nm] = np.sum(w * dmass) * m
    out[p + nm + 1] = np.sum(w * mass) * m * params.delta ** 2 / (2 * s2 ** 2)
    return out


def score(params: ModelParams, cov: CovariateMap, catalog: EventCatalog, pairs: PairSet | None = None) -> np.ndarray:
    """Analytic gradient of the full-window log-likelihood."""
    lam, grad = event_gradients(params, cov, catalog, pairs)
    return np.sum(grad / lam[:, None], axis=0) - compensator_gradient(params, cov, catalog)
