"""Pure numpy/scipy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled versions are tested against. Inputs must be sorted by time.
"""

import numpy as np
from scipy.spatial import cKDTree

_CHUNK = 2_000_000


def _sweep_candidates(t, children, max_dt):
    """All (child, parent) index pairs with t_child - max_dt <= t_parent < t_child."""
    lo = np.searchsorted(t, t[children] - max_dt, side="left")
    hi = np.searchsorted(t, t[children], side="left")
    counts = hi - lo
    child = np.repeat(children, counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    parent = np.repeat(lo, counts) + offsets
    return child, parent


def find_pairs(t, x, y, is_child, max_dt, max_r):
    t = np.ascontiguousarray(t, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    is_child = np.asarray(is_child, dtype=bool)
    if np.isfinite(max_r):
        tree = cKDTree(np.column_stack([x, y]))
        ij = tree.query_pairs(max_r, output_type="ndarray")
        if len(ij) == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        a, b = ij[:, 0].astype(np.int64), ij[:, 1].astype(np.int64)
        later = t[a] > t[b]
        child = np.where(later, a, b)
        parent = np.where(later, b, a)
        dt = t[child] - t[parent]
        keep = (dt > 0) & (dt <= max_dt) & is_child[child]
        child, parent = child[keep], parent[keep]
    else:
        out_c, out_p = [], []
        children = np.flatnonzero(is_child)
        lo = np.searchsorted(t, t[children] - max_dt, side="left")
        hi = np.searchsorted(t, t[children], side="left")
        start = 0
        sizes = np.cumsum(hi - lo)
        while start < len(children):
            base = sizes[start - 1] if start else 0
            stop = int(np.searchsorted(sizes, base + _CHUNK, side="right"))
            stop = max(stop, start + 1)
            c, p = _sweep_candidates(t, children[start:stop], max_dt)
            out_c.append(c)
            out_p.append(p)
            start = stop
        child = np.concatenate(out_c) if out_c else np.empty(0, np.int64)
        parent = np.concatenate(out_p) if out_p else np.empty(0, np.int64)
    order = np.lexsort((parent, child))
    return child[order].astype(np.int64), parent[order].astype(np.int64)


def trigger_pairs(child, dt, r2, w, omega, sigma2, delta2, n):
    """Triggering density of every pair and its per-child sum."""
    g = (w / omega) * np.exp(-dt / omega) * np.exp(-r2 / (2.0 * sigma2)) / (2.0 * np.pi * sigma2)
    if delta2 > 0:
        g = np.where(r2 < delta2, 0.0, g)
    lam = np.bincount(child, weights=g, minlength=n)
    return g, lam


def pair_responsibilities(child, parent, dt, r2, w, mu, omega, sigma2, delta2):
    """Branching probability of every pair and total intensity at every event.

    ``w`` and ``mu`` are per-event productivities and background rates.
    """
    g, trig = trigger_pairs(child, dt, r2, w[parent], omega, sigma2, delta2, len(mu))
    lam = mu + trig
    with np.errstate(divide="ignore", invalid="ignore"):
        p = g / lam[child]
    return p, lam


def _point_terms(pi, ej, r2, pt, et, ew, omega, sigma2, delta2, max_dt, t1, t2, integrated):
    if integrated:
        keep = (et[ej] < t2) & (et[ej] >= t1 - max_dt)
        pi, ej, r2 = pi[keep], ej[keep], r2[keep]
        tj = et[ej]
        temporal = np.exp(-np.maximum(t1 - tj, 0.0) / omega) - np.exp(-(t2 - tj) / omega)
    else:
        lag = pt[pi] - et[ej]
        keep = (lag > 0) & (lag <= max_dt)
        pi, ej, r2, lag = pi[keep], ej[keep], r2[keep], lag[keep]
        temporal = np.exp(-lag / omega) / omega
    val = ew[ej] * temporal * np.exp(-r2 / (2.0 * sigma2)) / (2.0 * np.pi * sigma2)
    if delta2 > 0:
        val = np.where(r2 < delta2, 0.0, val)
    return pi, val


def point_sums(px, py, pt, ex, ey, et, ew, omega, sigma2, delta2, max_r, max_dt, t1, t2, integrated):
    """Triggering sum at query points.

    integrated=False: instantaneous sum at (px, py, pt) over events with
    pt - max_dt <= t_j < pt. integrated=True: time integral over [t1, t2)
    for events with t1 - max_dt <= t_j < t2 (pt ignored).
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    pt = np.asarray(pt, dtype=float) if pt is not None else np.zeros(len(px))
    ex, ey, et, ew = (np.asarray(a, dtype=float) for a in (ex, ey, et, ew))
    out = np.zeros(len(px))
    if len(px) == 0 or len(ex) == 0:
        return out
    if np.isfinite(max_r):
        etree = cKDTree(np.column_stack([ex, ey]))
        step = 100_000
        for s in range(0, len(px), step):
            sl = slice(s, s + step)
            ptree = cKDTree(np.column_stack([px[sl], py[sl]]))
            sdm = ptree.sparse_distance_matrix(etree, max_r, output_type="ndarray")
            pi = sdm["i"].astype(np.int64) + s
            ej = sdm["j"].astype(np.int64)
            r2 = sdm["v"] ** 2
            pi, val = _point_terms(pi, ej, r2, pt, et, ew, omega, sigma2, delta2, max_dt, t1, t2, integrated)
            out += np.bincount(pi, weights=val, minlength=len(px))
    else:
        step = max(1, _CHUNK // len(ex))
        for s in range(0, len(px), step):
            m = len(px[s:s + step])
            pi = np.repeat(np.arange(s, s + m), len(ex))
            ej = np.tile(np.arange(len(ex)), m)
            r2 = (px[pi] - ex[ej]) ** 2 + (py[pi] - ey[ej]) ** 2
            pi, val = _point_terms(pi, ej, r2, pt, et, ew, omega, sigma2, delta2, max_dt, t1, t2, integrated)
            out += np.bincount(pi, weights=val, minlength=len(px))
    return out
