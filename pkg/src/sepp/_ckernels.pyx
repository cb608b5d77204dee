# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: pair search, pair triggering and point sums.

Events are bucketed on a square grid of side ``max_r`` and sorted by time
within each bucket, so each query visits the 3x3 neighbouring buckets and
binary-searches the time range.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, isfinite, M_PI

cnp.import_array()


cdef inline Py_ssize_t _lower_bound(const double[::1] a, Py_ssize_t lo, Py_ssize_t hi, double v) noexcept nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _buckets(x, y, t, double max_r):
    """Bucket layout: (order, sorted t, sorted x, sorted y, starts, x0, y0, cell, nbx, nby)."""
    cdef Py_ssize_t n = len(t)
    cdef double x0, y0, x1, y1, cell
    cdef Py_ssize_t nbx, nby
    if n == 0:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    else:
        x0, x1 = float(np.min(x)), float(np.max(x))
        y0, y1 = float(np.min(y)), float(np.max(y))
    extent = max(x1 - x0, y1 - y0, 1e-300)
    if not isfinite(max_r) or max_r >= extent:
        cell = 2.0 * extent + 1.0
    else:
        cell = max_r
    nbx = <Py_ssize_t>floor((x1 - x0) / cell) + 1
    nby = <Py_ssize_t>floor((y1 - y0) / cell) + 1
    while nbx * nby > 4 * n + 4096:
        cell *= 2.0
        nbx = <Py_ssize_t>floor((x1 - x0) / cell) + 1
        nby = <Py_ssize_t>floor((y1 - y0) / cell) + 1
    bx = np.minimum(np.floor((x - x0) / cell).astype(np.int64), nbx - 1)
    by = np.minimum(np.floor((y - y0) / cell).astype(np.int64), nby - 1)
    key = bx * nby + by
    order = np.lexsort((t, key)).astype(np.int64)
    skey = key[order]
    starts = np.searchsorted(skey, np.arange(nbx * nby + 1)).astype(np.int64)
    return (order, np.ascontiguousarray(t[order]), np.ascontiguousarray(x[order]),
            np.ascontiguousarray(y[order]), starts, x0, y0, cell, nbx, nby)


def find_pairs(t, x, y, is_child, double max_dt, double max_r):
    t = np.ascontiguousarray(t, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    cdef const unsigned char[::1] child_flag = np.ascontiguousarray(is_child, dtype=np.uint8)
    cdef Py_ssize_t n = t.shape[0]
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    order_a, st_a, sx_a, sy_a, starts_a, x0, y0, cell, nbx, nby = _buckets(x, y, t, max_r)
    cdef const long long[::1] order = order_a
    cdef const double[::1] st = st_a
    cdef const double[::1] sx = sx_a
    cdef const double[::1] sy = sy_a
    cdef const long long[::1] starts = starts_a
    cdef const double[::1] tv = t
    cdef const double[::1] xv = x
    cdef const double[::1] yv = y
    cdef double r2max = max_r * max_r if isfinite(max_r) else np.inf
    cdef double cellc = cell, x0c = x0, y0c = y0
    cdef Py_ssize_t nbxc = nbx, nbyc = nby
    cdef Py_ssize_t i, k, b, lo, hi, ix, iy, jx, jy, total = 0, pos
    cdef double ti, xi, yi, ddx, ddy
    cdef long long[::1] counts = np.zeros(n, dtype=np.int64)
    cdef int pass_no
    child_a = np.empty(0, np.int64)
    parent_a = np.empty(0, np.int64)
    cdef long long[::1] cout
    cdef long long[::1] pout
    for pass_no in range(2):
        if pass_no == 1:
            total = 0
            for i in range(n):
                total += counts[i]
            child_a = np.empty(total, np.int64)
            parent_a = np.empty(total, np.int64)
            cout = child_a
            pout = parent_a
            pos = 0
        with nogil:
            for i in range(n):
                if not child_flag[i]:
                    continue
                ti = tv[i]
                xi = xv[i]
                yi = yv[i]
                ix = <Py_ssize_t>floor((xi - x0c) / cellc)
                iy = <Py_ssize_t>floor((yi - y0c) / cellc)
                if ix > nbxc - 1:
                    ix = nbxc - 1
                if iy > nbyc - 1:
                    iy = nbyc - 1
                for jx in range(ix - 1, ix + 2):
                    if jx < 0 or jx >= nbxc:
                        continue
                    for jy in range(iy - 1, iy + 2):
                        if jy < 0 or jy >= nbyc:
                            continue
                        b = jx * nbyc + jy
                        lo = _lower_bound(st, starts[b], starts[b + 1], ti - max_dt)
                        hi = starts[b + 1]
                        k = lo
                        while k < hi and st[k] < ti:
                            ddx = sx[k] - xi
                            ddy = sy[k] - yi
                            if ddx * ddx + ddy * ddy <= r2max:
                                if pass_no == 0:
                                    counts[i] += 1
                                else:
                                    cout[pos] = i
                                    pout[pos] = order[k]
                                    pos += 1
                            k += 1
    srt = np.lexsort((parent_a, child_a))
    return child_a[srt], parent_a[srt]


def trigger_pairs(child, dt, r2, w, double omega, double sigma2, double delta2, Py_ssize_t n):
    cdef const long long[::1] c = np.ascontiguousarray(child, dtype=np.int64)
    cdef const double[::1] d = np.ascontiguousarray(dt, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(r2, dtype=np.float64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0], k
    g_a = np.empty(m, np.float64)
    lam_a = np.zeros(n, np.float64)
    cdef double[::1] g = g_a
    cdef double[::1] lam = lam_a
    cdef double inv_om = 1.0 / omega
    cdef double inv_2s = 1.0 / (2.0 * sigma2)
    cdef double norm = 1.0 / (omega * 2.0 * M_PI * sigma2)
    cdef double v
    with nogil:
        for k in range(m):
            if r[k] < delta2:
                v = 0.0
            else:
                v = ww[k] * norm * exp(-d[k] * inv_om - r[k] * inv_2s)
            g[k] = v
            lam[c[k]] += v
    return g_a, lam_a


def pair_responsibilities(child, parent, dt, r2, w, mu, double omega, double sigma2, double delta2):
    cdef const long long[::1] c = np.ascontiguousarray(child, dtype=np.int64)
    cdef const long long[::1] par = np.ascontiguousarray(parent, dtype=np.int64)
    cdef const double[::1] d = np.ascontiguousarray(dt, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(r2, dtype=np.float64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    lam_a = np.array(mu, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t m = c.shape[0], k
    p_a = np.empty(m, np.float64)
    cdef double[::1] p = p_a
    cdef double[::1] lam = lam_a
    cdef double inv_om = 1.0 / omega
    cdef double inv_2s = 1.0 / (2.0 * sigma2)
    cdef double norm = 1.0 / (omega * 2.0 * M_PI * sigma2)
    cdef double v
    with nogil:
        for k in range(m):
            if r[k] < delta2:
                v = 0.0
            else:
                v = ww[par[k]] * norm * exp(-d[k] * inv_om - r[k] * inv_2s)
            p[k] = v
            lam[c[k]] += v
        for k in range(m):
            p[k] = p[k] / lam[c[k]]
    return p_a, lam_a


def point_sums(px, py, pt, ex, ey, et, ew, double omega, double sigma2, double delta2,
               double max_r, double max_dt, double t1, double t2, bint integrated):
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    if pt is None:
        pt = np.zeros(len(px))
    pt = np.ascontiguousarray(pt, dtype=np.float64)
    ex = np.ascontiguousarray(ex, dtype=np.float64)
    ey = np.ascontiguousarray(ey, dtype=np.float64)
    et = np.ascontiguousarray(et, dtype=np.float64)
    ew = np.ascontiguousarray(ew, dtype=np.float64)
    cdef Py_ssize_t npts = px.shape[0]
    out_a = np.zeros(npts, np.float64)
    if npts == 0 or len(ex) == 0:
        return out_a
    order_a, st_a, sx_a, sy_a, starts_a, x0, y0, cell, nbx, nby = _buckets(ex, ey, et, max_r)
    sw_a = np.ascontiguousarray(ew[order_a])
    cdef const double[::1] st = st_a
    cdef const double[::1] sx = sx_a
    cdef const double[::1] sy = sy_a
    cdef const double[::1] sw = sw_a
    cdef const long long[::1] starts = starts_a
    cdef const double[::1] qx = px
    cdef const double[::1] qy = py
    cdef const double[::1] qt = pt
    cdef double[::1] out = out_a
    cdef double r2max = max_r * max_r if isfinite(max_r) else np.inf
    cdef double cellc = cell, x0c = x0, y0c = y0
    cdef Py_ssize_t nbxc = nbx, nbyc = nby
    cdef double inv_om = 1.0 / omega
    cdef double inv_2s = 1.0 / (2.0 * sigma2)
    cdef double snorm = 1.0 / (2.0 * M_PI * sigma2)
    cdef Py_ssize_t i, k, b, lo, hi, ix, iy, jx, jy
    cdef double xi, yi, ti, tlo, thi, ddx, ddy, rr, acc, temporal, a
    with nogil:
        for i in range(npts):
            xi = qx[i]
            yi = qy[i]
            if integrated:
                tlo = t1 - max_dt
                thi = t2
            else:
                ti = qt[i]
                tlo = ti - max_dt
                thi = ti
            # clamping only adds candidates; the distance test filters them
            ix = <Py_ssize_t>floor((xi - x0c) / cellc)
            iy = <Py_ssize_t>floor((yi - y0c) / cellc)
            ix = 0 if ix < 0 else (nbxc - 1 if ix > nbxc - 1 else ix)
            iy = 0 if iy < 0 else (nbyc - 1 if iy > nbyc - 1 else iy)
            acc = 0.0
            for jx in range(ix - 1, ix + 2):
                if jx < 0 or jx >= nbxc:
                    continue
                for jy in range(iy - 1, iy + 2):
                    if jy < 0 or jy >= nbyc:
                        continue
                    b = jx * nbyc + jy
                    lo = _lower_bound(st, starts[b], starts[b + 1], tlo)
                    hi = starts[b + 1]
                    k = lo
                    while k < hi and st[k] < thi:
                        ddx = sx[k] - xi
                        ddy = sy[k] - yi
                        rr = ddx * ddx + ddy * ddy
                        if rr <= r2max and rr >= delta2:
                            if integrated:
                                a = t1 - st[k]
                                if a < 0.0:
                                    a = 0.0
                                temporal = exp(-a * inv_om) - exp(-(t2 - st[k]) * inv_om)
                            else:
                                temporal = exp(-(ti - st[k]) * inv_om) * inv_om
                            acc += sw[k] * temporal * exp(-rr * inv_2s)
                        k += 1
            out[i] = acc * snorm
    return out_a
