# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: nonnegative-lasso coordinate descent and the
color-affinity assembly for edge-aware smoothing.

Must stay semantically identical to `pyref` (the numpy fallback); the test
suite cross-checks both backends.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def nn_lasso_cd(double[:, ::1] G, double[::1] b, double lam, int max_iter,
                double tol, double[::1] w):
    """See pyref.nn_lasso_cd; updates w in place, returns (sweeps, kkt)."""
    cdef Py_ssize_t m = G.shape[0]
    if m == 0:
        return 0, 0.0
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_arr = np.empty(m)
    cdef double[::1] q = q_arr
    cdef Py_ssize_t i, j, sweep
    cdef double acc, gjj, wj, rho, wn, half, kkt, delta
    half = 0.5 * lam

    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += G[i, j] * w[j]
        q[i] = acc
    kkt = _kkt_residual(q, b, lam, w, m)
    if kkt <= tol:
        return 0, kkt

    cdef Py_ssize_t sweeps = 0
    for sweep in range(max_iter):
        sweeps = sweep + 1
        for j in range(m):
            gjj = G[j, j]
            wj = w[j]
            if gjj <= 0.0:
                if wj != 0.0:
                    for i in range(m):
                        q[i] -= wj * G[i, j]
                    w[j] = 0.0
                continue
            rho = b[j] - q[j] + gjj * wj
            wn = (rho - half) / gjj
            if wn < 0.0:
                wn = 0.0
            if wn != wj:
                delta = wn - wj
                for i in range(m):
                    q[i] += delta * G[i, j]
                w[j] = wn
        kkt = _kkt_residual(q, b, lam, w, m)
        if kkt <= tol:
            # recompute q to shed incremental drift before accepting
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += G[i, j] * w[j]
                q[i] = acc
            kkt = _kkt_residual(q, b, lam, w, m)
            if kkt <= tol:
                return sweeps, kkt
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += G[i, j] * w[j]
        q[i] = acc
    return sweeps, _kkt_residual(q, b, lam, w, m)


cdef double _kkt_residual(double[::1] q, double[::1] b, double lam,
                          double[::1] w, Py_ssize_t m) noexcept:
    cdef Py_ssize_t j
    cdef double g, viol, worst = 0.0
    for j in range(m):
        g = 2.0 * (q[j] - b[j]) + lam
        if w[j] > 0.0:
            viol = g if g >= 0.0 else -g
        else:
            viol = -g if g < 0.0 else 0.0
        if viol > worst:
            worst = viol
    return worst


def levin_affinity(double[:, :, ::1] guide, int radius, double var_floor):
    """See pyref.levin_affinity. Guide must have exactly 3 channels.

    Entry order differs from the fallback (per pixel here, per shift there);
    the assembled sparse matrix is identical.
    """
    cdef Py_ssize_t h = guide.shape[0]
    cdef Py_ssize_t w = guide.shape[1]
    if guide.shape[2] != 3:
        raise ValueError("compiled affinity kernel requires 3 channels")
    cdef Py_ssize_t size = 2 * radius + 1
    cdef Py_ssize_t max_entries = h * w * (size * size - 1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rows_arr = np.empty(max_entries, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cols_arr = np.empty(max_entries, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals_arr = np.empty(max_entries)
    cdef long long[::1] rows = rows_arr
    cdef long long[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr

    cdef double[::1] wbuf = np.empty(size * size)
    cdef long long[::1] qbuf = np.empty(size * size, dtype=np.int64)

    cdef Py_ssize_t y, x, yy, xx, y0, y1h, x0, x1h, cnt, k, nq, pos = 0
    cdef double mu0, mu1, mu2, c00, c01, c02, c11, c12, c22
    cdef double d0, d1, d2, e0, e1, e2, det, raw, s
    cdef double i00, i01, i02, i11, i12, i22
    cdef double t0, t1, t2

    for y in range(h):
        for x in range(w):
            y0 = y - radius
            if y0 < 0:
                y0 = 0
            y1h = y + radius + 1
            if y1h > h:
                y1h = h
            x0 = x - radius
            if x0 < 0:
                x0 = 0
            x1h = x + radius + 1
            if x1h > w:
                x1h = w
            cnt = (y1h - y0) * (x1h - x0)

            mu0 = 0.0; mu1 = 0.0; mu2 = 0.0
            for yy in range(y0, y1h):
                for xx in range(x0, x1h):
                    mu0 += guide[yy, xx, 0]
                    mu1 += guide[yy, xx, 1]
                    mu2 += guide[yy, xx, 2]
            mu0 /= cnt; mu1 /= cnt; mu2 /= cnt

            c00 = 0.0; c01 = 0.0; c02 = 0.0; c11 = 0.0; c12 = 0.0; c22 = 0.0
            for yy in range(y0, y1h):
                for xx in range(x0, x1h):
                    d0 = guide[yy, xx, 0] - mu0
                    d1 = guide[yy, xx, 1] - mu1
                    d2 = guide[yy, xx, 2] - mu2
                    c00 += d0 * d0; c01 += d0 * d1; c02 += d0 * d2
                    c11 += d1 * d1; c12 += d1 * d2; c22 += d2 * d2
            c00 = c00 / cnt + var_floor
            c01 /= cnt
            c02 /= cnt
            c11 = c11 / cnt + var_floor
            c12 /= cnt
            c22 = c22 / cnt + var_floor

            # closed-form symmetric 3x3 inverse (PD by the variance floor)
            i00 = c11 * c22 - c12 * c12
            i01 = c02 * c12 - c01 * c22
            i02 = c01 * c12 - c02 * c11
            i11 = c00 * c22 - c02 * c02
            i12 = c01 * c02 - c00 * c12
            i22 = c00 * c11 - c01 * c01
            det = c00 * i00 + c01 * i01 + c02 * i02
            i00 /= det; i01 /= det; i02 /= det
            i11 /= det; i12 /= det; i22 /= det

            d0 = guide[y, x, 0] - mu0
            d1 = guide[y, x, 1] - mu1
            d2 = guide[y, x, 2] - mu2
            t0 = d0 * i00 + d1 * i01 + d2 * i02
            t1 = d0 * i01 + d1 * i11 + d2 * i12
            t2 = d0 * i02 + d1 * i12 + d2 * i22

            nq = 0
            s = 0.0
            for yy in range(y0, y1h):
                for xx in range(x0, x1h):
                    if yy == y and xx == x:
                        continue
                    e0 = guide[yy, xx, 0] - mu0
                    e1 = guide[yy, xx, 1] - mu1
                    e2 = guide[yy, xx, 2] - mu2
                    raw = 1.0 + t0 * e0 + t1 * e1 + t2 * e2
                    if raw < 0.0:
                        raw = 0.0
                    wbuf[nq] = raw
                    qbuf[nq] = yy * w + xx
                    s += raw
                    nq += 1
            if nq == 0:
                continue
            if s <= 0.0:
                for k in range(nq):
                    wbuf[k] = 1.0 / nq
            else:
                for k in range(nq):
                    wbuf[k] /= s
            for k in range(nq):
                rows[pos] = y * w + x
                cols[pos] = qbuf[k]
                vals[pos] = wbuf[k]
                pos += 1

    return rows_arr[:pos].copy(), cols_arr[:pos].copy(), vals_arr[:pos].copy()
