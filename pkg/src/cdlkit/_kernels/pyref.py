"""Pure-numpy reference implementations of the compiled kernels.

Selected automatically when the Cython extension is unavailable (or when
CDLKIT_PURE_PYTHON is set). Semantics must match `_cdcore` exactly; the
test suite cross-checks both backends.
"""

from __future__ import annotations

import numpy as np


def nn_lasso_cd(G, b, lam, max_iter, tol, w):
    """Cyclic coordinate descent for the nonnegative lasso in Gram form.

    Minimizes ||a - C w||^2 + lam * sum(w) over w >= 0, where G = C'C and
    b = C'a. `w` is updated in place (it is also the warm start).

    Returns (sweeps_used, kkt_residual). The KKT residual is
    max_j of |g_j| when w_j > 0 and max(0, -g_j) when w_j = 0, with
    g = 2 (G w - b) + lam.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = G.shape[0]
    if m == 0:
        return 0, 0.0
    diag = np.diagonal(G).copy()
    half = 0.5 * lam
    q = G @ w
    kkt = _kkt_residual(q, b, lam, w)
    if kkt <= tol:
        return 0, kkt
    sweeps = 0
    for sweep in range(max_iter):
        sweeps = sweep + 1
        for j in range(m):
            gjj = diag[j]
            wj = w[j]
            if gjj <= 0.0:
                # zero column: only the L1 term remains, optimum is 0
                if wj != 0.0:
                    q -= wj * G[:, j]
                    w[j] = 0.0
                continue
            rho = b[j] - q[j] + gjj * wj
            wn = (rho - half) / gjj
            if wn < 0.0:
                wn = 0.0
            if wn != wj:
                q += (wn - wj) * G[:, j]
                w[j] = wn
        kkt = _kkt_residual(q, b, lam, w)
        if kkt <= tol:
            # guard against drift in the incrementally maintained q
            q = G @ w
            kkt = _kkt_residual(q, b, lam, w)
            if kkt <= tol:
                return sweeps, kkt
    q = G @ w
    return sweeps, _kkt_residual(q, b, lam, w)


def _kkt_residual(q, b, lam, w):
    g = 2.0 * (q - b) + lam
    viol = np.where(w > 0.0, np.abs(g), np.maximum(0.0, -g))
    return float(viol.max())


def levin_affinity(guide, radius, var_floor):
    """Color-similarity affinity entries for edge-aware smoothing.

    `guide` is (H, W, 3). For each pixel p the statistics (mean, covariance)
    of its (2r+1)^2 window are formed, and each neighbor q != p gets the raw
    weight 1 + (I_p - mu)' (Sigma + var_floor I)^-1 (I_q - mu), clamped at 0
    and normalized so every row sums to 1 (uniform fallback when a whole row
    clamps to zero).

    Returns (rows, cols, vals) index arrays of the affinity matrix over
    flattened pixel indices.
    """
    guide = np.asarray(guide, dtype=np.float64)
    h, w, ch = guide.shape
    r = int(radius)
    size = 2 * r + 1
    pad = np.zeros((h + 2 * r, w + 2 * r, ch))
    pad[r : r + h, r : r + w] = guide
    valid = np.zeros((h + 2 * r, w + 2 * r))
    valid[r : r + h, r : r + w] = 1.0

    shifts = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    shifted = np.empty((len(shifts), h, w, ch))
    vmask = np.empty((len(shifts), h, w))
    for s, (dy, dx) in enumerate(shifts):
        shifted[s] = pad[r + dy : r + dy + h, r + dx : r + dx + w]
        vmask[s] = valid[r + dy : r + dy + h, r + dx : r + dx + w]

    count = vmask.sum(axis=0)
    mu = (shifted * vmask[..., None]).sum(axis=0) / count[..., None]
    centered = (shifted - mu[None]) * vmask[..., None]
    cov = np.einsum("shwi,shwj->hwij", centered, centered) / count[..., None, None]
    cov[..., np.arange(ch), np.arange(ch)] += var_floor
    minv = np.linalg.inv(cov)

    dp = guide - mu
    raw = np.empty((len(shifts), h, w))
    for s, (dy, dx) in enumerate(shifts):
        dq = shifted[s] - mu
        val = 1.0 + np.einsum("hwi,hwij,hwj->hw", dp, minv, dq)
        if dy == 0 and dx == 0:
            val = np.zeros_like(val)
        raw[s] = np.maximum(val, 0.0) * vmask[s]
    center = shifts.index((0, 0))
    neighbor_count = count - 1.0
    rowsum = raw.sum(axis=0)
    # rows whose weights all clamp to zero fall back to uniform
    uniform = rowsum <= 0.0
    weights = np.where(
        uniform[None],
        vmask / np.maximum(neighbor_count, 1.0)[None],
        raw / np.where(rowsum <= 0.0, 1.0, rowsum)[None],
    )
    weights[center] = 0.0

    pix = np.arange(h * w).reshape(h, w)
    rows_out = []
    cols_out = []
    vals_out = []
    for s, (dy, dx) in enumerate(shifts):
        if dy == 0 and dx == 0:
            continue
        keep = vmask[s] > 0.0
        rows_out.append(pix[keep])
        qidx = ((np.arange(h)[:, None] + dy) * w + (np.arange(w)[None, :] + dx))[keep]
        cols_out.append(qidx)
        vals_out.append(weights[s][keep])
    return (
        np.concatenate(rows_out).astype(np.int64),
        np.concatenate(cols_out).astype(np.int64),
        np.concatenate(vals_out),
    )
