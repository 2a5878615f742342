"""Bilinear resizing and colorization-style edge-aware smoothing.

Resizing uses pixel-center alignment: target index r samples source
coordinate (r + 0.5) * h_src / h_dst - 0.5, clamped at borders. Sampling a
map back at the exact grid it was interpolated from returns it unchanged,
which the synthetic generator and the coarse training targets rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels
from .errors import InputError, NumericalError
from .tensorio import DepthMap, as_depth_array


@dataclass(frozen=True)
class ColorizationConfig:
    """seed_penalty weighs fidelity to the input; neighborhood is the window
    radius; affinity_sigma_mode floors the per-window color variance."""

    seed_penalty: float = 0.1
    neighborhood: int = 1
    affinity_sigma_mode: float = 1e-4

    def __post_init__(self):
        if self.seed_penalty < 0:
            raise InputError("seed_penalty must be >= 0")
        if self.neighborhood < 1:
            raise InputError("neighborhood must be >= 1")
        if self.affinity_sigma_mode <= 0:
            raise InputError("affinity_sigma_mode must be > 0")


def _axis_coords(n_src: int, n_dst: int):
    t = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    t = np.clip(t, 0.0, n_src - 1.0)
    i0 = np.floor(t).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, t - i0


def resize_bilinear(src, rows: int, cols: int) -> np.ndarray:
    """Resize a (h, w) or (h, w, c) array. Identity sizes return a copy.

    Output is clipped into [src.min(), src.max()]; the interpolation is a
    convex combination, so the clip only removes float rounding.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim not in (2, 3):
        raise InputError(f"expected (h, w) or (h, w, c), got {src.shape}")
    if rows < 1 or cols < 1:
        raise InputError("target dims must be >= 1")
    if (rows, cols) == src.shape[:2]:
        return src.copy()
    r0, r1, fr = _axis_coords(src.shape[0], rows)
    c0, c1, fc = _axis_coords(src.shape[1], cols)
    if src.ndim == 3:
        fr = fr[:, None, None]
        fc = fc[None, :, None]
    else:
        fr = fr[:, None]
        fc = fc[None, :]
    out = ((1 - fr) * (1 - fc) * src[np.ix_(r0, c0)]
           + (1 - fr) * fc * src[np.ix_(r0, c1)]
           + fr * (1 - fc) * src[np.ix_(r1, c0)]
           + fr * fc * src[np.ix_(r1, c1)])
    return np.clip(out, src.min(), src.max())


def resize_depth_map(dm: DepthMap, rows: int, cols: int) -> DepthMap:
    if dm.mask is not None and not (dm.mask > 0.5).all():
        raise InputError("resizing a partially masked depth map is unsupported")
    return DepthMap(resize_bilinear(dm.depth, rows, cols))


def colorize_smooth(depth_seed, guide, cfg: ColorizationConfig) -> np.ndarray:
    """Edge-aware smoothing of a depth map against a color guide.

    Solves min_u sum_p (u_p - sum_q a_pq u_q)^2
               + seed_penalty * sum_p (u_p - seed_p)^2
    where the a_pq are window affinities from color similarity (rows sum
    to 1). Pixels with similar guide colors are pulled to similar depths.
    """
    seed = as_depth_array(depth_seed)
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim != 3 or guide.shape[2] != 3:
        raise InputError(f"guide must be (rows, cols, 3), got {guide.shape}")
    if guide.shape[:2] != seed.shape:
        raise InputError(f"guide dims {guide.shape[:2]} != seed dims {seed.shape}")
    if cfg.seed_penalty <= 0:
        raise NumericalError(
            "colorization system is singular with seed_penalty = 0; "
            "use seed_penalty > 0"
        )
    h, w = seed.shape
    n = h * w
    rows, cols, vals = _kernels.levin_affinity(
        np.ascontiguousarray(guide), cfg.neighborhood, cfg.affinity_sigma_mode
    )
    A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M = scipy.sparse.eye(n, format="csr") - A
    # a pixel with no neighbors (1x1 grid) contributes no smoothness term
    has_neighbors = np.asarray(A.sum(axis=1)).ravel() > 0
    if not has_neighbors.all():
        M = scipy.sparse.diags(has_neighbors.astype(np.float64)) @ M
    s = cfg.seed_penalty
    system = (M.T @ M + s * scipy.sparse.eye(n)).tocsc()
    rhs = s * seed.ravel()
    u = scipy.sparse.linalg.spsolve(system, rhs)
    resid = float(np.abs(system @ u - rhs).max())
    if resid > 1e-6 * max(float(np.abs(rhs).max()), 1e-300):
        raise NumericalError(
            f"colorization solve residual {resid:.3e} exceeds tolerance"
        )
    out = u.reshape(h, w)
    # the exact solution obeys the maximum principle; clip float noise
    return np.clip(out, seed.min(), seed.max())


def upsample_to(coarse, guide_full, rows: int, cols: int,
                cfg: ColorizationConfig) -> np.ndarray:
    """One pipeline stage: bilinear resize to (rows, cols), then colorize
    against the guide resized to the same grid."""
    mid = resize_bilinear(as_depth_array(coarse), rows, cols)
    guide = resize_bilinear(np.asarray(guide_full, dtype=np.float64), rows, cols)
    return colorize_smooth(mid, guide, cfg)


def pipeline_upsample(coarse, guide_full, p_i_rows: int, p_i_cols: int,
                      full_rows: int, full_cols: int,
                      cfg: ColorizationConfig) -> np.ndarray:
    """Coarse -> intermediate -> full, with colorization at both stages."""
    mid = upsample_to(coarse, guide_full, p_i_rows, p_i_cols, cfg)
    return upsample_to(mid, guide_full, full_rows, full_cols, cfg)
