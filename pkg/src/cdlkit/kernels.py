"""RBF feature construction, bandwidth heuristic, k-means, hypercolumns.

Centers are opaque vectors here; how they are picked (which images, which
sampled pixels) is dataset-assembly policy living in the pipeline layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .spatial import resize_bilinear


@dataclass(frozen=True)
class CenterBank:
    """RBF centers (n, dim) with strictly positive per-center bandwidths (n,)."""

    centers: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        s = np.asarray(self.sigmas, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise InputError(f"centers must be (n >= 1, dim), got {c.shape}")
        if s.shape != (c.shape[0],):
            raise InputError(f"sigmas shape {s.shape} != ({c.shape[0]},)")
        if not np.isfinite(c).all():
            raise InputError("centers contain non-finite values")
        if not (s > 0).all():
            raise InputError("all sigmas must be > 0")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "sigmas", s)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def sigma_heuristic(centers) -> float:
    """Half the maximum pairwise Euclidean distance between centers."""
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 2:
        raise InputError("sigma heuristic needs at least 2 centers")
    diff = c[:, None, :] - c[None, :, :]
    dmax = float(np.sqrt((diff**2).sum(-1)).max())
    return dmax / 2.0


def make_center_bank(centers, sigma: float | None = None) -> CenterBank:
    c = np.asarray(centers, dtype=np.float64)
    if sigma is None:
        sigma = sigma_heuristic(c)
    return CenterBank(c, np.full(c.shape[0], float(sigma)))


def rbf_vector(f, bank: CenterBank) -> np.ndarray:
    """Gaussian similarities exp(-||f - c_j||^2 / (2 sigma_j^2))."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (bank.dim,):
        raise InputError(f"feature shape {f.shape} != ({bank.dim},)")
    sq = ((bank.centers - f) ** 2).sum(axis=1)
    return np.exp(-sq / (2.0 * bank.sigmas**2))


def rbf_matrix(feats, bank: CenterBank) -> np.ndarray:
    """Kernel matrix (n, N) for a batch of features (N, dim)."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != bank.dim:
        raise InputError(f"features shape {feats.shape} incompatible with dim {bank.dim}")
    sq = ((bank.centers[:, None, :] - feats[None, :, :]) ** 2).sum(-1)
    return np.exp(-sq / (2.0 * bank.sigmas[:, None] ** 2))


def kmeans(points, k: int, seed: int, max_iter: int = 100,
           return_trace: bool = False):
    """Lloyd's algorithm with k-means++ seeding, deterministic per seed.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid (ties by lowest point index). Returns the (k, dim) centroids,
    plus the per-iteration within-cluster-sum-of-squares trace if asked.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise InputError(f"points must be 2-D, got {pts.shape}")
    q = pts.shape[0]
    if not 1 <= k <= q:
        raise InputError(f"need 1 <= k <= {q}, got k={k}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(q)]
    d2 = ((pts - centers[0]) ** 2).sum(1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(np.argmax(d2))
        else:
            idx = int(rng.choice(q, p=d2 / total))
        centers[i] = pts[idx]
        d2 = np.minimum(d2, ((pts - centers[i]) ** 2).sum(1))

    labels = np.full(q, -1)
    trace = []
    for _ in range(max_iter):
        dist2 = ((pts[None, :, :] - centers[:, None, :]) ** 2).sum(-1)
        new_labels = np.argmin(dist2, axis=0)
        assigned = dist2[new_labels, np.arange(q)]
        trace.append(float(assigned.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                centers[c] = pts[labels == c].mean(axis=0)
        farthest = assigned.copy()
        for c in np.flatnonzero(counts == 0):
            j = int(np.argmax(farthest))
            centers[c] = pts[j]
            farthest[j] = -np.inf
    if return_trace:
        return centers, np.asarray(trace)
    return centers


@dataclass(frozen=True)
class HypercolumnField:
    """Stacked conv-style feature maps sampled on a common target grid.

    Each layer is (h_l, w_l, ch_l); the hypercolumn at a target pixel is the
    concatenation of bilinear samples of all layers at the proportionally
    mapped location.
    """

    layers: tuple
    target_rows: int
    target_cols: int

    def __post_init__(self):
        layers = tuple(np.asarray(l, dtype=np.float64) for l in self.layers)
        if not layers:
            raise InputError("need at least one layer")
        for l in layers:
            if l.ndim != 3:
                raise InputError(f"layers must be (h, w, ch), got {l.shape}")
        if self.target_rows < 1 or self.target_cols < 1:
            raise InputError("target dims must be >= 1")
        object.__setattr__(self, "layers", layers)

    @property
    def dim(self) -> int:
        return sum(l.shape[2] for l in self.layers)


def _sample_layer(layer, y, x):
    h, w, _ = layer.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0 = int(np.floor(y))
    x0 = int(np.floor(x))
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    return ((1 - fy) * (1 - fx) * layer[y0, x0] + (1 - fy) * fx * layer[y0, x1]
            + fy * (1 - fx) * layer[y1, x0] + fy * fx * layer[y1, x1])


def hypercolumn_at(field: HypercolumnField, row: float, col: float) -> np.ndarray:
    """Hypercolumn vector at a (possibly fractional) target-grid location."""
    if not (0 <= row < field.target_rows and 0 <= col < field.target_cols):
        raise InputError(
            f"location ({row}, {col}) outside target grid "
            f"{field.target_rows}x{field.target_cols}"
        )
    parts = []
    for layer in field.layers:
        h, w, _ = layer.shape
        y = (row + 0.5) * h / field.target_rows - 0.5
        x = (col + 0.5) * w / field.target_cols - 0.5
        parts.append(_sample_layer(layer, y, x))
    return np.concatenate(parts)


def hypercolumn_grid(field: HypercolumnField) -> np.ndarray:
    """All hypercolumns of the target grid at once, shape (rows, cols, dim).

    Equivalent to calling hypercolumn_at per pixel; bilinear resampling of a
    whole layer to the target grid is the same computation.
    """
    parts = [resize_bilinear(layer, field.target_rows, field.target_cols)
             for layer in field.layers]
    return np.concatenate(parts, axis=2)
