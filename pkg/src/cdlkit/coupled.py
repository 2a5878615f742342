"""Joint training of depth basis, sparse weights, and kernel regressor.

The objective, with D the coarse mean-subtracted depth targets and Phi the
kernel matrix of the training features against a center bank:

    J(B, W, T) = sum_i ||d_i - B w_i||^2 + lambda_w sum_i ||w_i||_1
               + lambda_r sum_i ||w_i - T phi_i||^2 + lambda_T ||T||_F^2

minimized by block-coordinate descent: (1) per-example nonnegative lasso on
a stacked system, (2) norm-constrained dictionary update, (3) closed-form
ridge for T. Initialization runs (1)+(2) with lambda_r = 0 (plain sparse
coding) before T enters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dictionary import Dictionary, unused_atom_policy, update_dictionary
from .errors import InputError, NumericalError
from .kernels import CenterBank, rbf_vector
from .sparse import LassoConfig, SparseWeights, infer_weights, solve_nn_lasso_gram
from .spatial import resize_bilinear
from .tensorio import DepthMap, as_depth_array

logger = logging.getLogger(__name__)

CROP_NAMES = ("C", "UL", "UR", "DL", "DR")

INIT_MAX_OUTER = 50


@dataclass(frozen=True)
class TrainConfig:
    """lambda_w = None auto-scales to 0.1 * mean(||d_i||_2) / m at training
    time; the resolved value is recorded on the model."""

    m: int
    lambda_w: float | None = None
    lambda_r: float = 1.0
    lambda_T: float = 1e-3
    max_outer: int = 50
    rel_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise InputError("m must be >= 1")
        for name in ("lambda_r", "lambda_T"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.lambda_w is not None and self.lambda_w < 0:
            raise InputError("lambda_w must be >= 0")
        if self.rel_tol <= 0:
            raise InputError("rel_tol must be > 0")
        if self.max_outer < 0:
            raise InputError("max_outer must be >= 0")


@dataclass(frozen=True)
class GlobalRegressor:
    T: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=np.float64)
        if T.ndim != 2 or not np.isfinite(T).all():
            raise InputError("T must be a finite 2-D matrix")
        object.__setattr__(self, "T", T)


@dataclass(frozen=True)
class GlobalModel:
    dictionary: Dictionary
    regressor: GlobalRegressor
    bank: CenterBank
    mean_depth: np.ndarray            # (coarse_rows, coarse_cols)
    coarse_rows: int
    coarse_cols: int
    lambda_w: float = 0.0             # resolved L1 weight, inference default

    def __post_init__(self):
        mean = np.asarray(self.mean_depth, dtype=np.float64)
        if mean.shape != (self.coarse_rows, self.coarse_cols):
            raise InputError(
                f"mean_depth shape {mean.shape} != "
                f"({self.coarse_rows}, {self.coarse_cols})"
            )
        if self.dictionary.p_low != self.coarse_rows * self.coarse_cols:
            raise InputError("dictionary row count != coarse grid size")
        if self.regressor.T.shape != (self.dictionary.atom_count, self.bank.n):
            raise InputError("regressor shape inconsistent with dictionary/bank")
        object.__setattr__(self, "mean_depth", mean)


@dataclass(frozen=True)
class CropEnsemble:
    models: dict                      # crop name -> GlobalModel
    crop_centers: dict                # crop name -> (row, col) on coarse grid
    gamma: float
    squared_merge: bool = False

    def __post_init__(self):
        if set(self.models) != set(CROP_NAMES) or set(self.crop_centers) != set(CROP_NAMES):
            raise InputError(f"ensemble requires exactly the crops {CROP_NAMES}")
        if self.gamma <= 0:
            raise InputError("gamma must be > 0")
        dims = {(m.coarse_rows, m.coarse_cols) for m in self.models.values()}
        if len(dims) != 1:
            raise InputError("crop models disagree on coarse dimensions")

    @property
    def coarse_shape(self):
        m = self.models[CROP_NAMES[0]]
        return m.coarse_rows, m.coarse_cols


def resolve_lambda_w(cfg: TrainConfig, D) -> float:
    if cfg.lambda_w is not None:
        return cfg.lambda_w
    return 0.1 * float(np.mean(np.linalg.norm(D, axis=0))) / cfg.m


def objective_J(B, W, T, D, Phi, cfg: TrainConfig,
                lambda_w: float | None = None) -> float:
    """Evaluate J at the given blocks. `lambda_w` overrides the config value
    (used once it has been resolved against the data)."""
    Barr = B.B if isinstance(B, Dictionary) else np.asarray(B, dtype=np.float64)
    Tarr = T.T if isinstance(T, GlobalRegressor) else np.asarray(T, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    Phi = np.asarray(Phi, dtype=np.float64)
    if Barr.shape[1] != W.shape[0] or D.shape != (Barr.shape[0], W.shape[1]):
        raise InputError("inconsistent shapes for B, W, D")
    if Tarr.shape != (W.shape[0], Phi.shape[0]) or Phi.shape[1] != W.shape[1]:
        raise InputError("inconsistent shapes for T, Phi, W")
    lw = resolve_lambda_w(cfg, D) if lambda_w is None else lambda_w
    recon = float(np.sum((D - Barr @ W) ** 2))
    l1 = float(np.sum(np.abs(W)))
    pred = float(np.sum((W - Tarr @ Phi) ** 2))
    return recon + lw * l1 + cfg.lambda_r * pred + cfg.lambda_T * float(np.sum(Tarr**2))


def solve_T(W, Phi, lambda_r: float, lambda_T: float) -> GlobalRegressor:
    """Closed-form ridge step:
    T = lambda_r W Phi' (lambda_r Phi Phi' + lambda_T I)^-1."""
    W = np.asarray(W, dtype=np.float64)
    Phi = np.asarray(Phi, dtype=np.float64)
    if W.ndim != 2 or Phi.ndim != 2 or W.shape[1] != Phi.shape[1]:
        raise InputError(f"shape mismatch: W {W.shape}, Phi {Phi.shape}")
    if W.shape[1] < 1:
        raise InputError("need at least one example")
    n = Phi.shape[0]
    S = lambda_r * (Phi @ Phi.T) + lambda_T * np.eye(n)
    rhs = lambda_r * (W @ Phi.T)
    try:
        cho = scipy.linalg.cho_factor(S, check_finite=False)
        T = scipy.linalg.cho_solve(cho, rhs.T, check_finite=False).T
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            "ridge system for T is singular; use lambda_T > 0"
        ) from exc
    if not np.isfinite(T).all():
        raise NumericalError("ridge system for T is singular; use lambda_T > 0")
    return GlobalRegressor(T)


def step1_weights(B, T, Phi, D, cfg: TrainConfig,
                  lambda_w: float | None = None,
                  lasso: LassoConfig | None = None,
                  W0=None) -> np.ndarray:
    """Per-example weight estimation. Stacks the reconstruction and
    prediction fidelities into one nonnegative lasso with
    C = [B; sqrt(lambda_r) I], a_i = [d_i; sqrt(lambda_r) T phi_i], so the
    Gram matrix B'B + lambda_r I is shared across examples."""
    Barr = B.B if isinstance(B, Dictionary) else np.asarray(B, dtype=np.float64)
    Tarr = T.T if isinstance(T, GlobalRegressor) else np.asarray(T, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    Phi = np.asarray(Phi, dtype=np.float64)
    m = Barr.shape[1]
    N = D.shape[1]
    lw = resolve_lambda_w(cfg, D) if lambda_w is None else lambda_w
    if lasso is None:
        lasso = LassoConfig(lambda_w=lw)
    else:
        lasso = LassoConfig(lambda_w=lw, max_iter=lasso.max_iter, tol=lasso.tol)
    G = Barr.T @ Barr + cfg.lambda_r * np.eye(m)
    Bs = Barr.T @ D                    # (m, N)
    if cfg.lambda_r > 0:
        Bs = Bs + cfg.lambda_r * (Tarr @ Phi)
    W = np.empty((m, N))
    for i in range(N):
        w0 = None if W0 is None else W0[:, i]
        W[:, i] = solve_nn_lasso_gram(G, Bs[:, i], lasso, w0=w0).w
    return W


def _init_atoms(D, m, rng):
    """Unit-norm starting atoms: mean-subtracted training depths in a seeded
    order, Gaussian fill when examples run out or collapse."""
    p, N = D.shape
    B = np.empty((p, m))
    order = rng.permutation(N)
    k = 0
    for idx in order:
        if k >= m:
            break
        v = D[:, idx]
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            B[:, k] = v / norm
            k += 1
    while k < m:
        v = rng.standard_normal(p)
        B[:, k] = v / np.linalg.norm(v)
        k += 1
    return B


def sparse_coding(D, cfg: TrainConfig, lambda_w: float,
                  max_outer: int = INIT_MAX_OUTER):
    """Alternate weight estimation (lambda_r = 0) and dictionary updates on
    mean-subtracted depths. Returns (Dictionary, W, objective trace)."""
    rng = np.random.default_rng(cfg.seed)
    m = cfg.m
    B = Dictionary(_init_atoms(D, m, rng))
    sc_cfg = TrainConfig(m=m, lambda_w=lambda_w, lambda_r=0.0,
                         lambda_T=cfg.lambda_T, max_outer=cfg.max_outer,
                         rel_tol=cfg.rel_tol, seed=cfg.seed)
    Tdummy = np.zeros((m, 1))
    Phidummy = np.zeros((1, D.shape[1]))
    W = None
    trace = []
    prev = None
    for _ in range(max(1, max_outer)):
        W = step1_weights(B, Tdummy, Phidummy, D, sc_cfg, lambda_w=lambda_w, W0=W)
        B = update_dictionary(D, W) if np.abs(W).sum() > 0 else B
        B = unused_atom_policy(B, W, D)
        obj = float(np.sum((D - B.B @ W) ** 2) + lambda_w * np.sum(np.abs(W)))
        trace.append(obj)
        if prev is not None and abs(prev - obj) <= cfg.rel_tol * max(abs(prev), 1e-12):
            break
        prev = obj
    return B, W, np.asarray(trace)


def train_global(features, depths, cfg: TrainConfig, bank: CenterBank,
                 coarse_rows: int, coarse_cols: int):
    """Train one crop model. `features` is (N, dim); `depths` is (N, H, W)
    full-resolution ground truth (dense).

    Returns (GlobalModel, J trace over full outer iterations).
    """
    feats = np.asarray(features, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if feats.ndim != 2 or depths.ndim != 3 or feats.shape[0] != depths.shape[0]:
        raise InputError(
            f"need features (N, dim) and depths (N, H, W); got "
            f"{feats.shape} and {depths.shape}"
        )
    if feats.shape[0] < 1:
        raise InputError("need at least one training example")
    if feats.shape[1] != bank.dim:
        raise InputError(f"feature dim {feats.shape[1]} != bank dim {bank.dim}")
    N = feats.shape[0]

    coarse = np.stack([resize_bilinear(d, coarse_rows, coarse_cols) for d in depths])
    mean_depth = coarse.mean(axis=0)
    D = (coarse - mean_depth).reshape(N, -1).T        # (p_low, N)

    from .kernels import rbf_matrix

    Phi = rbf_matrix(feats, bank)                     # (n, N)
    lambda_w = resolve_lambda_w(cfg, D)

    B, W, _ = sparse_coding(D, cfg, lambda_w)
    T = solve_T(W, Phi, cfg.lambda_r, cfg.lambda_T)
    trace = [objective_J(B, W, T, D, Phi, cfg, lambda_w=lambda_w)]

    for it in range(cfg.max_outer):
        W = step1_weights(B, T, Phi, D, cfg, lambda_w=lambda_w, W0=W)
        if np.abs(W).sum() > 0:
            B = update_dictionary(D, W)
            B = unused_atom_policy(B, W, D)
        T = solve_T(W, Phi, cfg.lambda_r, cfg.lambda_T)
        J = objective_J(B, W, T, D, Phi, cfg, lambda_w=lambda_w)
        if J > trace[-1] + 1e-9:
            logger.warning(
                "objective rose by %.3e at outer iteration %d", J - trace[-1], it
            )
        converged = abs(trace[-1] - J) <= cfg.rel_tol * max(abs(trace[-1]), 1e-12)
        trace.append(J)
        if converged:
            break

    model = GlobalModel(
        dictionary=B,
        regressor=T,
        bank=bank,
        mean_depth=mean_depth,
        coarse_rows=coarse_rows,
        coarse_cols=coarse_cols,
        lambda_w=lambda_w,
    )
    return model, np.asarray(trace)


def infer_global(model: GlobalModel, feature,
                 cfg: LassoConfig | None = None) -> DepthMap:
    """Coarse prediction for one feature vector: sparse weights fit to the
    regressor output, expanded through the basis, plus the pixel mean."""
    if cfg is None:
        cfg = LassoConfig(lambda_w=model.lambda_w)
    phi = rbf_vector(np.asarray(feature, dtype=np.float64), model.bank)
    w = infer_weights(model.regressor.T, phi, cfg)
    d = model.dictionary.B @ w.w
    grid = d.reshape(model.coarse_rows, model.coarse_cols) + model.mean_depth
    return DepthMap(grid)


def default_crop_centers(full_rows: int, full_cols: int, crop_size: int | None,
                         coarse_rows: int, coarse_cols: int) -> dict:
    """Crop-center pixel coordinates on the coarse grid. Crops are square
    windows of `crop_size` full-resolution pixels anchored at the corners and
    the center; None picks a proportional desk-scale default."""
    if crop_size is None:
        crop_size = max(1, round(0.532 * min(full_rows, full_cols)))
    if crop_size > min(full_rows, full_cols):
        raise InputError("crop_size exceeds image dimensions")
    half = crop_size / 2.0
    centers_full = {
        "C": (full_rows / 2.0, full_cols / 2.0),
        "UL": (half, half),
        "UR": (half, full_cols - half),
        "DL": (full_rows - half, half),
        "DR": (full_rows - half, full_cols - half),
    }
    ry = coarse_rows / full_rows
    rx = coarse_cols / full_cols
    return {k: (r * ry, c * rx) for k, (r, c) in centers_full.items()}


def default_gamma(crop_centers: dict) -> float:
    pts = np.asarray([crop_centers[k] for k in CROP_NAMES])
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max()) / 2.0


def merge_weights(crop_centers: dict, gamma: float, rows: int, cols: int,
                  squared: bool = False) -> np.ndarray:
    """Per-pixel merge weights, shape (5, rows, cols), ordered by CROP_NAMES:
    softmax over crops of -||p - p_i|| / gamma^2 (squared distance behind the
    non-default switch)."""
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    dist = np.stack([
        np.sqrt((rr - crop_centers[k][0]) ** 2 + (cc - crop_centers[k][1]) ** 2)
        for k in CROP_NAMES
    ])
    expo = dist**2 if squared else dist
    expo = expo / gamma**2
    expo -= expo.min(axis=0, keepdims=True)      # softmax shift, exact at the limit
    wts = np.exp(-expo)
    return wts / wts.sum(axis=0, keepdims=True)


def merge_predictions(per_crop: dict, crop_centers: dict, gamma: float,
                      squared: bool = False) -> DepthMap:
    """Convex per-pixel combination of the five crop predictions."""
    missing = [k for k in CROP_NAMES if k not in per_crop]
    if missing:
        raise InputError(f"missing crop predictions: {missing}")
    preds = []
    shape = None
    for k in CROP_NAMES:
        arr = as_depth_array(per_crop[k])
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise InputError(f"crop {k} prediction shape {arr.shape} != {shape}")
        preds.append(arr)
    wts = merge_weights(crop_centers, gamma, *shape, squared=squared)
    return DepthMap(np.einsum("khw,khw->hw", wts, np.stack(preds)))


def merge_crops(ensemble: CropEnsemble, per_crop: dict) -> DepthMap:
    rows, cols = ensemble.coarse_shape
    for k, v in per_crop.items():
        arr = as_depth_array(v)
        if arr.shape != (rows, cols):
            raise InputError(
                f"crop {k} prediction shape {arr.shape} != ({rows}, {cols})"
            )
    return merge_predictions(per_crop, ensemble.crop_centers, ensemble.gamma,
                             squared=ensemble.squared_merge)
