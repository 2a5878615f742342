"""Per-pixel depth refinement on hypercolumn RBF features.

Each block of intermediate-resolution rows gets its own ridge regressor
over the feature [1, g, rbf(hypercolumn)], where g is the global depth
estimate at the pixel; the bias and the global-depth coefficient stay
unregularized. Training features for g must come from cross-validated
global estimates (see FoldPlan / the pipeline layer), never from a model
that saw the example.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .kernels import CenterBank, HypercolumnField, hypercolumn_grid, kmeans, \
    make_center_bank, rbf_matrix, rbf_vector, sigma_heuristic
from .spatial import ColorizationConfig, upsample_to
from .tensorio import DepthMap, as_depth_array


@dataclass(frozen=True)
class RefineConfig:
    n_centers: int = 512
    lambda_t: float = 1e-3
    block_height: int | None = None   # None: p_i_rows // 8
    seed: int = 0
    sample_pixels: int = 20000        # k-means/ridge sample cap per block
    folds: int = 10
    single_model: bool = False
    no_global_feature: bool = False

    def __post_init__(self):
        if self.n_centers < 1:
            raise InputError("n_centers must be >= 1")
        if self.lambda_t < 0:
            raise InputError("lambda_t must be >= 0")
        if self.block_height is not None and self.block_height < 1:
            raise InputError("block_height must be >= 1")
        if self.sample_pixels < 1:
            raise InputError("sample_pixels must be >= 1")
        if self.folds < 2:
            raise InputError("folds must be >= 2")


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict                  # example id -> fold index
    seed: int

    def __post_init__(self):
        folds = set(self.assignment.values())
        if folds != set(range(self.k)):
            raise InputError("every fold index in [0, k) must be non-empty")

    def fold_ids(self, fold: int):
        return [i for i, f in self.assignment.items() if f == fold]


def build_fold_plan(ids, k: int, seed: int) -> FoldPlan:
    ids = list(ids)
    if k > len(ids):
        raise InputError(f"cannot split {len(ids)} examples into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    assignment = {ids[idx]: int(pos % k) for pos, idx in enumerate(order)}
    return FoldPlan(k=k, assignment=assignment, seed=seed)


@dataclass(frozen=True)
class BlockModel:
    row_start: int
    row_end: int
    t_up: np.ndarray
    bank: CenterBank


@dataclass(frozen=True)
class RefinementModel:
    blocks: tuple
    p_i_rows: int
    p_i_cols: int
    uses_global: bool = True

    def __post_init__(self):
        rows = sorted((b.row_start, b.row_end) for b in self.blocks)
        cursor = 0
        for start, end in rows:
            if start != cursor or end <= start:
                raise InputError("blocks must partition the row range exactly")
            cursor = end
        if cursor != self.p_i_rows:
            raise InputError("blocks must cover [0, p_i_rows)")

    def block_for_row(self, row: int) -> BlockModel:
        for b in self.blocks:
            if b.row_start <= row < b.row_end:
                return b
        raise InputError(f"row {row} outside [0, {self.p_i_rows})")


def block_ranges(p_i_rows: int, block_height: int):
    """Partition rows into blocks; the last block absorbs any remainder."""
    if block_height < 1 or block_height > p_i_rows:
        raise InputError("block_height must be in [1, p_i_rows]")
    edges = list(range(0, p_i_rows, block_height))
    ranges = [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]
    ranges.append((edges[-1], p_i_rows))
    # merge a short trailing sliver into the previous block
    if len(ranges) > 1 and ranges[-1][1] - ranges[-1][0] < block_height:
        last = ranges.pop()
        prev = ranges.pop()
        ranges.append((prev[0], last[1]))
    return ranges


def build_local_feature(hyper, g_up: float, bank: CenterBank) -> np.ndarray:
    """[1, g_up, rbf(hyper)...]: bias, global-depth prior, kernel features."""
    phi = rbf_vector(np.asarray(hyper, dtype=np.float64), bank)
    return np.concatenate(([1.0, float(g_up)], phi))


def _ridge_unpenalized_head(X, y, lambda_t: float, head: int) -> np.ndarray:
    """Least squares with an L2 penalty on all but the first `head` coords.

    Solved via the augmented system, so rank-deficient cases fall back to
    the minimum-norm optimum.
    """
    q, nf = X.shape
    n_pen = nf - head
    aug = np.zeros((q + n_pen, nf))
    aug[:q] = X
    if n_pen > 0 and lambda_t > 0:
        aug[q:, head:] = np.sqrt(lambda_t) * np.eye(n_pen)
    rhs = np.concatenate([y, np.zeros(n_pen)])
    t, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return t


def train_refinement(hypers, g_ups, targets, cfg: RefineConfig) -> RefinementModel:
    """Fit the per-block regressors.

    hypers: per-example HypercolumnField on the intermediate grid.
    g_ups: per-example cross-validated global estimate, same grid.
    targets: per-example ground-truth depth resized to the same grid.
    """
    if not (len(hypers) == len(g_ups) == len(targets)) or not hypers:
        raise InputError("need equally many hyper fields, estimates, targets")
    rows, cols = np.asarray(targets[0]).shape
    for h in hypers:
        if (h.target_rows, h.target_cols) != (rows, cols):
            raise InputError("hypercolumn fields must target the common grid")
    g_ups = [as_depth_array(g) for g in g_ups]
    targets = [as_depth_array(t) for t in targets]
    if any(g.shape != (rows, cols) for g in g_ups) or \
       any(t.shape != (rows, cols) for t in targets):
        raise InputError("estimates and targets must share the common grid")

    bh = cfg.block_height if cfg.block_height is not None else max(1, rows // 8)
    ranges = block_ranges(rows, bh)
    n_centers = cfg.n_centers
    if cfg.single_model:
        n_centers = cfg.n_centers * len(ranges)
        ranges = [(0, rows)]

    grid_arr = np.stack([hypercolumn_grid(h) for h in hypers])
    target_arr = np.stack(targets)
    g_arr = np.stack(g_ups)
    master = np.random.default_rng(cfg.seed)
    block_seeds = [int(master.integers(2**62)) for _ in ranges]

    blocks = []
    for bi, (start, end) in enumerate(ranges):
        rng = np.random.default_rng(block_seeds[bi])
        n_ex = grid_arr.shape[0]
        total = n_ex * (end - start) * cols
        if total == 0:
            raise InputError(f"block {bi} rows [{start}, {end}) has no pixels")
        flat = np.arange(total)
        if total > cfg.sample_pixels:
            flat = np.sort(rng.choice(total, size=cfg.sample_pixels, replace=False))
        ex_idx = flat // ((end - start) * cols)
        rem = flat % ((end - start) * cols)
        r_idx = start + rem // cols
        c_idx = rem % cols

        feats = grid_arr[ex_idx, r_idx, c_idx]
        y = target_arr[ex_idx, r_idx, c_idx]
        g = g_arr[ex_idx, r_idx, c_idx]

        k = min(n_centers, feats.shape[0])
        centroids = kmeans(feats, k, seed=block_seeds[bi])
        if k >= 2:
            nu = sigma_heuristic(centroids)
            if nu <= 0:
                nu = 1.0
        else:
            nu = 1.0
        bank = make_center_bank(centroids, sigma=nu)

        phi = rbf_matrix(feats, bank).T                    # (q, k)
        if cfg.no_global_feature:
            X = np.hstack([np.ones((phi.shape[0], 1)), phi])
            head = 1
        else:
            X = np.hstack([np.ones((phi.shape[0], 1)), g[:, None], phi])
            head = 2
        t_up = _ridge_unpenalized_head(X, y, cfg.lambda_t, head)
        blocks.append(BlockModel(row_start=start, row_end=end, t_up=t_up, bank=bank))

    return RefinementModel(blocks=tuple(blocks), p_i_rows=rows, p_i_cols=cols,
                           uses_global=not cfg.no_global_feature)


def predict_refined_grid(model: RefinementModel, hyper_field: HypercolumnField,
                         g_up) -> np.ndarray:
    """Blockwise refined prediction on the intermediate grid."""
    g_up = as_depth_array(g_up)
    if (hyper_field.target_rows, hyper_field.target_cols) != \
            (model.p_i_rows, model.p_i_cols):
        raise InputError("hypercolumn grid does not match the model")
    if g_up.shape != (model.p_i_rows, model.p_i_cols):
        raise InputError("global estimate does not match the model grid")
    grid = hypercolumn_grid(hyper_field)
    out = np.empty_like(g_up)
    for blk in model.blocks:
        rows = slice(blk.row_start, blk.row_end)
        feats = grid[rows].reshape(-1, grid.shape[2])
        phi = rbf_matrix(feats, blk.bank).T
        if model.uses_global:
            X = np.hstack([np.ones((phi.shape[0], 1)),
                           g_up[rows].reshape(-1, 1), phi])
        else:
            X = np.hstack([np.ones((phi.shape[0], 1)), phi])
        out[rows] = (X @ blk.t_up).reshape(blk.row_end - blk.row_start, -1)
    return out


def infer_refined(model: RefinementModel, hyper_field: HypercolumnField, g_up,
                  guide_full, full_rows: int, full_cols: int,
                  color_cfg: ColorizationConfig) -> DepthMap:
    """Refined intermediate prediction, upsampled to full resolution with
    edge-aware smoothing."""
    mid = predict_refined_grid(model, hyper_field, g_up)
    return DepthMap(upsample_to(mid, guide_full, full_rows, full_cols, color_cfg))
