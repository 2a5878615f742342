"""Dataset-level orchestration: per-crop training, ensemble inference,
cross-validated estimates for refinement, ablations, and the basis-size
sweep. The CLI is a thin wrapper over these functions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coupled import (CROP_NAMES, CropEnsemble, GlobalModel, TrainConfig,
                      default_crop_centers, default_gamma, infer_global,
                      merge_crops, merge_predictions, resolve_lambda_w,
                      solve_T, sparse_coding, train_global)
from .errors import InputError
from .kernels import CenterBank, make_center_bank, rbf_matrix, rbf_vector
from .manifest import LoadedDataset
from .metrics import MetricAccumulator, MetricReport, evaluate
from .refine import (FoldPlan, RefineConfig, RefinementModel, build_fold_plan,
                     infer_refined, train_refinement)
from .sparse import LassoConfig
from .spatial import ColorizationConfig, pipeline_upsample, resize_bilinear, \
    upsample_to
from .tensorio import DepthMap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MergeConfig:
    gamma: float | None = None        # None: half max pairwise center distance
    squared: bool = False
    crop_size: int | None = None      # full-res pixels; None: proportional


def assemble_center_banks(ds: LoadedDataset) -> dict:
    """Per-crop RBF banks from the manifest's designated center records."""
    if not ds.center_features:
        raise InputError("manifest provides no center records")
    return {crop: make_center_bank(ds.center_features[crop])
            for crop in ds.meta.crop_names}


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def train_crop_ensemble(ds: LoadedDataset, ids, cfg: TrainConfig,
                        merge: MergeConfig = MergeConfig(), jobs: int = 1):
    """Train the five crop models and bundle them. Returns (ensemble,
    {crop: J trace})."""
    banks = assemble_center_banks(ds)
    depths = ds.depth_stack(ids)
    meta = ds.meta

    def work(crop):
        model, trace = train_global(
            ds.feature_matrix(crop, ids), depths, cfg, banks[crop],
            meta.coarse_rows, meta.coarse_cols,
        )
        return crop, model, trace

    results = _map_jobs(work, list(CROP_NAMES), jobs)
    models = {crop: model for crop, model, _ in results}
    traces = {crop: trace for crop, _, trace in results}
    centers = default_crop_centers(meta.full_rows, meta.full_cols,
                                   merge.crop_size, meta.coarse_rows,
                                   meta.coarse_cols)
    gamma = merge.gamma if merge.gamma is not None else default_gamma(centers)
    ens = CropEnsemble(models=models, crop_centers=centers, gamma=gamma,
                       squared_merge=merge.squared)
    return ens, traces


def infer_merged_coarse(ens: CropEnsemble, ds: LoadedDataset, ids,
                        lasso: LassoConfig | None = None) -> dict:
    out = {}
    for ex in ids:
        per_crop = {crop: infer_global(ens.models[crop], ds.features[crop][ex],
                                       lasso)
                    for crop in CROP_NAMES}
        out[ex] = merge_crops(ens, per_crop)
    return out


def infer_intermediate(ens, ds, ids, color: ColorizationConfig,
                       lasso: LassoConfig | None = None) -> dict:
    """Merged coarse predictions lifted to the intermediate grid (the
    refinement's working resolution)."""
    coarse = infer_merged_coarse(ens, ds, ids, lasso)
    meta = ds.meta
    return {ex: upsample_to(coarse[ex].depth, ds.guides[ex],
                            meta.pi_rows, meta.pi_cols, color)
            for ex in ids}


def infer_full(ens, ds, ids, color: ColorizationConfig,
               lasso: LassoConfig | None = None) -> dict:
    coarse = infer_merged_coarse(ens, ds, ids, lasso)
    meta = ds.meta
    return {ex: pipeline_upsample(coarse[ex].depth, ds.guides[ex],
                                  meta.pi_rows, meta.pi_cols,
                                  meta.full_rows, meta.full_cols, color)
            for ex in ids}


def make_cv_estimates(ds: LoadedDataset, plan: FoldPlan, cfg: TrainConfig,
                      color: ColorizationConfig,
                      lasso: LassoConfig | None = None,
                      merge: MergeConfig = MergeConfig(),
                      jobs: int = 1) -> dict:
    """Cross-validated intermediate-resolution global estimates: each fold
    is predicted by an ensemble trained on the other folds, so no example
    sees a model trained on itself."""
    train_ids = list(plan.assignment)
    out = {}
    for fold in range(plan.k):
        held = [i for i in train_ids if plan.assignment[i] == fold]
        rest = [i for i in train_ids if plan.assignment[i] != fold]
        if not rest:
            raise InputError(f"fold {fold} leaves no training examples")
        ens, _ = train_crop_ensemble(ds, rest, cfg, merge, jobs=jobs)
        out.update(infer_intermediate(ens, ds, held, color, lasso))
    if set(out) != set(train_ids):
        raise InputError("cross-validation folds did not cover every example")
    return out


def refinement_inputs(ds: LoadedDataset, ids, g_up_maps: dict):
    meta = ds.meta
    hypers = [ds.hyper_field(ex, meta.pi_rows, meta.pi_cols) for ex in ids]
    g_ups = [g_up_maps[ex] for ex in ids]
    targets = [resize_bilinear(ds.depths[ex], meta.pi_rows, meta.pi_cols)
               for ex in ids]
    return hypers, g_ups, targets


def train_refinement_cv(ds: LoadedDataset, refine_cfg: RefineConfig,
                        train_cfg: TrainConfig, color: ColorizationConfig,
                        lasso: LassoConfig | None = None,
                        merge: MergeConfig = MergeConfig(),
                        jobs: int = 1):
    """Full refinement training recipe: fold plan, cross-validated global
    estimates, per-block ridge fits. Returns (model, plan)."""
    train_ids = ds.train_ids()
    plan = build_fold_plan(train_ids, refine_cfg.folds, refine_cfg.seed)
    cv = make_cv_estimates(ds, plan, train_cfg, color, lasso, merge, jobs=jobs)
    hypers, g_ups, targets = refinement_inputs(ds, train_ids, cv)
    model = train_refinement(hypers, g_ups, targets, refine_cfg)
    return model, plan


def infer_refined_full(ens: CropEnsemble, model: RefinementModel,
                       ds: LoadedDataset, ids, color: ColorizationConfig,
                       lasso: LassoConfig | None = None) -> dict:
    meta = ds.meta
    g_up = infer_intermediate(ens, ds, ids, color, lasso)
    out = {}
    for ex in ids:
        hyper = ds.hyper_field(ex, meta.pi_rows, meta.pi_cols)
        out[ex] = infer_refined(model, hyper, g_up[ex], ds.guides[ex],
                                meta.full_rows, meta.full_cols, color).depth
    return out


@dataclass(frozen=True)
class DirectModel:
    """Ablation regressor mapping kernel features straight to coarse depth."""

    T: np.ndarray                     # (p_low, n)
    bank: CenterBank
    mean_depth: np.ndarray
    coarse_rows: int
    coarse_cols: int


def train_direct(features, depths, cfg: TrainConfig, bank: CenterBank,
                 coarse_rows: int, coarse_cols: int) -> DirectModel:
    feats = np.asarray(features, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    N = feats.shape[0]
    coarse = np.stack([resize_bilinear(d, coarse_rows, coarse_cols)
                       for d in depths])
    mean_depth = coarse.mean(axis=0)
    D = (coarse - mean_depth).reshape(N, -1).T
    Phi = rbf_matrix(feats, bank)
    T = solve_T(D, Phi, 1.0, cfg.lambda_T).T
    return DirectModel(T=T, bank=bank, mean_depth=mean_depth,
                       coarse_rows=coarse_rows, coarse_cols=coarse_cols)


def infer_direct(model: DirectModel, feature) -> DepthMap:
    phi = rbf_vector(np.asarray(feature, dtype=np.float64), model.bank)
    grid = (model.T @ phi).reshape(model.coarse_rows, model.coarse_cols)
    return DepthMap(grid + model.mean_depth)


def train_uncoupled_model(features, depths, cfg: TrainConfig,
                          bank: CenterBank, coarse_rows: int,
                          coarse_cols: int) -> GlobalModel:
    """Sparse-code the basis, then fit the regressor once: no re-alternation,
    so basis and regressor are never optimized jointly."""
    feats = np.asarray(features, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    N = feats.shape[0]
    coarse = np.stack([resize_bilinear(d, coarse_rows, coarse_cols)
                       for d in depths])
    mean_depth = coarse.mean(axis=0)
    D = (coarse - mean_depth).reshape(N, -1).T
    lambda_w = resolve_lambda_w(cfg, D)
    B, W, _ = sparse_coding(D, cfg, lambda_w)
    Phi = rbf_matrix(feats, bank)
    T = solve_T(W, Phi, cfg.lambda_r, cfg.lambda_T)
    return GlobalModel(dictionary=B, regressor=T, bank=bank,
                       mean_depth=mean_depth, coarse_rows=coarse_rows,
                       coarse_cols=coarse_cols, lambda_w=lambda_w)


ABLATION_MODES = ("coupled", "uncoupled", "direct_regression")


def run_ablation(ds: LoadedDataset, mode: str, cfg: TrainConfig,
                 color: ColorizationConfig,
                 lasso: LassoConfig | None = None,
                 merge: MergeConfig = MergeConfig(), jobs: int = 1):
    """Train the chosen variant on the train split and score the test split
    at full resolution. Returns (MetricReport, per-example reports)."""
    if mode not in ABLATION_MODES:
        raise InputError(f"unknown ablation mode {mode!r}")
    meta = ds.meta
    train_ids = ds.train_ids()
    test_ids = ds.test_ids()
    if not train_ids or not test_ids:
        raise InputError("ablation needs both train and test examples")
    banks = assemble_center_banks(ds)
    depths = ds.depth_stack(train_ids)
    centers = default_crop_centers(meta.full_rows, meta.full_cols,
                                   merge.crop_size, meta.coarse_rows,
                                   meta.coarse_cols)
    gamma = merge.gamma if merge.gamma is not None else default_gamma(centers)

    if mode == "direct_regression":
        models = {crop: train_direct(ds.feature_matrix(crop, train_ids), depths,
                                     cfg, banks[crop], meta.coarse_rows,
                                     meta.coarse_cols)
                  for crop in CROP_NAMES}

        def coarse_for(ex):
            return {crop: infer_direct(models[crop], ds.features[crop][ex])
                    for crop in CROP_NAMES}
    else:
        if mode == "coupled":
            def build(crop):
                model, _ = train_global(ds.feature_matrix(crop, train_ids),
                                        depths, cfg, banks[crop],
                                        meta.coarse_rows, meta.coarse_cols)
                return crop, model
        else:
            def build(crop):
                model = train_uncoupled_model(
                    ds.feature_matrix(crop, train_ids), depths, cfg,
                    banks[crop], meta.coarse_rows, meta.coarse_cols)
                return crop, model

        models = dict(_map_jobs(build, list(CROP_NAMES), jobs))

        def coarse_for(ex):
            return {crop: infer_global(models[crop], ds.features[crop][ex],
                                       lasso)
                    for crop in CROP_NAMES}

    acc = MetricAccumulator()
    per_example = {}
    for ex in test_ids:
        merged = merge_predictions(coarse_for(ex), centers, gamma,
                                   squared=merge.squared)
        full = pipeline_upsample(merged.depth, ds.guides[ex], meta.pi_rows,
                                 meta.pi_cols, meta.full_rows, meta.full_cols,
                                 color)
        per_example[ex] = evaluate(DepthMap(full), DepthMap(ds.depths[ex]))
        acc.update(DepthMap(full), DepthMap(ds.depths[ex]))
    return acc.report(), per_example


def dict_sweep_from_dataset(ds: LoadedDataset, sizes, lambda_w: float = 0.02,
                            seed: int = 0):
    from .metrics import dict_size_sweep

    meta = ds.meta
    coarse = [resize_bilinear(ds.depths[ex], meta.coarse_rows, meta.coarse_cols)
              for ex in ds.train_ids()]
    return dict_size_sweep(coarse, sizes, lambda_w=lambda_w, seed=seed)
