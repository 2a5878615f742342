"""Synthetic coupled feature/depth data for desk-scale verification.

The generative process matches the model family: a random unit-norm basis,
nonnegative sparse mixing weights per example, and features built so the
weights are exactly a linear function of an RBF expansion of them (a hidden
regressor is solved against an over-complete center pool, so a coupled
signal exists by construction).

Full-resolution depth is the upsampled coarse map plus a high-passed,
row-block-dependent detail term derived from the per-example conv stand-in
fields. The full grid is 3x the coarse grid: with pixel-center alignment an
odd factor makes downsampling read exact interpolation nodes, so the coarse
content of a generated map is recovered bit-for-bit by the training resize
and the detail term vanishes there by construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .coupled import CROP_NAMES
from .errors import InputError
from .kernels import HypercolumnField, hypercolumn_grid, make_center_bank, rbf_matrix
from .manifest import (CenterRecord, ExampleRecord, Manifest, ManifestMeta,
                       load_manifest, write_manifest)
from .spatial import resize_bilinear
from .tensorio import write_tensor

FULL_FACTOR = 3            # odd: bilinear down(up(x)) == x at this ratio
PI_FACTOR = 2
N_BLOCKS = 8
DETAIL_AMP = 0.15          # meters, RMS of the injected block-local detail
CROP_JITTER = 0.15         # feature perturbation distinguishing the crops
LAYER_CHANNELS = (("c2", 2, 3), ("c4", 4, 3), ("c8", 8, 2))  # name, divisor, ch


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 64
    n_test: int = 32
    p_low: int = 192
    m_true: int = 8
    feat_dim: int = 32
    sparsity: int = 3
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise InputError("n_train and n_test must be >= 1")
        if not 1 <= self.m_true <= self.p_low:
            raise InputError("m_true must satisfy 1 <= m_true <= p_low")
        if not 1 <= self.sparsity <= self.m_true:
            raise InputError("sparsity must satisfy 1 <= sparsity <= m_true")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be >= 0")
        if self.feat_dim < 1:
            raise InputError("feat_dim must be >= 1")


def coarse_grid_shape(p_low: int):
    """Factor p_low into the (rows, cols) pair closest to 4:3."""
    best = None
    best_err = np.inf
    for r in range(1, p_low + 1):
        if p_low % r:
            continue
        c = p_low // r
        err = abs(c / r - 4.0 / 3.0)
        if err < best_err:
            best_err = err
            best = (r, c)
    return best


@dataclass(frozen=True)
class GroundTruthBundle:
    """Hidden generative state retained for oracle checks."""

    basis: np.ndarray                 # (p_low, m_true)
    weights: np.ndarray               # (m_true, N), columns ordered by `ids`
    regressors: dict                  # crop -> (m_true, n_centers)
    mean_coarse: np.ndarray           # (coarse_rows, coarse_cols)
    ids: tuple
    coupling_residual: float          # max |T* Phi - W| over crops

    def coarse_depth(self, idx: int) -> np.ndarray:
        d = self.basis @ self.weights[:, idx]
        return d.reshape(self.mean_coarse.shape) + self.mean_coarse


@dataclass
class SynthData:
    """In-memory generation result, pre-file-layout."""

    spec: SynthSpec
    meta: ManifestMeta
    ids: tuple
    split: dict
    coarse: dict                      # id -> (cr, cc)
    full: dict                        # id -> (H, W)
    guides: dict                      # id -> (H, W, 3)
    features: dict                    # crop -> {id -> (dim,)}
    convs: dict                       # id -> {layer -> (h, w, ch)}
    center_features: dict             # crop -> (n_centers, dim)
    bundle: GroundTruthBundle


def _smooth_field(rng, rows, cols, sigma_frac=6.0):
    noise = rng.standard_normal((rows, cols))
    smooth = scipy.ndimage.gaussian_filter(noise, sigma=min(rows, cols) / sigma_frac,
                                           mode="nearest")
    smooth -= smooth.mean()
    std = smooth.std()
    return smooth / (std if std > 1e-12 else 1.0)


def _norm01(a):
    lo, hi = a.min(), a.max()
    if hi - lo < 1e-12:
        return np.full_like(a, 0.5)
    return (a - lo) / (hi - lo)


def generate_arrays(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    cr, cc = coarse_grid_shape(spec.p_low)
    pr, pc = PI_FACTOR * cr, PI_FACTOR * cc
    fr, fc = FULL_FACTOR * cr, FULL_FACTOR * cc
    n = spec.n_train + spec.n_test
    ids = tuple(f"train_{i:04d}" for i in range(spec.n_train)) + tuple(
        f"test_{i:04d}" for i in range(spec.n_test))
    split = {i: ("train" if i.startswith("train") else "test") for i in ids}

    # basis: smooth, zero-mean, unit-norm atoms (deliberately correlated)
    basis = np.empty((spec.p_low, spec.m_true))
    for j in range(spec.m_true):
        atom = _smooth_field(rng, cr, cc, sigma_frac=4.0).ravel()
        basis[:, j] = atom / np.linalg.norm(atom)

    mean_coarse = 2.5 + 0.8 * _smooth_field(rng, cr, cc)

    support = rng.random((spec.m_true, n)) < spec.sparsity / spec.m_true
    values = 2.0 * rng.uniform(0.5, 1.5, size=(spec.m_true, n))
    weights = np.where(support, values, 0.0)

    noise = spec.noise_sigma * rng.standard_normal((spec.p_low, n))
    coarse_mat = basis @ weights + mean_coarse.ravel()[:, None] + noise

    # features with an exactly-representable weight map per crop
    base = rng.standard_normal((n, spec.feat_dim))
    n_centers = int(np.ceil(1.5 * n))
    center_base = rng.standard_normal((n_centers, spec.feat_dim))
    features = {}
    center_features = {}
    regressors = {}
    coupling_residual = 0.0
    for crop in CROP_NAMES:
        feats = base + CROP_JITTER * rng.standard_normal(base.shape)
        cents = center_base + CROP_JITTER * rng.standard_normal(center_base.shape)
        bank = make_center_bank(cents)
        Phi = rbf_matrix(feats, bank)                        # (n_centers, n)
        T, *_ = np.linalg.lstsq(Phi.T, weights.T, rcond=None)
        T = T.T                                              # (m_true, n_centers)
        resid = float(np.abs(T @ Phi - weights).max())
        coupling_residual = max(coupling_residual, resid)
        features[crop] = {ids[i]: feats[i] for i in range(n)}
        center_features[crop] = cents
        regressors[crop] = T
    if coupling_residual > 1e-6 * max(1.0, float(np.abs(weights).max())):
        raise InputError(
            f"synthetic coupling failed: regressor residual {coupling_residual:.3e}"
        )

    # conv stand-ins, block-local detail, guides
    blocks = np.minimum((np.arange(fr) * N_BLOCKS) // fr, N_BLOCKS - 1)
    total_ch = sum(ch for _, _, ch in LAYER_CHANNELS)
    block_coef = rng.standard_normal((N_BLOCKS, total_ch))
    block_coef /= np.linalg.norm(block_coef, axis=1, keepdims=True)

    convs = {}
    full = {}
    guides = {}
    coarse = {}
    guide_noise = {}
    for i, ex in enumerate(ids):
        layers = {}
        for name, div, ch in LAYER_CHANNELS:
            h = max(2, fr // div)
            w = max(2, fc // div)
            layers[name] = np.stack(
                [_smooth_field(rng, h, w, sigma_frac=4.0) for _ in range(ch)],
                axis=2)
        convs[ex] = layers
        field = HypercolumnField(tuple(layers[name] for name, _, _ in LAYER_CHANNELS),
                                 fr, fc)
        hyper = hypercolumn_grid(field)                      # (fr, fc, total_ch)
        detail_raw = np.einsum("hwc,hc->hw", hyper, block_coef[blocks])
        # strip everything the coarse grid can see, then set the amplitude
        down = resize_bilinear(detail_raw, cr, cc)
        detail = detail_raw - resize_bilinear(down, fr, fc)
        std = detail.std()
        detail *= DETAIL_AMP / (std if std > 1e-9 else 1.0)

        cg = coarse_mat[:, i].reshape(cr, cc)
        coarse[ex] = cg
        full[ex] = resize_bilinear(cg, fr, fc) + detail
        guide_noise[ex] = _smooth_field(rng, fr, fc)

    # shift everything up if any depth dipped too low; keeps metrics defined
    low = min(min(f.min() for f in full.values()),
              min(c.min() for c in coarse.values()))
    shift = max(0.0, 0.25 - low)
    if shift > 0:
        mean_coarse = mean_coarse + shift
        for ex in ids:
            coarse[ex] = coarse[ex] + shift
            full[ex] = full[ex] + shift

    for ex in ids:
        detail_view = full[ex] - resize_bilinear(coarse[ex], fr, fc)
        guides[ex] = np.stack(
            [_norm01(full[ex]), _norm01(detail_view), _norm01(guide_noise[ex])],
            axis=2)

    meta = ManifestMeta(
        coarse_rows=cr, coarse_cols=cc, pi_rows=pr, pi_cols=pc,
        full_rows=fr, full_cols=fc, feat_dim=spec.feat_dim,
        crop_names=CROP_NAMES, layers=tuple(name for name, _, _ in LAYER_CHANNELS),
    )
    bundle = GroundTruthBundle(
        basis=basis, weights=weights, regressors=regressors,
        mean_coarse=mean_coarse, ids=ids, coupling_residual=coupling_residual,
    )
    return SynthData(
        spec=spec, meta=meta, ids=ids, split=split, coarse=coarse, full=full,
        guides=guides, features=features, convs=convs,
        center_features=center_features, bundle=bundle,
    )


def generate_synthetic(spec: SynthSpec, out_dir) -> tuple:
    """Generate a dataset under `out_dir` and return (Manifest, bundle).

    Deterministic: the same spec (seed included) produces byte-identical
    files. The hidden generative state is also written under truth/ for
    oracle checks by external tooling.
    """
    data = generate_arrays(spec)
    meta = data.meta
    for sub in ("depths", "guides", "feats", "conv", "centers", "truth"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    examples = []
    for ex in data.ids:
        depth_rel = f"depths/{ex}.cdlt"
        guide_rel = f"guides/{ex}.cdlt"
        write_tensor(data.full[ex], os.path.join(out_dir, depth_rel))
        write_tensor(data.guides[ex], os.path.join(out_dir, guide_rel))
        feats = {}
        for crop in meta.crop_names:
            rel = f"feats/{ex}.{crop}.cdlt"
            write_tensor(data.features[crop][ex], os.path.join(out_dir, rel))
            feats[crop] = rel
        convs = {}
        for layer in meta.layers:
            rel = f"conv/{ex}.{layer}.cdlt"
            write_tensor(data.convs[ex][layer], os.path.join(out_dir, rel))
            convs[layer] = rel
        examples.append(ExampleRecord(id=ex, split=data.split[ex],
                                      depth=depth_rel, guide=guide_rel,
                                      features=feats, conv_maps=convs))

    centers = []
    n_centers = next(iter(data.center_features.values())).shape[0]
    for k in range(n_centers):
        cid = f"center_{k:04d}"
        feats = {}
        for crop in meta.crop_names:
            rel = f"centers/{cid}.{crop}.cdlt"
            write_tensor(data.center_features[crop][k], os.path.join(out_dir, rel))
            feats[crop] = rel
        centers.append(CenterRecord(id=cid, features=feats))

    truth = os.path.join(out_dir, "truth")
    write_tensor(data.bundle.basis, os.path.join(truth, "basis.cdlt"))
    write_tensor(data.bundle.weights, os.path.join(truth, "weights.cdlt"))
    write_tensor(data.bundle.mean_coarse, os.path.join(truth, "mean.cdlt"))
    for crop in meta.crop_names:
        write_tensor(data.bundle.regressors[crop],
                     os.path.join(truth, f"regressor.{crop}.cdlt"))
    with open(os.path.join(truth, "meta.txt"), "w", encoding="ascii") as fh:
        fh.write(f"ids={','.join(data.ids)}\n")
        fh.write(f"coupling_residual={data.bundle.coupling_residual!r}\n")
        for k, v in vars(spec).items():
            fh.write(f"spec.{k}={v!r}\n")

    manifest_path = os.path.join(out_dir, "manifest.txt")
    write_manifest(manifest_path, meta, examples, centers)
    return load_manifest(manifest_path), data.bundle
