"""Depth-evaluation metrics and the dictionary-size reconstruction sweep.

Five metrics over valid pixels (p = prediction, g = ground truth):

    rmse          sqrt(mean (p - g)^2)
    abs_rel       mean |p - g| / g
    log10         mean |log10 p - log10 g|
    threshold_125 fraction with max(p/g, g/p) < 1.25
    sc_inv        sqrt(mean e^2 - (mean e)^2), e = ln p - ln g

Predictions are clamped to >= 1e-3 m before the ratio/log metrics (clamp
count is reported); rmse uses raw values. Aggregation goes through
compensated sums so pooled results are order-independent to ~1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .tensorio import DepthMap

PRED_CLAMP = 1e-3


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    abs_rel: float
    log10: float
    sc_inv: float
    threshold_125: float
    pixel_count: int
    clamped_count: int = 0

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "abs_rel": self.abs_rel,
            "log10": self.log10,
            "sc_inv": self.sc_inv,
            "threshold_125": self.threshold_125,
            "pixel_count": self.pixel_count,
            "clamped_count": self.clamped_count,
        }

    def format_lines(self) -> str:
        return "".join(f"{k}: {v}\n" for k, v in self.as_dict().items())


class _KahanSum:
    """Compensated scalar accumulator fed exactly-rounded per-batch sums."""

    __slots__ = ("total", "comp")

    def __init__(self):
        self.total = 0.0
        self.comp = 0.0

    def add(self, values: np.ndarray) -> None:
        y = math.fsum(values.ravel()) - self.comp
        t = self.total + y
        self.comp = (t - self.total) - y
        self.total = t


class MetricAccumulator:
    """Pools pixels across any number of prediction/ground-truth pairs."""

    def __init__(self):
        self._sq = _KahanSum()
        self._rel = _KahanSum()
        self._l10 = _KahanSum()
        self._e = _KahanSum()
        self._e2 = _KahanSum()
        self._hits = 0
        self._n = 0
        self._clamped = 0

    def update(self, pred, gt) -> None:
        pred = pred if isinstance(pred, DepthMap) else DepthMap(np.asarray(pred))
        gt = gt if isinstance(gt, DepthMap) else DepthMap(np.asarray(gt))
        if pred.depth.shape != gt.depth.shape:
            raise InputError(
                f"prediction dims {pred.depth.shape} != ground truth "
                f"{gt.depth.shape}"
            )
        mask = gt.valid_mask()
        if pred.mask is not None:
            mask &= pred.valid_mask()
        if not mask.any():
            raise InputError("no valid pixels to evaluate")
        g = gt.depth[mask]
        if (g <= 0).any():
            raise InputError("ground-truth depths must be strictly positive")
        p = pred.depth[mask]
        pc = np.maximum(p, PRED_CLAMP)
        self._clamped += int((p < PRED_CLAMP).sum())
        self._n += int(p.size)
        self._sq.add((p - g) ** 2)
        self._rel.add(np.abs(pc - g) / g)
        self._l10.add(np.abs(np.log10(pc) - np.log10(g)))
        e = np.log(pc) - np.log(g)
        self._e.add(e)
        self._e2.add(e**2)
        self._hits += int((np.maximum(pc / g, g / pc) < 1.25).sum())

    def report(self) -> MetricReport:
        if self._n == 0:
            raise InputError("no pixels accumulated")
        n = self._n
        mean_e = self._e.total / n
        var_e = max(self._e2.total / n - mean_e**2, 0.0)
        return MetricReport(
            rmse=float(np.sqrt(self._sq.total / n)),
            abs_rel=self._rel.total / n,
            log10=self._l10.total / n,
            sc_inv=float(np.sqrt(var_e)),
            threshold_125=self._hits / n,
            pixel_count=n,
            clamped_count=self._clamped,
        )


def evaluate(pred, gt) -> MetricReport:
    """All five metrics for one prediction/ground-truth pair."""
    acc = MetricAccumulator()
    acc.update(pred, gt)
    return acc.report()


def mean_prediction_baseline(train_depths, test_depths) -> MetricReport:
    """Score of predicting the per-pixel training mean for every test map.

    Train maps are resized to the test grid before averaging when needed.
    """
    from .spatial import resize_bilinear

    train_depths = list(train_depths)
    test_depths = list(test_depths)
    if not train_depths or not test_depths:
        raise InputError("need non-empty train and test sets")
    tests = [t if isinstance(t, DepthMap) else DepthMap(np.asarray(t))
             for t in test_depths]
    shape = tests[0].depth.shape
    acc = np.zeros(shape)
    for t in train_depths:
        arr = t.depth if isinstance(t, DepthMap) else np.asarray(t, dtype=np.float64)
        if arr.shape != shape:
            arr = resize_bilinear(arr, *shape)
        acc += arr
    mean_map = acc / len(train_depths)
    out = MetricAccumulator()
    for t in tests:
        out.update(DepthMap(mean_map), t)
    return out.report()


def dict_size_sweep(depths, sizes, lambda_w: float = 0.02,
                    rel_tol: float = 1e-6, max_outer: int = 100,
                    seed: int = 0):
    """Reconstruction RMSE of coarse training depths under sparse coding,
    for each basis size in ascending `sizes`.

    The same fixed lambda_w and seed are used for every size, so the basis
    initializations are nested and the error is non-increasing in m up to
    solver tolerance.
    """
    from .coupled import TrainConfig, sparse_coding

    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise InputError("sizes must be sorted ascending")
    grids = [d.depth if isinstance(d, DepthMap) else np.asarray(d, dtype=np.float64)
             for d in depths]
    if not grids:
        raise InputError("need at least one depth map")
    shape = grids[0].shape
    if any(g.shape != shape for g in grids):
        raise InputError("all coarse depth maps must share dimensions")
    N = len(grids)
    stack = np.stack(grids).reshape(N, -1).T
    mean = stack.mean(axis=1, keepdims=True)
    D = stack - mean
    results = []
    for m in sizes:
        cfg = TrainConfig(m=m, lambda_w=lambda_w, lambda_r=0.0,
                          max_outer=max_outer, rel_tol=rel_tol, seed=seed)
        B, W, _ = sparse_coding(D, cfg, lambda_w, max_outer=max_outer)
        resid = D - B.B @ W
        results.append((m, float(np.sqrt(np.mean(resid**2)))))
    return results
