"""Nonnegative L1-regularized least squares.

Solves min_w ||a - C w||_2^2 + lambda_w ||w||_1 subject to w >= 0, the
weight-estimation problem of both the training alternation and inference.
All L2 fidelity terms in this package use the squared convention.

The production solver is cyclic coordinate descent on the Gram form, with a
projected-gradient solver (`oracle_nn_lasso`) kept as an independent
reference for tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InputError


@dataclass(frozen=True)
class LassoConfig:
    """lambda_w is the L1 weight; max_iter None means 10 * m sweeps."""

    lambda_w: float = 0.0
    max_iter: int | None = None
    tol: float = 1e-8

    def __post_init__(self):
        if self.lambda_w < 0:
            raise InputError("lambda_w must be >= 0")
        if self.tol <= 0:
            raise InputError("tol must be > 0")
        if self.max_iter is not None and self.max_iter < 0:
            raise InputError("max_iter must be >= 0")

    def sweeps(self, m: int) -> int:
        return 10 * m if self.max_iter is None else self.max_iter


@dataclass(frozen=True)
class SparseWeights:
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.w > 0)


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")


def solve_nn_lasso(C, a, cfg: LassoConfig) -> SparseWeights:
    """Solve the nonnegative lasso to the KKT tolerance in `cfg`.

    Raises ConvergenceError (carrying the best iterate) if the sweep cap is
    reached first.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    _check_finite("C", C)
    _check_finite("a", a)
    if C.ndim != 2 or a.ndim != 1 or C.shape[0] != a.shape[0]:
        raise InputError(f"shape mismatch: C {C.shape}, a {a.shape}")
    G = C.T @ C
    b = C.T @ a
    return solve_nn_lasso_gram(G, b, cfg)


def solve_nn_lasso_gram(G, b, cfg: LassoConfig, w0=None) -> SparseWeights:
    """Gram-form variant: G = C'C, b = C'a. Used on stacked systems where
    G is shared across many right-hand sides."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    m = G.shape[0]
    w = np.zeros(m) if w0 is None else np.ascontiguousarray(w0, dtype=np.float64).copy()
    sweeps, kkt = _kernels.nn_lasso_cd(G, b, cfg.lambda_w, cfg.sweeps(m), cfg.tol, w)
    if kkt > cfg.tol:
        raise ConvergenceError(
            f"nonnegative lasso: KKT residual {kkt:.3e} > tol {cfg.tol:.3e} "
            f"after {sweeps} sweeps",
            best=SparseWeights(w),
        )
    return SparseWeights(w)


def infer_weights(T, phi, cfg: LassoConfig) -> SparseWeights:
    """Weights that best match the regressor output T phi under the L1
    penalty and positivity: elementwise max(0, (T phi)_j - lambda_w / 2)."""
    T = np.asarray(T, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    _check_finite("T", T)
    _check_finite("phi", phi)
    if T.ndim != 2 or phi.ndim != 1 or T.shape[1] != phi.shape[0]:
        raise InputError(f"shape mismatch: T {T.shape}, phi {phi.shape}")
    v = T @ phi
    return SparseWeights(np.maximum(0.0, v - 0.5 * cfg.lambda_w))


def nn_lasso_objective(C, a, lam, w) -> float:
    return float(np.sum((a - C @ w) ** 2) + lam * np.sum(np.abs(w)))


def oracle_nn_lasso(C, a, cfg: LassoConfig) -> SparseWeights:
    """Projected gradient descent with a slowly diminishing step.

    Independent reference solver for tests: always returns its best iterate,
    never raises. On the feasible set the objective is smooth (the L1 term
    is linear there), so plain projected gradient applies.
    """
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    G = C.T @ C
    b = C.T @ a
    m = G.shape[0]
    lam = cfg.lambda_w
    lip = 2.0 * max(float(np.linalg.eigvalsh(G)[-1]), 1e-12)
    w = np.zeros(m)
    best_w = w.copy()
    best_obj = nn_lasso_objective(C, a, lam, w)
    iters = 10 * cfg.sweeps(m)
    for t in range(iters):
        g = 2.0 * (G @ w - b) + lam
        step = 1.0 / (lip * (1.0 + 1e-3 * t))
        w = np.maximum(0.0, w - step * g)
        obj = nn_lasso_objective(C, a, lam, w)
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
    return SparseWeights(best_w)
