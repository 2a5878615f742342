"""Depth-basis storage and the norm-constrained dictionary update.

The update solves min_B sum_i ||d_i - B w_i||^2 subject to ||b_j||_2 <= 1
for every atom, via Newton iterations on the Lagrange dual. A small ridge
floor on the Gram matrix rescues rank-deficient weight matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, InputError, NumericalError

NORM_SLACK = 1e-9
RIDGE_FLOOR = 1e-10


@dataclass(frozen=True)
class Dictionary:
    """Basis matrix B of shape (p_low, m); columns are unit-bounded atoms."""

    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim != 2:
            raise InputError(f"B must be 2-D, got shape {B.shape}")
        norms = np.linalg.norm(B, axis=0)
        if norms.size and norms.max() > 1.0 + NORM_SLACK:
            raise InputError(f"atom norm {norms.max():.12f} exceeds 1 + {NORM_SLACK}")
        object.__setattr__(self, "B", B)

    @property
    def atom_count(self) -> int:
        return self.B.shape[1]

    @property
    def p_low(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class DictUpdateInfo:
    duals: np.ndarray
    gap: float
    newton_iters: int
    objective: float


def reconstruction_objective(D, B, W) -> float:
    return float(np.sum((D - B @ W) ** 2))


def _clip_columns(B):
    norms = np.linalg.norm(B, axis=0)
    over = norms > 1.0
    if np.any(over):
        B = B.copy()
        B[:, over] /= norms[over]
    return B


def update_dictionary(D, W, gap_tol: float = 1e-8, max_newton: int = 100,
                      return_info: bool = False):
    """Minimize ||D - B W||_F^2 over atoms with ||b_j|| <= 1 (Lagrange dual).

    D is (p_low, N), W is (m, N). Returns the new Dictionary, plus a
    DictUpdateInfo (duals, duality gap, iterations) when `return_info`.
    """
    D = np.asarray(D, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if D.ndim != 2 or W.ndim != 2 or D.shape[1] != W.shape[1]:
        raise InputError(f"shape mismatch: D {D.shape}, W {W.shape}")
    if D.shape[1] < 1:
        raise InputError("need at least one example")
    if not (np.isfinite(D).all() and np.isfinite(W).all()):
        raise InputError("non-finite values in D or W")
    m = W.shape[0]

    WWt = W @ W.T
    P = D @ W.T                      # (p, m)
    M = P.T @ P                      # (m, m)
    tr_dd = float(np.sum(D * D))

    def dual_pieces(lam):
        S = WWt + np.diag(lam + RIDGE_FLOOR)
        try:
            cho = scipy.linalg.cho_factor(S, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            bad = [int(j) for j in np.flatnonzero(np.abs(W).sum(axis=1) == 0)]
            raise NumericalError(
                f"dictionary update: Gram matrix degenerate beyond ridge rescue "
                f"(suspect atoms {bad})"
            ) from exc
        Sinv = scipy.linalg.cho_solve(cho, np.eye(m), check_finite=False)
        B = P @ Sinv
        gval = tr_dd - float(np.trace(Sinv @ M)) - float(np.sum(lam))
        return S, Sinv, B, gval

    lam = np.ones(m)
    S, Sinv, B, gval = dual_pieces(lam)
    iters = 0
    for iters in range(1, max_newton + 1):
        grad = np.sum(B * B, axis=0) - 1.0        # ||b_j||^2 - 1
        gap = reconstruction_objective(D, _clip_columns(B), W) - gval
        feasible = grad.max() <= 1e-10 if grad.size else True
        comp = float(np.max(np.abs(lam * grad))) if grad.size else 0.0
        if gap <= 0.01 * gap_tol and feasible and comp <= 1e-9:
            break
        BtB = B.T @ B
        H = -2.0 * BtB * Sinv
        try:
            direction = np.linalg.solve(H - 1e-12 * np.eye(m), grad)  # ascent
        except np.linalg.LinAlgError:
            direction = grad / max(float(np.abs(grad).max()), 1.0)
        direction = -direction
        # projected backtracking on the concave dual
        t = 1.0
        accepted = False
        while t >= 1e-14:
            lam_new = np.maximum(0.0, lam + t * direction)
            if np.array_equal(lam_new, lam):
                break
            S2, Sinv2, B2, g2 = dual_pieces(lam_new)
            if g2 >= gval:
                lam, S, Sinv, B, gval = lam_new, S2, Sinv2, B2, g2
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break

    Bc = _clip_columns(B)
    gap = reconstruction_objective(D, Bc, W) - gval
    if gap > gap_tol:
        raise ConvergenceError(
            f"dictionary update: duality gap {gap:.3e} > {gap_tol:.3e} "
            f"after {iters} Newton iterations",
            best=Dictionary(Bc),
        )
    result = Dictionary(Bc)
    if return_info:
        info = DictUpdateInfo(
            duals=lam.copy(),
            gap=float(gap),
            newton_iters=iters,
            objective=reconstruction_objective(D, Bc, W),
        )
        return result, info
    return result


def unused_atom_policy(B: Dictionary, W, D) -> Dictionary:
    """Replace atoms with zero total usage by normalized residuals of the
    worst-reconstructed examples (distinct examples for multiple dead atoms,
    ties broken by lowest example index). Atoms stay untouched when every
    residual is zero."""
    W = np.asarray(W, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    dead = np.flatnonzero(np.abs(W).sum(axis=1) == 0)
    if dead.size == 0:
        return B
    R = D - B.B @ W
    norms = np.linalg.norm(R, axis=0)
    # stable sort keeps the lowest index first among ties
    order = np.argsort(-norms, kind="stable")
    newB = B.B.copy()
    take = 0
    for j in dead:
        if take >= order.size or norms[order[take]] <= 1e-12:
            break
        i = order[take]
        newB[:, j] = R[:, i] / norms[i]
        take += 1
    return Dictionary(newB)


def oracle_update_dictionary(D, W, iters: int = 20000) -> np.ndarray:
    """Projected gradient reference for tests: descend on B with columnwise
    projection onto the unit ball."""
    D = np.asarray(D, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    m = W.shape[0]
    lip = 2.0 * max(float(np.linalg.eigvalsh(W @ W.T)[-1]), 1e-12)
    B = np.zeros((D.shape[0], m))
    best = B.copy()
    best_obj = reconstruction_objective(D, B, W)
    for _ in range(iters):
        grad = 2.0 * (B @ W - D) @ W.T
        B = B - grad / lip
        norms = np.linalg.norm(B, axis=0)
        over = norms > 1.0
        B[:, over] /= norms[over]
        obj = reconstruction_objective(D, B, W)
        if obj < best_obj:
            best_obj = obj
            best = B.copy()
    return best
