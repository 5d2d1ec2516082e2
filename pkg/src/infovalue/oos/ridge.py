"""Ridge regression with an unpenalized intercept, and penalty selection on a time-ordered split."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

__all__ = [
    "DEFAULT_PENALTY_GRID",
    "RidgeModel",
    "fit_ridge",
    "validation_split",
    "penalty_path_mse",
    "select_penalty",
    "lowest_index",
]

DEFAULT_PENALTY_GRID: tuple[float, ...] = tuple(10.0 ** k for k in range(-10, 11))

# relative MSE gap below which two penalties count as tied
_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class RidgeModel:
    intercept: float
    weights: np.ndarray
    penalty: float
    n: int
    x_mean: np.ndarray
    y_mean: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.intercept + X @ self.weights


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[1] == 0:
        raise ValueError("X has no feature columns")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] < 2:
        raise ValueError("at least two observations are required")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    return X, y


def fit_ridge(X: np.ndarray, y: np.ndarray, penalty: float) -> RidgeModel:
    """Solve the ridge normal equations on centered data.

    The intercept is recovered from the training means and is never shrunk. With
    more features than rows the equivalent dual system (Xc Xc' + penalty I) is solved
    instead. ``penalty == 0`` returns the minimum-norm least-squares fit.
    """
    X, y = _check_xy(X, y)
    if not (math.isfinite(penalty) and penalty >= 0):
        raise ValueError("penalty must be a finite nonnegative number")
    n, k = X.shape
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    if penalty == 0:
        beta = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    elif k <= n:
        A = Xc.T @ Xc
        A[np.diag_indices_from(A)] += penalty
        beta = linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), Xc.T @ yc,
                                check_finite=False)
    else:
        K = Xc @ Xc.T
        K[np.diag_indices_from(K)] += penalty
        alpha = linalg.cho_solve(linalg.cho_factor(K, lower=True, check_finite=False), yc,
                                 check_finite=False)
        beta = Xc.T @ alpha
    intercept = y_mean - float(x_mean @ beta)
    return RidgeModel(intercept, beta, float(penalty), n, x_mean, y_mean)


def validation_split(n: int, validation_fraction: float) -> int:
    """Number of leading rows kept for fitting; the remaining tail validates."""
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    n_val = int(round(n * validation_fraction))
    if n_val < 2:
        raise ValueError(f"validation tail has {n_val} rows; need at least 2")
    if n - n_val < 2:
        raise ValueError("fewer than 2 rows left for fitting after the validation split")
    return n - n_val


def _check_grid(grid: Sequence[float]) -> np.ndarray:
    g = np.asarray(list(grid), dtype=np.float64)
    if g.size == 0:
        raise ValueError("penalty grid is empty")
    if (g < 0).any() or not np.isfinite(g).all():
        raise ValueError("penalties must be finite and nonnegative")
    if (np.diff(g) <= 0).any():
        raise ValueError("penalty grid must be strictly ascending")
    return g


def penalty_path_mse(
    X_fit: np.ndarray,
    y_fit: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    grid: Sequence[float],
) -> np.ndarray:
    """Validation MSE of the ridge fit on (X_fit, y_fit) for every penalty in ``grid``.

    One spectral decomposition of the centered fitting design serves all penalties.
    """
    X_fit, y_fit = _check_xy(X_fit, y_fit)
    X_val = np.asarray(X_val, dtype=np.float64).reshape(-1, X_fit.shape[1])
    y_val = np.asarray(y_val, dtype=np.float64)
    g = _check_grid(grid)
    x_mean = X_fit.mean(axis=0)
    y_mean = y_fit.mean()
    Xc = X_fit - x_mean
    yc = y_fit - y_mean
    Xv = X_val - x_mean
    n, k = Xc.shape
    if k <= n:
        d, V = np.linalg.eigh(Xc.T @ Xc)
        d = np.clip(d, 0.0, None)
        z = V.T @ (Xc.T @ yc)
        proj = Xv @ V
    else:
        U, s, Wt = np.linalg.svd(Xc, full_matrices=False)
        d = s * s
        z = s * (U.T @ yc)
        proj = Xv @ Wt.T
    tol = d.max(initial=0.0) * max(n, k) * np.finfo(float).eps
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(g[None, :] > 0, 1.0 / (d[:, None] + g[None, :]),
                          np.where(d[:, None] > tol, 1.0 / d[:, None], 0.0))
    shrink[~np.isfinite(shrink)] = 0.0
    preds = y_mean + proj @ (z[:, None] * shrink)
    resid = preds - y_val[:, None]
    return np.mean(resid * resid, axis=0)


def select_penalty(
    X: np.ndarray,
    y: np.ndarray,
    grid: Sequence[float] = DEFAULT_PENALTY_GRID,
    validation_fraction: float = 0.2,
) -> float:
    """Penalty with the lowest MSE on the final ``validation_fraction`` of the rows.

    Rows must already be in time order. Ties go to the larger penalty.
    """
    X, y = _check_xy(X, y)
    g = _check_grid(grid)
    if g.size == 1:
        return float(g[0])
    n_fit = validation_split(X.shape[0], validation_fraction)
    mse = penalty_path_mse(X[:n_fit], y[:n_fit], X[n_fit:], y[n_fit:], g)
    return float(g[lowest_index(mse)])


def lowest_index(losses: Sequence[float]) -> int:
    """Index of the smallest loss; near-ties resolve to the later (more regularized) entry."""
    best = 0
    for i in range(1, len(losses)):
        if losses[i] <= losses[best] * (1 + _TIE_RTOL):
            best = i
    return best
