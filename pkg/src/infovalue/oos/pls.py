"""Partial least squares for a single response.

Directions are extracted one at a time. Each maximizes the covariance between the
response and the score ``Xc @ w`` over unit vectors ``w`` whose scores are
uncorrelated with every earlier score. With one response this constrained problem
has a closed-form solution: the cross-covariance vector ``Xc' y``, projected off the
span of the earlier loadings ``Xc' Xc w_i`` and normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PlsModel", "fit_pls", "pls_rank_bound"]


@dataclass(frozen=True, eq=False)
class PlsModel:
    loadings: np.ndarray  # (k, P) unit-norm directions in centered-feature space
    response_weights: np.ndarray  # (P,)
    x_mean: np.ndarray
    y_mean: float

    @property
    def components(self) -> int:
        return int(self.loadings.shape[1])

    @property
    def coef(self) -> np.ndarray:
        return self.loadings @ self.response_weights

    def scores(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) @ self.loadings

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.y_mean + self.scores(X) @ self.response_weights

    def truncate(self, n_components: int) -> "PlsModel":
        """The model built from the first ``n_components`` directions only.

        Scores are mutually orthogonal, so the leading response weights do not
        change when later components are dropped.
        """
        if not 1 <= n_components <= self.components:
            raise ValueError(f"n_components must lie in [1, {self.components}]")
        return PlsModel(self.loadings[:, :n_components], self.response_weights[:n_components],
                        self.x_mean, self.y_mean)


def pls_rank_bound(X: np.ndarray) -> int:
    X = np.asarray(X)
    return int(min(X.shape[0] - 1, X.shape[1]))


def fit_pls(X: np.ndarray, y: np.ndarray, n_components: int) -> PlsModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if y.shape != (X.shape[0],):
        raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    bound = pls_rank_bound(X)
    if not 1 <= n_components <= bound:
        raise ValueError(f"n_components={n_components} outside [1, {bound}]")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    scale = np.abs(Xc).max()
    if scale == 0:
        raise ValueError("X has zero variance")

    s = Xc.T @ yc
    s0 = np.linalg.norm(s)
    if s0 == 0:
        raise ValueError("y is uncorrelated with every column of X")
    basis = np.zeros((X.shape[1], 0))
    dirs, scores = [], []
    for _ in range(n_components):
        norm = np.linalg.norm(s)
        if norm <= 1e-12 * s0:
            break
        w = s / norm
        t = Xc @ w
        tt = t @ t
        if tt <= (1e-24 * scale * scale * X.shape[0]):
            break
        p = Xc.T @ t
        for _ in range(2):  # re-orthogonalize for stability
            p = p - basis @ (basis.T @ p)
        p /= np.linalg.norm(p)
        basis = np.column_stack([basis, p])
        s = s - p * (p @ s)
        dirs.append(w)
        scores.append(t)
    W = np.column_stack(dirs)
    T = np.column_stack(scores)
    q = np.linalg.lstsq(T, yc, rcond=None)[0]
    return PlsModel(W, q, x_mean, y_mean)
