"""Least squares with absorbed fixed effects and one- or two-way cluster-robust covariance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

__all__ = ["OlsResult", "CollinearityError", "absorb_factors", "cluster_meat", "fit_ols_clustered"]

_DEMEAN_TOL = 1e-8
_DEMEAN_MAX_ITER = 10_000
_RANK_RTOL = 1e-10


class CollinearityError(ValueError):
    """The design is rank deficient once fixed effects are removed."""


@dataclass(frozen=True, eq=False)
class OlsResult:
    coefficients: np.ndarray
    clustered_se: np.ndarray
    adj_r2: float
    n: int
    covariance: np.ndarray
    absorbed_levels: int = 0


def _codes(ids: Sequence[Hashable], n: int, what: str) -> np.ndarray:
    if len(ids) != n:
        raise ValueError(f"{what} has {len(ids)} entries, expected {n}")
    _, inv = np.unique(np.asarray([str(v) for v in ids]), return_inverse=True)
    return inv.astype(np.int64)


def absorb_factors(M: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Sweep out every categorical factor by alternating group demeaning.

    With a single factor one pass is exact; otherwise passes repeat until the largest
    change falls below 1e-8 times the data scale.
    """
    M = np.array(M, dtype=np.float64, copy=True)
    if not factors:
        return M
    two_d = M.ndim == 2
    if not two_d:
        M = M[:, None]
    counts = [np.bincount(f).astype(np.float64) for f in factors]
    scale = max(float(np.abs(M).max(initial=0.0)), 1.0)
    for _ in range(_DEMEAN_MAX_ITER):
        change = 0.0
        for f, c in zip(factors, counts):
            sums = np.zeros((c.size, M.shape[1]))
            np.add.at(sums, f, M)
            means = sums / c[:, None]
            step = means[f]
            M -= step
            change = max(change, float(np.abs(step).max(initial=0.0)))
        if len(factors) == 1 or change <= _DEMEAN_TOL * scale:
            break
    else:
        raise RuntimeError("fixed-effect demeaning did not converge")
    return M if two_d else M[:, 0]


def cluster_meat(scores: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Sum over clusters of the outer product of within-cluster score sums."""
    g = np.zeros((int(codes.max()) + 1, scores.shape[1]))
    np.add.at(g, codes, scores)
    return g.T @ g


def fit_ols_clustered(
    X: np.ndarray,
    y: np.ndarray,
    cluster_a: Sequence[Hashable],
    cluster_b: Sequence[Hashable] | None = None,
    absorb: Sequence[Sequence[Hashable]] = (),
    add_constant: bool = True,
    small_sample: bool = False,
) -> OlsResult:
    """OLS of ``y`` on ``X`` with cluster-robust standard errors.

    With two cluster dimensions the covariance is V_a + V_b - V_ab, where V_ab
    clusters on the intersection; negative diagonal entries are set to zero before
    taking square roots. Absorbed factors replace the constant. ``small_sample``
    applies G/(G-1) to each component, G being that dimension's cluster count.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")

    factors = [_codes(f, n, "absorbed factor") for f in absorb]
    for f in factors:
        if f.max(initial=-1) + 1 < 2:
            raise ValueError("each absorbed factor needs at least two levels")
    levels = sum(int(f.max()) + 1 for f in factors)
    if factors:
        Xw = absorb_factors(X, factors)
        yw = absorb_factors(y, factors)
        # one constant is implied by the factors; each factor beyond the first loses one more dof
        absorbed_dof = levels - (len(factors) - 1)
    else:
        Xw = np.column_stack([np.ones(n), X]) if add_constant else X
        yw = y
        absorbed_dof = 0
    k = Xw.shape[1]
    if n <= k + absorbed_dof:
        raise ValueError(f"n={n} does not exceed the {k + absorbed_dof} estimated parameters")

    s = np.linalg.svd(Xw, compute_uv=False)
    ref = max(float(np.linalg.norm(X, axis=0).max(initial=0.0)), float(s.max(initial=0.0)), 1e-300)
    if s.size < k or s.min() <= _RANK_RTOL * ref:
        raise CollinearityError("regressors are perfectly collinear after removing fixed effects")

    XtX = Xw.T @ Xw
    bread = np.linalg.inv(XtX)
    beta = bread @ (Xw.T @ yw)
    resid = yw - Xw @ beta
    scores = Xw * resid[:, None]

    def component(codes: np.ndarray) -> np.ndarray:
        V = bread @ cluster_meat(scores, codes) @ bread
        if small_sample:
            G = int(codes.max()) + 1
            V *= G / max(G - 1, 1)
        return V

    ca = _codes(cluster_a, n, "cluster_a")
    cov = component(ca)
    if cluster_b is not None:
        cb = _codes(cluster_b, n, "cluster_b")
        _, cab = np.unique(ca * (int(cb.max()) + 1) + cb, return_inverse=True)
        cov = cov + component(cb) - component(cab.astype(np.int64))
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    ssr = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    if add_constant or factors:
        dof_model = k + absorbed_dof
        adj_r2 = 1.0 - (ssr / (n - dof_model)) / (tss / (n - 1)) if tss > 0 else float("nan")
    else:
        tss0 = float(y @ y)
        adj_r2 = 1.0 - (ssr / (n - k)) / (tss0 / n) if tss0 > 0 else float("nan")
    return OlsResult(beta, se, float(adj_r2), n, cov, levels)
