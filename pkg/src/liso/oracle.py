"""Reference solvers for small problems.

The additive isotonic fit can be written as a lasso with non-negative
coefficients on a design of step indicators: column ``(k, i)`` is
``1{x_k > x_k,(i)}`` for the ``i``-th order statistic of covariate ``k``, and
its coefficient is the jump of component ``k`` there.  These routines solve
that lasso directly and are only meant for certifying the backfitting solver
on tiny instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backfit import AdditiveModel, Dataset

MAX_COLUMNS = 5000


@dataclass(frozen=True, eq=False)
class ExpandedDesign:
    columns: np.ndarray  # n x m, 0/1
    column_index: list  # column -> (covariate, step position), both 0-based
    covariate: np.ndarray  # covariate of each column
    sorted_x: list  # per covariate, ascending covariate values

    @property
    def shape(self):
        return self.columns.shape


def build_expanded(d: Dataset) -> ExpandedDesign:
    n, p = d.n, d.p
    if p * (n - 1) > MAX_COLUMNS:
        raise ValueError(f"expanded design would have {p * (n - 1)} columns (limit {MAX_COLUMNS})")
    cols, index, cov, sx = [], [], [], []
    for k in range(p):
        xs = np.sort(d.x[:, k])
        sx.append(xs)
        for i in range(n - 1):
            cols.append((d.x[:, k] > xs[i]).astype(np.float64))
            index.append((k, i))
            cov.append(k)
    return ExpandedDesign(np.column_stack(cols), index, np.array(cov), sx)


def _centered(design, w) -> np.ndarray:
    X = design.columns if isinstance(design, ExpandedDesign) else np.asarray(design, float)
    return X - (w @ X) / np.sum(w)


def nn_lasso_objective(design, y, beta, lam, w=None, penalty=None) -> float:
    y = np.asarray(y, float)
    w = np.ones_like(y) if w is None else np.asarray(w, float)
    A = _centered(design, w)
    c = np.ones(A.shape[1]) if penalty is None else np.asarray(penalty, float)
    r = y - A @ beta
    return 0.5 * float(np.dot(w, r * r)) + lam * float(np.dot(c, beta))


def _kkt(grad, beta):
    return np.where(beta > 0, np.abs(grad), np.maximum(0.0, -grad))


def nn_lasso_solve(design, y, lam, tol: float = 1e-9, w=None, penalty=None,
                   max_sweeps: int = 200_000) -> np.ndarray:
    """Minimise ``0.5 * sum w (y - A beta)^2 + lam * sum penalty_j beta_j``
    over ``beta >= 0``, with ``A`` the weighted-centred design.

    Coordinate descent, interleaved with exact solves on the current support;
    stops once every KKT residual is at most ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    A = _centered(design, w)
    m = A.shape[1]
    c = np.ones(m) if penalty is None else np.asarray(penalty, dtype=np.float64)
    AW = A.T * w
    G = AW @ A
    b = AW @ y
    lc = lam * c
    diag = np.diag(G).copy()
    beta = np.zeros(m)
    grad = -b + lc  # gradient at beta
    for sweep in range(max_sweeps):
        for j in range(m):
            if diag[j] <= 1e-15:
                continue
            new = max(0.0, beta[j] - grad[j] / diag[j])
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                grad += G[:, j] * delta
        if np.max(_kkt(grad, beta), initial=0.0) <= tol:
            return beta
        if sweep % 10 == 9:
            cand = _polish(G, b, lc, beta, tol)
            if cand is not None:
                return cand
    raise RuntimeError("non-negative lasso did not converge")


def _polish(G, b, lc, beta, tol):
    S = np.flatnonzero(beta > 0)
    cand = np.zeros_like(beta)
    if S.size:
        sol, *_ = np.linalg.lstsq(G[np.ix_(S, S)], b[S] - lc[S], rcond=None)
        if np.any(sol <= 0):
            return None
        cand[S] = sol
    grad = G @ cand - b + lc
    if np.max(_kkt(grad, cand), initial=0.0) <= tol:
        return cand
    return None


def expanded_fitted(design, beta, w=None) -> np.ndarray:
    X = design.columns if isinstance(design, ExpandedDesign) else np.asarray(design, float)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, float)
    return _centered(X, w) @ beta


def coefficients_from_model(design: ExpandedDesign, m: AdditiveModel) -> np.ndarray:
    """Jumps of each component at consecutive order statistics."""
    beta = np.zeros(design.columns.shape[1])
    for j, (k, i) in enumerate(design.column_index):
        f = m.components[k]
        if f.is_empty:
            continue
        xs = design.sorted_x[k]
        beta[j] = f(xs[i + 1]) - f(xs[i])
    return beta


@dataclass(frozen=True)
class IrrepresentableReport:
    values: np.ndarray
    lam: float
    passed: bool
    boundary: bool


def irrepresentable_check(design, S, lam: float, rtol: float = 1e-9) -> IrrepresentableReport:
    """Evaluate ``X_Sc^T X_S (X_S^T X_S)^{-1} lam 1`` against ``lam``.

    ``passed`` means every entry is at most ``lam``; ``boundary`` flags
    entries equal to ``lam`` within ``rtol``.
    """
    X = design.columns if isinstance(design, ExpandedDesign) else np.asarray(design, float)
    S = np.asarray(sorted(S), dtype=int)
    Sc = np.setdiff1d(np.arange(X.shape[1]), S)
    if Sc.size == 0 or S.size == 0:
        return IrrepresentableReport(np.zeros(Sc.size), lam, True, False)
    XS = X[:, S]
    if np.linalg.matrix_rank(XS) < S.size:
        raise ValueError("active columns are linearly dependent")
    u = np.linalg.solve(XS.T @ XS, np.full(S.size, float(lam)))
    v = X[:, Sc].T @ (XS @ u)
    slack = rtol * max(abs(lam), 1.0)
    return IrrepresentableReport(
        values=v,
        lam=float(lam),
        passed=bool(np.all(v <= lam + slack)),
        boundary=bool(np.any(np.abs(v - lam) <= slack)),
    )
