"""ν one-class SVM with an RBF kernel, trained by SMO.

Dual problem (libsvm scaling)::

    min_a  1/2 a^T Q a
    s.t.   0 <= a_i <= 1,  sum_i a_i = nu * l

with Q_ij = exp(-gamma * ||x_i - x_j||^2). The decision function is
``f(x) = sum_i a_i K(x_i, x) - rho``. Free support vectors sit on the
boundary only up to the solver tolerance ``eps``, so points count as novel
when ``f(x) < -eps``.
Working pairs are chosen with second-order information (Fan, Chen & Lin 2005).
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError

TAU = 1e-12


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def solve_dual(Q: np.ndarray, nu: float, eps: float = 1e-3, max_iter: int | None = None):
    """Return ``(alpha, rho, n_iter, residual)`` for the one-class dual."""
    n = Q.shape[0]
    C = 1.0
    total = nu * n
    alpha = np.zeros(n)
    k = int(total)
    alpha[:k] = 1.0
    if k < n:
        alpha[k] = total - k
    G = Q @ alpha
    QD = np.diag(Q).copy()
    max_iter = max_iter or max(10_000_000, 100 * n)
    it = 0
    residual = np.inf
    while it < max_iter:
        up = alpha < C
        low = alpha > 0
        if not up.any() or not low.any():
            residual = 0.0
            break
        neg_g = np.where(up, -G, -np.inf)
        i = int(np.argmax(neg_g))
        gmax = neg_g[i]
        gmax2 = np.max(np.where(low, G, -np.inf))
        residual = gmax + gmax2
        if residual < eps:
            break
        b = gmax + G
        cand = low & (b > 0)
        if not cand.any():
            break
        a = QD[i] + QD - 2.0 * Q[i]
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        quad = QD[i] + QD[j] - 2.0 * Q[i, j]
        if quad <= 0:
            quad = TAU
        old_i, old_j = alpha[i], alpha[j]
        delta = (G[i] - G[j]) / quad
        s = old_i + old_j
        ai, aj = old_i - delta, old_j + delta
        if s > C:
            if ai > C:
                ai, aj = C, s - C
        elif aj < 0:
            aj, ai = 0.0, s
        if s > C:
            if aj > C:
                aj, ai = C, s - C
        elif ai < 0:
            ai, aj = 0.0, s
        alpha[i], alpha[j] = ai, aj
        G += Q[i] * (ai - old_i) + Q[j] * (aj - old_j)
        it += 1
    else:
        raise ConvergenceError(f"SMO did not converge in {max_iter} iterations", residual)
    return alpha, _rho(alpha, G, C), it, float(residual)


def _rho(alpha: np.ndarray, G: np.ndarray, C: float) -> float:
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(G[free].mean())
    at_upper = alpha >= C
    at_lower = alpha <= 0
    ub = G[at_lower].min() if at_lower.any() else np.inf
    lb = G[at_upper].max() if at_upper.any() else -np.inf
    # with nu = 1 every alpha sits at C and only one bound exists
    if not np.isfinite(ub):
        return float(lb)
    if not np.isfinite(lb):
        return float(ub)
    return float((ub + lb) / 2)


class OneClassSVM:
    """Novelty model trained on normal data only.

    Features are z-scored with the training statistics. Dimensions with zero
    training variance carry no information about the normal data and are
    mapped to 0.
    """

    def __init__(self, nu: float = 0.05, gamma: float | None = None, eps: float = 1e-3,
                 max_iter: int | None = None, standardize: bool = True):
        if not 0 < nu <= 1:
            raise ValueError("nu must be in (0, 1]")
        if gamma is not None and not gamma > 0:
            raise ValueError("gamma must be > 0")
        self.nu = nu
        self.gamma = gamma
        self.eps = eps
        self.max_iter = max_iter
        self.standardize = standardize

    def _transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not self.standardize:
            return X
        return np.where(self.active_, (X - self.mean_) / self.scale_, 0.0)

    def fit(self, X) -> OneClassSVM:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("training set must be a non-empty 2-D array")
        self.mean_ = X.mean(0)
        std = X.std(0)
        self.active_ = std > 0
        self.scale_ = np.where(self.active_, std, 1.0)
        Z = self._transform(X)
        self.gamma_ = self.gamma if self.gamma is not None else 1.0 / X.shape[1]
        Q = rbf_kernel(Z, Z, self.gamma_)
        alpha, self.rho_, self.n_iter_, self.residual_ = solve_dual(Q, self.nu, self.eps, self.max_iter)
        sv = alpha > 0
        self.alpha_ = alpha
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = Z[sv]
        self.dual_coef_ = alpha[sv]
        return self

    def decision_function(self, X) -> np.ndarray:
        Z = self._transform(np.atleast_2d(X))
        out = np.empty(len(Z))
        for lo in range(0, len(Z), 4096):
            K = rbf_kernel(Z[lo:lo + 4096], self.support_vectors_, self.gamma_)
            out[lo:lo + 4096] = K @ self.dual_coef_ - self.rho_
        return out

    def predict(self, X) -> np.ndarray:
        """Boolean array, True where the point is novel."""
        return self.decision_function(X) < -self.eps
