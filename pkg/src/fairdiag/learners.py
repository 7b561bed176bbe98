"""From-scratch numeric learners shared by the rest of the toolkit:
soft-margin SVM trained with SMO, Platt probability calibration,
ordinary least squares, and Newton logistic regression."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .validation import check_array, check_consistent_length, check_matrix, check_signed_labels

logger = logging.getLogger(__name__)

_BOUND_EPS = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family; gamma=None resolves to 1/n_features at fit time."""

    kind: str = "linear"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def coerce(cls, kernel) -> "KernelSpec":
        if isinstance(kernel, KernelSpec):
            return kernel
        return cls(kind=str(kernel))

    def resolve_gamma(self, n_features: int) -> float:
        if self.kind == "linear":
            return 0.0
        return self.gamma if self.gamma is not None else 1.0 / n_features


def kernel_matrix(spec: KernelSpec, X, Y, gamma: float | None = None) -> np.ndarray:
    """Gram matrix K[i, j] = k(X[i], Y[j])."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if spec.kind == "linear":
        return X @ Y.T
    g = gamma if gamma is not None else spec.resolve_gamma(X.shape[1])
    sq = (X * X).sum(axis=1)[:, None] + (Y * Y).sum(axis=1)[None, :] - 2.0 * (X @ Y.T)
    return np.exp(-g * np.maximum(sq, 0.0))


class SvmClassifier(BaseEstimator):
    """Soft-margin binary SVM solved in the dual by sequential minimal
    optimization with maximal-violating-pair working-set selection.

    Labels are +1/-1. At convergence every sample satisfies its KKT
    condition within tol, 0 <= alpha_i <= C, and sum(alpha_i y_i) = 0.
    """

    def __init__(self, C: float = 1.0, kernel="linear", gamma: float | None = None,
                 tol: float = 1e-3, max_iter: int = 200_000):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y) -> "SvmClassifier":
        X = check_matrix(X)
        y = check_signed_labels(y)
        check_consistent_length(X, y)
        if self.C <= 0:
            raise ValueError("C must be positive")
        if len(np.unique(y)) < 2:
            raise ValueError("training data contains a single class")
        spec = KernelSpec.coerce(self.kernel)
        if self.gamma is not None:
            spec = KernelSpec(spec.kind, self.gamma)
        gamma = spec.resolve_gamma(X.shape[1])

        n = len(y)
        K = kernel_matrix(spec, X, X, gamma)
        alpha = np.zeros(n)
        g = np.zeros(n)  # sum_j alpha_j y_j K(x_j, x_i)
        C, tol = float(self.C), float(self.tol)
        pos = y > 0
        diag = np.diag(K).copy()

        converged = False
        it = 0
        for it in range(1, self.max_iter + 1):
            r = y - g
            at_upper = alpha >= C - _BOUND_EPS
            at_lower = alpha <= _BOUND_EPS
            up = np.where(pos, ~at_upper, ~at_lower)
            low = np.where(pos, ~at_lower, ~at_upper)
            i = int(np.argmax(np.where(up, r, -np.inf)))
            j = int(np.argmin(np.where(low, r, np.inf)))
            gap = r[i] - r[j]
            if gap <= tol:
                converged = True
                break
            eta = diag[i] + diag[j] - 2.0 * K[i, j]
            t = gap / max(eta, _BOUND_EPS)
            t_i = C - alpha[i] if pos[i] else alpha[i]
            t_j = alpha[j] if pos[j] else C - alpha[j]
            t = min(t, t_i, t_j)
            alpha[i] = min(max(alpha[i] + y[i] * t, 0.0), C)
            alpha[j] = min(max(alpha[j] - y[j] * t, 0.0), C)
            g += t * (K[:, i] - K[:, j])
        if not converged:
            logger.warning("SMO hit max_iter=%d (gap %.3g > tol %.3g)", self.max_iter, gap, tol)

        r = y - g
        free = (alpha > _BOUND_EPS) & (alpha < C - _BOUND_EPS)
        if free.any():
            b = float(r[free].mean())
        else:
            at_upper = alpha >= C - _BOUND_EPS
            at_lower = alpha <= _BOUND_EPS
            up = np.where(pos, ~at_upper, ~at_lower)
            low = np.where(pos, ~at_lower, ~at_upper)
            hi = r[up].max() if up.any() else -np.inf
            lo = r[low].min() if low.any() else np.inf
            b = float((hi + lo) / 2.0) if np.isfinite(hi) and np.isfinite(lo) else 0.0

        sv = alpha > _BOUND_EPS
        self.kernel_spec_ = spec
        self.gamma_ = gamma
        self.alpha_ = alpha
        self.support_ = np.nonzero(sv)[0]
        self.support_vectors_ = X[sv].copy()
        self.dual_coef_ = (alpha * y)[sv]
        self.intercept_ = b
        self.n_iter_ = it
        self.converged_ = converged
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "dual_coef_"):
            raise NotFittedError("SvmClassifier is not fitted")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        K = kernel_matrix(self.kernel_spec_, X, self.support_vectors_, self.gamma_)
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1.0, -1.0)

    def primal_coef(self) -> tuple[np.ndarray, float]:
        """Explicit (w, b) reconstruction; linear kernel only."""
        self._check_fitted()
        if self.kernel_spec_.kind != "linear":
            raise ValueError("primal reconstruction requires a linear kernel")
        return self.support_vectors_.T @ self.dual_coef_, self.intercept_

    def kkt_violations(self, X, y) -> np.ndarray:
        """Per-sample KKT violation magnitudes on the training data."""
        self._check_fitted()
        y = check_signed_labels(y)
        margin = y * self.decision_function(X)
        alpha = self.alpha_
        out = np.zeros(len(y))
        lower = alpha <= _BOUND_EPS
        upper = alpha >= self.C - _BOUND_EPS
        free = ~lower & ~upper
        out[lower] = np.maximum(0.0, 1.0 - margin[lower])
        out[upper] = np.maximum(0.0, margin[upper] - 1.0)
        out[free] = np.abs(1.0 - margin[free])
        return out


def svm_dual_objective(alpha, y, K) -> float:
    """Dual objective sum(alpha) - 0.5 * alpha' Q alpha with Q = yy' * K."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


class PlattScaler(BaseEstimator):
    """Maps decision values to probabilities 1 / (1 + exp(A*d + B)).

    A and B minimize the regularized negative log-likelihood against the
    smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2), by Newton iterations
    until the gradient norm falls below 1e-8 (at most 100 iterations).
    """

    def __init__(self, grad_tol: float = 1e-8, max_iter: int = 100):
        self.grad_tol = grad_tol
        self.max_iter = max_iter

    def fit(self, decisions, y) -> "PlattScaler":
        d = check_array(decisions, "decisions", ndim=1)
        y = check_signed_labels(y)
        check_consistent_length(d, y)
        n_pos = int((y > 0).sum())
        n_neg = len(y) - n_pos
        if n_pos == 0 or n_neg == 0:
            raise ValueError("both labels must be present")
        base = (n_pos + 1.0) / (len(y) + 2.0)
        if np.ptp(d) < 1e-12:
            # degenerate decisions carry no information; emit the smoothed base rate
            self.A_, self.B_ = 0.0, float(np.log((1.0 - base) / base))
            return self
        hi = (n_pos + 1.0) / (n_pos + 2.0)
        lo = 1.0 / (n_neg + 2.0)
        t = np.where(y > 0, hi, lo)

        def nll(a, b):
            z = a * d + b
            return float(np.sum(t * z + np.logaddexp(0.0, -z)))

        A, B = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
        value = nll(A, B)
        sigma = 1e-12
        for _ in range(self.max_iter):
            z = A * d + B
            p = _sigmoid(-z)
            grad = np.array([np.dot(d, t - p), np.sum(t - p)])
            if np.linalg.norm(grad) <= self.grad_tol:
                break
            w = p * (1.0 - p)
            h = np.array([[np.dot(d * d, w) + sigma, np.dot(d, w)],
                          [np.dot(d, w), np.sum(w) + sigma]])
            step = np.linalg.solve(h, grad)
            scale = 1.0
            while scale >= 1e-10:
                cand = nll(A - scale * step[0], B - scale * step[1])
                if cand <= value + 1e-12:
                    A, B = A - scale * step[0], B - scale * step[1]
                    value = cand
                    break
                scale /= 2.0
            else:
                break
        self.A_, self.B_ = float(A), float(B)
        return self

    def predict_proba(self, decisions) -> np.ndarray:
        if not hasattr(self, "A_"):
            raise NotFittedError("PlattScaler is not fitted")
        d = check_array(decisions, "decisions", ndim=1)
        p = _sigmoid(-(self.A_ * d + self.B_))
        return np.clip(p, 1e-15, 1.0 - 1e-15)

    transform = predict_proba


def _sigmoid(z):
    z = np.clip(z, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-z))


class LinearRegressor(BaseEstimator):
    """OLS via normal equations, with a ridge fallback (lambda=1e-8) when the
    design matrix is rank deficient."""

    def __init__(self, ridge_fallback: float = 1e-8):
        self.ridge_fallback = ridge_fallback

    def fit(self, X, y) -> "LinearRegressor":
        X = check_matrix(X)
        y = check_array(y, "y", ndim=1)
        check_consistent_length(X, y)
        n, p = X.shape
        if n < p + 1:
            raise ValueError(f"need at least {p + 1} samples for {p} predictors, got {n}")
        design = np.column_stack([np.ones(n), X])
        gram = design.T @ design
        rhs = design.T @ y
        if np.linalg.matrix_rank(gram) < gram.shape[0]:
            gram = gram + self.ridge_fallback * np.eye(gram.shape[0])
        coef = np.linalg.solve(gram, rhs)
        self.intercept_ = float(coef[0])
        self.coef_ = coef[1:]
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("LinearRegressor is not fitted")
        X = check_matrix(X)
        return X @ self.coef_ + self.intercept_


def logistic_loss_gradient(params, X, y, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy loss of sigmoid(X w + b) with an L2 penalty on w
    (not on b), and its gradient over params = [b, w...]."""
    b, w = params[0], params[1:]
    z = X @ w + b
    p = _sigmoid(z)
    n = len(y)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))
    err = (p - y) / n
    grad = np.concatenate([[err.sum()], X.T @ err + l2 * w])
    return loss, grad


class LogisticClassifier(BaseEstimator):
    """Binary logistic regression fit by damped Newton iterations."""

    def __init__(self, l2: float = 1e-4, grad_tol: float = 1e-6, max_iter: int = 100):
        self.l2 = l2
        self.grad_tol = grad_tol
        self.max_iter = max_iter

    def fit(self, X, y) -> "LogisticClassifier":
        X = check_matrix(X)
        y = check_array(y, "y", ndim=1)
        check_consistent_length(X, y)
        if not set(np.unique(y)) <= {0.0, 1.0}:
            raise ValueError("y must contain only 0/1")
        n, p = X.shape
        if len(np.unique(y)) < 2:
            # single-class data: emit the smoothed base rate
            rate = (y.sum() + 1.0) / (n + 2.0)
            self.coef_ = np.zeros(p)
            self.intercept_ = float(np.log(rate / (1.0 - rate)))
            self.converged_ = True
            return self
        params = np.zeros(p + 1)
        loss, grad = logistic_loss_gradient(params, X, y, self.l2)
        self.converged_ = False
        for _ in range(self.max_iter):
            if np.linalg.norm(grad) <= self.grad_tol:
                self.converged_ = True
                break
            z = X @ params[1:] + params[0]
            w = np.maximum(_sigmoid(z) * (1.0 - _sigmoid(z)), 1e-12) / n
            design = np.column_stack([np.ones(n), X])
            h = design.T @ (design * w[:, None])
            h[1:, 1:] += self.l2 * np.eye(p)
            h += 1e-10 * np.eye(p + 1)
            step = np.linalg.solve(h, grad)
            scale = 1.0
            while scale >= 1e-10:
                cand = params - scale * step
                cand_loss, cand_grad = logistic_loss_gradient(cand, X, y, self.l2)
                if cand_loss <= loss + 1e-12:
                    params, loss, grad = cand, cand_loss, cand_grad
                    break
                scale /= 2.0
            else:
                break
        else:
            loss, grad = logistic_loss_gradient(params, X, y, self.l2)
            self.converged_ = np.linalg.norm(grad) <= self.grad_tol
        if not self.converged_:
            logger.warning("logistic fit stopped at gradient norm %.3g", np.linalg.norm(grad))
        self.intercept_ = float(params[0])
        self.coef_ = params[1:]
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("LogisticClassifier is not fitted")
        X = check_matrix(X)
        return _sigmoid(X @ self.coef_ + self.intercept_)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


class Standardizer(BaseEstimator):
    """Column-wise (x - mean) / std scaler; constant columns pass through."""

    def fit(self, X) -> "Standardizer":
        X = check_matrix(X)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "mean_"):
            raise NotFittedError("Standardizer is not fitted")
        X = check_matrix(X)
        return (X - self.mean_) / self.scale_

    def fit_transform(self, X) -> np.ndarray:
        return self.fit(X).transform(X)
