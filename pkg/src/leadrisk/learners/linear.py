"""L1-regularized logistic regression and linear discriminant analysis.

Both consume the standardized one-hot encoding.  The logistic model is fit by
proximal gradient descent (ISTA) with backtracking line search; the L1 penalty
is applied through the soft-threshold operator and the intercept is left
unpenalized.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..util import sigmoid, softplus

log = logging.getLogger(__name__)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def logistic_smooth_loss(X, y, w, b) -> float:
    """Mean negative Bernoulli log-likelihood (the differentiable part)."""
    z = X @ w + b
    return float(np.mean(softplus(z) - y * z))


def logistic_gradient(X, y, w, b):
    """Gradient of the smooth part with respect to (w, b)."""
    z = X @ w + b
    r = sigmoid(z) - y
    return X.T @ r / X.shape[0], float(np.mean(r))


@dataclass
class LogRegModel:
    weights: np.ndarray
    intercept: float
    l1_strength: float
    n_iter: int = 0
    converged: bool = False
    params: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.weights.shape[0]:
            raise DataError(f"expected {self.weights.shape[0]} columns, got {X.shape}")
        return sigmoid(X @ self.weights + self.intercept)

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))

    def to_doc(self) -> dict:
        return {
            "kind": "logreg_l1",
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l1_strength": self.l1_strength,
            "params": dict(self.params),
        }

    @staticmethod
    def from_doc(doc: dict) -> "LogRegModel":
        return LogRegModel(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            intercept=float(doc["intercept"]),
            l1_strength=float(doc["l1_strength"]),
            params=dict(doc.get("params", {})),
        )


def _lipschitz_step(X: np.ndarray) -> float:
    """1 / L for the logistic smooth part, L = sigma_max(X)^2 / (4n)."""
    n, d = X.shape
    v = np.full(d, 1.0 / np.sqrt(d))
    sigma_sq = 1.0
    for _ in range(30):
        u = X.T @ (X @ v)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return 1.0
        sigma_sq = norm
        v = u / norm
    return 4.0 * n / (1.05 * sigma_sq)


def fit_logreg_l1(X, y, params: dict) -> LogRegModel:
    """ISTA with backtracking; stops when no coordinate moves more than tol.

    The initial step comes from a power-iteration Lipschitz estimate and is
    allowed to grow between iterations, with backtracking as the safeguard.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values in logistic regression input")
    lam = float(params["l1_strength"])
    max_iter = int(params["max_iter"])
    tol = float(params["tol"])

    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    base_step = _lipschitz_step(X)
    step = base_step
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = X @ w + b
        r = sigmoid(z) - y
        gw = X.T @ r / n
        gb = float(np.mean(r))
        f0 = float(np.mean(softplus(z) - y * z))
        while True:
            w_new = soft_threshold(w - step * gw, step * lam)
            b_new = b - step * gb
            dw = w_new - w
            db = b_new - b
            f_new = logistic_smooth_loss(X, y, w_new, b_new)
            quad = f0 + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * step)
            if f_new <= quad + 1e-12 or step < 1e-12:
                break
            step *= 0.5
        move = max(float(np.max(np.abs(w_new - w), initial=0.0)), abs(b_new - b))
        w, b = w_new, b_new
        if move < tol:
            converged = True
            break
        step = min(step * 1.2, 64.0 * base_step)
    if not converged:
        log.debug("logreg_l1 stopped at max_iter=%d without meeting tol", max_iter)
    return LogRegModel(weights=w, intercept=float(b), l1_strength=lam, n_iter=it, converged=converged, params=dict(params))


@dataclass
class LdaModel:
    means: np.ndarray  # (2, d)
    priors: np.ndarray  # (2,)
    covariance: np.ndarray  # (d, d), pooled, jittered if needed
    coef: np.ndarray
    intercept: float
    jittered: bool = False

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.coef.shape[0]:
            raise DataError(f"expected {self.coef.shape[0]} columns, got {X.shape}")
        return sigmoid(X @ self.coef + self.intercept)

    def posterior(self, X: np.ndarray) -> np.ndarray:
        """Both class posteriors, columns summing to one."""
        p1 = self.predict_proba(X)
        return np.stack([1.0 - p1, p1], axis=1)

    def to_doc(self) -> dict:
        return {
            "kind": "lda",
            "means": self.means.tolist(),
            "priors": self.priors.tolist(),
            "covariance": self.covariance.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "jittered": self.jittered,
        }

    @staticmethod
    def from_doc(doc: dict) -> "LdaModel":
        return LdaModel(
            means=np.asarray(doc["means"], dtype=np.float64),
            priors=np.asarray(doc["priors"], dtype=np.float64),
            covariance=np.asarray(doc["covariance"], dtype=np.float64),
            coef=np.asarray(doc["coef"], dtype=np.float64),
            intercept=float(doc["intercept"]),
            jittered=bool(doc.get("jittered", False)),
        )


def _solvable(cov: np.ndarray) -> bool:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    diag = np.diag(chol)
    return bool(np.all(diag > np.max(diag) * 1e-9))


def fit_lda(X, y) -> LdaModel:
    """Gaussian discriminant with a shared covariance and no shrinkage.

    A singular pooled covariance gets diagonal jitter of 1e-8 * trace/d
    (escalated tenfold until the factorization succeeds).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    counts = np.array([(y == c).sum() for c in (0, 1)])
    if np.any(counts < 2):
        raise DataError(f"lda needs at least 2 samples per class, got counts {counts.tolist()}")

    means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    priors = counts / n
    scatter = np.zeros((d, d))
    for c in (0, 1):
        centered = X[y == c] - means[c]
        scatter += centered.T @ centered
    cov = scatter / (n - 2)

    jittered = False
    jitter = 1e-8 * (np.trace(cov) / d if np.trace(cov) > 0 else 1.0)
    for _ in range(12):
        if _solvable(cov):
            break
        cov = cov + jitter * np.eye(d)
        jitter *= 10.0
        jittered = True
    else:
        raise DataError("pooled covariance could not be stabilized")
    if jittered:
        log.warning("lda: singular pooled covariance; diagonal jitter applied")

    diff = means[1] - means[0]
    coef = np.linalg.solve(cov, diff)
    intercept = float(
        -0.5 * (means[1] @ np.linalg.solve(cov, means[1]) - means[0] @ np.linalg.solve(cov, means[0]))
        + np.log(priors[1] / priors[0])
    )
    return LdaModel(means=means, priors=priors, covariance=cov, coef=coef, intercept=intercept, jittered=jittered)
