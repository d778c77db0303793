"""Class-weighted L2-regularized logistic regression.

The objective is the sample-weighted negative log-likelihood plus an L2
penalty of strength 1/C on the coefficients (the intercept is unpenalized):

    J(beta, b) = sum_i w_i * [log(1 + exp(z_i)) - y_i * z_i] + ||beta||^2 / (2C)

with z_i = x_i . beta + b. Balanced weighting assigns class c the weight
n / (2 * n_c). The problem is strictly convex, so a damped Newton iteration
driven to a hard gradient-norm tolerance gives a reproducible optimum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonConvergence, SingleClass, ValidationError
from .matrix import FeatureMatrix, Standardization, standardize

WEIGHTING_NONE = "none"
WEIGHTING_BALANCED = "balanced"

GRAD_TOL = 1e-8
MAX_ITER = 100


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray  # standardized scale
    intercept: float
    l2_strength: float  # C = 1/lambda
    class_weighting: str
    feature_names: tuple[str, ...]
    standardization: Standardization
    n_iter: int = 0
    grad_norm: float = 0.0

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Probabilities for raw (unstandardized) feature rows."""
        Xs = self.standardization.apply(np.asarray(X, dtype=float))
        return sigmoid(Xs @ self.coefficients + self.intercept)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sample_weights(y: np.ndarray, weighting: str) -> np.ndarray:
    """Per-sample weights; balanced gives class c the weight n / (2 * n_c)."""
    if weighting == WEIGHTING_NONE:
        return np.ones(len(y))
    if weighting != WEIGHTING_BALANCED:
        raise ValidationError(f"unknown class weighting {weighting!r}")
    n = len(y)
    n_pos = int(np.sum(y == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("balanced weighting needs both classes")
    w_pos = n / (2.0 * n_pos)
    w_neg = n / (2.0 * n_neg)
    return np.where(y == 1, w_pos, w_neg)


def penalized_loss_grad(
    theta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    c: float,
) -> tuple[float, np.ndarray]:
    """Weighted penalized log-loss and its analytic gradient.

    theta = (coefficients..., intercept); the intercept is unpenalized.
    """
    beta, b = theta[:-1], theta[-1]
    z = X @ beta + b
    # log(1+e^z) - y z, computed stably
    loss = float(np.sum(weights * (np.logaddexp(0.0, z) - y * z)))
    loss += float(beta @ beta) / (2.0 * c)
    p = sigmoid(z)
    wr = weights * (p - y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ wr + beta / c
    grad[-1] = np.sum(wr)
    return loss, grad


def fit_logistic(
    fm: FeatureMatrix,
    c: float = 1.0,
    weighting: str = WEIGHTING_BALANCED,
    *,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
) -> LogisticModel:
    """Fit by damped Newton to gradient norm <= tol.

    Standardizes the matrix first if it has not been already; the fitted
    (mean, sd) are stored on the model and reused at prediction time.
    """
    if c <= 0:
        raise ValidationError(f"l2 strength C must be positive, got {c}")
    if fm.standardization is None:
        fm = standardize(fm)
    X, y = fm.X, fm.y.astype(float)
    if len(np.unique(fm.y)) < 2:
        raise SingleClass("both classes required to fit")
    w = sample_weights(fm.y, weighting)

    theta = np.zeros(fm.d + 1)
    pen = np.ones(fm.d + 1) / c
    pen[-1] = 0.0
    loss, grad = penalized_loss_grad(theta, X, y, w, c)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            break
        p = sigmoid(X @ theta[:-1] + theta[-1])
        curv = w * p * (1.0 - p)
        H = np.empty((fm.d + 1, fm.d + 1))
        Xw = X * curv[:, None]
        H[:-1, :-1] = X.T @ Xw
        H[:-1, -1] = Xw.sum(axis=0)
        H[-1, :-1] = H[:-1, -1]
        H[-1, -1] = curv.sum()
        H[np.diag_indices_from(H)] += pen
        # tiny ridge keeps the Newton system solvable when p saturates;
        # it only shapes the step, the optimum is still judged by the gradient
        H[np.diag_indices_from(H)] += 1e-12
        step = np.linalg.solve(H, -grad)

        t = 1.0
        slope = float(grad @ step)
        while True:
            cand = theta + t * step
            cand_loss, cand_grad = penalized_loss_grad(cand, X, y, w, c)
            if cand_loss <= loss + 1e-4 * t * slope:
                break
            # near the optimum the loss sits at its float resolution floor;
            # the contracting gradient still certifies the Newton step
            if np.linalg.norm(cand_grad) <= 0.5 * gnorm:
                break
            if t < 2**-30:
                break
            t *= 0.5
        theta, loss, grad = cand, cand_loss, cand_grad
    else:
        gnorm = float(np.linalg.norm(grad))
        if gnorm > tol:
            raise NonConvergence(
                f"gradient norm {gnorm:.3e} > {tol:.1e} after {max_iter} iterations"
            )

    return LogisticModel(
        coefficients=theta[:-1].copy(),
        intercept=float(theta[-1]),
        l2_strength=float(c),
        class_weighting=weighting,
        feature_names=fm.feature_names,
        standardization=fm.standardization,
        n_iter=n_iter,
        grad_norm=float(np.linalg.norm(grad)),
    )
