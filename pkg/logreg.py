"""L1 / L2 penalized logistic regression fitted by proximal gradient descent.

Objective: ``sum_i logloss(y_i, x_i.w + b) + (1/C) * penalty(w)`` with
``penalty = sum|w|`` (L1) or ``0.5 * sum w^2`` (L2); the intercept is never
penalized. Numeric columns are standardized with Training statistics before
optimization and the coefficients are reported in that standardized space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit
from sklearn.preprocessing import StandardScaler

logger = logging.getLogger(__name__)

PENALTIES = ("l1", "l2")
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    penalty: str
    C: float
    epochs: int
    converged: bool
    objective_history: tuple[float, ...] = field(default=())

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return ((np.asarray(X, dtype=np.float64) - self.mean) / self.scale) @ self.coef + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))


def logistic_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                       penalty: str = "l2", C: float = 1.0, smooth_only: bool = False) -> float:
    """Penalized objective; ``smooth_only`` leaves out the (non-differentiable) L1 term."""
    z = X @ w + b
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    if penalty == "l2":
        return loss + 0.5 * float(w @ w) / C
    if smooth_only:
        return loss
    return loss + float(np.abs(w).sum()) / C


def logistic_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                      penalty: str = "l2", C: float = 1.0) -> tuple[np.ndarray, float]:
    """Gradient of the smooth part of the objective with respect to (w, b)."""
    residual = expit(X @ w + b) - y
    grad_w = X.T @ residual
    if penalty == "l2":
        grad_w = grad_w + w / C
    return grad_w, float(residual.sum())


def soft_threshold(v: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def fit_logreg(
    X: np.ndarray,
    y: np.ndarray,
    penalty: str = "l2",
    C: float = 1.0,
    seed: int = 0,
    standardize: Optional[np.ndarray] = None,
    max_epochs: int = 1000,
    tol: float = 1e-8,
) -> LogisticFit:
    """Fit by full-batch proximal gradient with backtracking line search.

    ``standardize`` is a boolean column mask (default: every column). The optimizer
    is deterministic; ``seed`` is accepted for the uniform learner contract.
    """
    penalty = penalty.lower()
    if penalty not in PENALTIES:
        raise ValueError(f"penalty must be one of {PENALTIES}, got {penalty!r}")
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X shape {X.shape} does not match {y.shape[0]} labels")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise ValueError("logistic regression needs both classes in y")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")

    n, p = X.shape
    mask = np.ones(p, dtype=bool) if standardize is None else np.asarray(standardize, dtype=bool)
    mean, scale = np.zeros(p), np.ones(p)
    if mask.any():
        scaler = StandardScaler().fit(X[:, mask])
        mean[mask], scale[mask] = scaler.mean_, scaler.scale_
    Xs = (X - mean) / scale

    # Lipschitz bound of the summed logistic loss in (w, b)
    lipschitz = 0.25 * np.linalg.norm(np.column_stack([Xs, np.ones(n)]), 2) ** 2
    if penalty == "l2":
        lipschitz += 1.0 / C
    step = 1.0 / lipschitz

    w = np.zeros(p)
    rate = y.mean()
    b = float(np.log(rate / (1.0 - rate)))

    def nonsmooth(v: np.ndarray) -> float:
        return float(np.abs(v).sum()) / C if penalty == "l1" else 0.0

    f = logistic_objective(w, b, Xs, y, penalty, C, smooth_only=True)
    objective = f + nonsmooth(w)
    history = [objective]
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        grad_w, grad_b = logistic_gradient(w, b, Xs, y, penalty, C)
        t = step * 2.0
        for _ in range(_MAX_BACKTRACKS):
            w_new = w - t * grad_w
            if penalty == "l1":
                w_new = soft_threshold(w_new, t / C)
            b_new = b - t * grad_b
            f_new = logistic_objective(w_new, b_new, Xs, y, penalty, C, smooth_only=True)
            dw, db = w_new - w, b_new - b
            model = f + grad_w @ dw + grad_b * db + (dw @ dw + db * db) / (2.0 * t)
            if f_new <= model:
                break
            t *= 0.5
        else:
            converged = True
            break
        step = t
        new_objective = f_new + nonsmooth(w_new)
        if new_objective > objective:
            # rounding at the optimum; keep the previous iterate
            converged = True
            break
        decrease = (objective - new_objective) / max(abs(objective), np.finfo(float).tiny)
        w, b, f, objective = w_new, b_new, f_new, new_objective
        history.append(objective)
        if decrease < tol:
            converged = True
            break

    logger.debug("logreg %s C=%g: %d epochs, objective %.6f", penalty, C, epoch, objective)
    return LogisticFit(
        coef=w, intercept=b, mean=mean, scale=scale, penalty=penalty, C=float(C),
        epochs=epoch, converged=converged, objective_history=tuple(history),
    )
