"""Multinomial logistic regression for generalized propensity scores."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import logsumexp, softmax

from .data import Dataset

DEFAULT_RIDGE = 1e-6
DEFAULT_CLIP = 0.01


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


def clip_probabilities(P: np.ndarray, lo: float) -> np.ndarray:
    """Raise every probability to at least ``lo`` while keeping rows summing to 1.

    Entries below ``lo`` are pinned at ``lo`` and the remaining mass is shared
    proportionally among the other entries; this repeats until no entry falls
    below the bound (at most k rounds).
    """
    P = np.array(P, dtype=float, copy=True)
    squeeze = P.ndim == 1
    P = np.atleast_2d(P)
    k = P.shape[1]
    if lo <= 0:
        return P[0] if squeeze else P
    if lo * k > 1:
        raise ValueError(f"clip bound {lo} infeasible for k={k}")
    pinned = np.zeros(P.shape, dtype=bool)
    for _ in range(k):
        pinned |= P < lo
        free_mass = P.sum(axis=1, where=~pinned, initial=0.0, keepdims=True)
        target = 1.0 - lo * pinned.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(free_mass > 0, target / free_mass, 1.0)
        P = np.where(pinned, lo, P * factor)
        if not np.any(P < lo):
            break
    P = np.maximum(P, lo)
    return P[0] if squeeze else P


@dataclass(frozen=True)
class GpsModel:
    """Fitted multinomial logit; arm 1 is the reference with zero coefficients.

    ``coefficients`` has shape ``(k-1, p+1)`` with the intercept in column 0.
    """

    coefficients: np.ndarray
    k: int
    clip: tuple = (DEFAULT_CLIP, 1.0)
    loglik_trace: tuple = field(default=(), compare=False)

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = np.zeros((X.shape[0], self.k))
        eta[:, 1:] = self.coefficients[:, 0] + X @ self.coefficients[:, 1:].T
        return eta

    def raw_probabilities(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.linear_predictor(X), axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return clip_probabilities(self.raw_probabilities(X), self.clip[0])

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "k": self.k,
                "clip": list(self.clip)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GpsModel":
        return cls(np.asarray(d["coefficients"], dtype=float), int(d["k"]),
                   tuple(d.get("clip", (DEFAULT_CLIP, 1.0))))


def predict_gps(model: GpsModel, x: np.ndarray) -> np.ndarray:
    """Clipped GPS vector(s) for one covariate row or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates must be finite")
    P = model.predict(x)
    return P[0] if x.ndim == 1 else P


def _penalized_loglik(theta, Xt, Y, ridge, pen):
    n = Xt.shape[0]
    k = Y.shape[1]
    eta = np.zeros((n, k))
    eta[:, 1:] = Xt @ theta.T
    ll = np.sum(eta * Y) - np.sum(logsumexp(eta, axis=1))
    return ll / n - 0.5 * ridge * np.sum(pen * theta * theta), eta


def fit_multinomial(d: Dataset, regularization: float = DEFAULT_RIDGE,
                    clip: float = DEFAULT_CLIP, tol: float = 1e-8,
                    max_iter: int = 100) -> GpsModel:
    """Ridge-penalized multinomial logit fitted by damped Newton steps.

    Maximizes ``mean log-likelihood - ridge/2 * ||slopes||^2`` (intercepts
    are left unpenalized) until the gradient norm drops below ``tol``.
    Step halving keeps the objective non-decreasing.
    """
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    X = d.covariates
    n, p = X.shape
    k = d.k
    if n <= p + 1:
        raise ValueError(f"need n > p+1 observations, got n={n}, p={p}")
    Xt = np.column_stack([np.ones(n), X])
    Y = np.zeros((n, k))
    Y[np.arange(n), d.treatments - 1] = 1.0
    m = p + 1
    theta = np.zeros((k - 1, m))
    pen = np.ones((k - 1, m))
    pen[:, 0] = 0.0  # intercepts are not penalized

    obj, eta = _penalized_loglik(theta, Xt, Y, regularization, pen)
    trace = [obj]
    grad_norm = np.inf
    for _ in range(max_iter):
        P = softmax(eta, axis=1)[:, 1:]
        grad = ((Y[:, 1:] - P).T @ Xt) / n - regularization * pen * theta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return GpsModel(theta, k, (clip, 1.0), tuple(trace))
        # negative Hessian: sum_i (diag(p_i) - p_i p_i^T) kron x_i x_i^T
        W = -np.einsum("na,nb->nab", P, P)
        W[:, np.arange(k - 1), np.arange(k - 1)] += P
        H = np.einsum("nab,nc,nd->acbd", W, Xt, Xt).reshape((k - 1) * m, (k - 1) * m) / n
        H[np.diag_indices_from(H)] += regularization * pen.ravel()
        step = np.linalg.solve(H, grad.ravel()).reshape(k - 1, m)
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            cand_obj, cand_eta = _penalized_loglik(cand, Xt, Y, regularization, pen)
            if cand_obj >= obj:
                break
            t *= 0.5
        else:
            break
        theta, obj, eta = cand, cand_obj, cand_eta
        trace.append(obj)
    P = softmax(eta, axis=1)[:, 1:]
    grad = ((Y[:, 1:] - P).T @ Xt) / n - regularization * pen * theta
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm < tol:
        return GpsModel(theta, k, (clip, 1.0), tuple(trace))
    raise ConvergenceError("multinomial logit did not converge", grad_norm)
