"""Reinforced angle-based multicategory SVM.

Labels are coded as vertices of a regular simplex in R^(k-1) and a rule
predicts the vertex with the largest inner product with ``f(x)``. Training
solves the box-constrained dual of the weighted reinforced-hinge problem by
cyclic coordinate descent.

Dual variables are indexed by (instance r, arm l). With ``c_rl = +V_l`` if
``l == Y_r`` and ``-V_l`` otherwise, the dual reads

    min  1/(2 lam) * sum K(x_r, x_s) <c_rl, c_sm> a_rl a_sm  -  sum b_rl a_rl
    s.t. 0 <= a_rl <= W_r * (gamma if l == Y_r else 1 - gamma)

with ``b_rl = k-1`` on the label and 1 elsewhere, and the fitted scores are
``f(x) = 1/lam * sum_rl a_rl c_rl K(x_r, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist, pdist

from .labeling import Instances

DEFAULT_GAMMA = 0.5
DEFAULT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 500
LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 2, 13))


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SimplexCode:
    vertices: np.ndarray  # (k, k-1)

    @property
    def k(self) -> int:
        return self.vertices.shape[0]


def simplex_vertices(k: int) -> SimplexCode:
    if int(k) != k or k < 2:
        raise ValueError(f"simplex coding needs an integer k >= 2, got {k}")
    k = int(k)
    V = np.empty((k, k - 1))
    V[0] = (k - 1) ** -0.5
    base = -(1.0 + np.sqrt(k)) / (k - 1) ** 1.5
    for l in range(1, k):
        V[l] = base
        V[l, l - 1] += np.sqrt(k / (k - 1))
    V.setflags(write=False)
    return SimplexCode(V)


def reinforced_loss(u, y: int, code: SimplexCode, gamma: float = DEFAULT_GAMMA) -> float:
    """Reinforced hinge loss of score vector ``u`` for label ``y`` (1-based)."""
    u = np.asarray(u, dtype=float)
    k = code.k
    ip = code.vertices @ u
    others = np.delete(ip, y - 1)
    return float((1 - gamma) * np.sum(np.maximum(1.0 + others, 0.0))
                 + gamma * max((k - 1) - ip[y - 1], 0.0))


@dataclass(frozen=True)
class KernelSpec:
    """``linear`` or ``gaussian``; the effective kernel always adds 1 (intercept).

    Gaussian: ``exp(-||x - z||^2 / (2 * bandwidth^2)) + 1``. A ``None``
    bandwidth is resolved at fit time by the median heuristic.
    """

    kind: str = "gaussian"
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def resolved(self, X: np.ndarray) -> "KernelSpec":
        if self.kind == "gaussian" and self.bandwidth is None:
            return KernelSpec("gaussian", median_bandwidth(X))
        return self

    def __call__(self, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
        return gram(self, X1, X2)


def median_bandwidth(X: np.ndarray) -> float:
    """Median pairwise Euclidean distance (1.0 if all points coincide)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        return 1.0
    d = pdist(X)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def gram(kernel: KernelSpec, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if kernel.kind == "linear":
        return X1 @ X2.T + 1.0
    if kernel.bandwidth is None:
        raise ValueError("gaussian bandwidth unresolved")
    D2 = cdist(X1, X2, "sqeuclidean")
    return np.exp(-D2 / (2.0 * kernel.bandwidth ** 2)) + 1.0


@njit(cache=True)
def _objective(alpha, C, F, b, group_of):
    N, k = alpha.shape
    quad = 0.0
    lin = 0.0
    for r in range(N):
        g = group_of[r]
        for l in range(k):
            a = alpha[r, l]
            if a != 0.0:
                s = 0.0
                for q in range(C.shape[2]):
                    s += C[r, l, q] * F[g, q]
                quad += a * s
                lin += b[r, l] * a
    return 0.5 * quad - lin


@njit(cache=True)
def _coordinate_descent(Kg, start, group_of, C, b, upper, alpha, F, lam, tol,
                        max_sweeps, trace):
    G = Kg.shape[0]
    k = alpha.shape[1]
    km1 = C.shape[2]
    acc = np.zeros(km1)
    sweeps = 0
    converged = False
    for sweep in range(max_sweeps):
        max_change = 0.0
        for g in range(G):
            kgg = Kg[g, g]
            for q in range(km1):
                acc[q] = 0.0
            moved = False
            for r in range(start[g], start[g + 1]):
                for l in range(k):
                    grad = -b[r, l]
                    for q in range(km1):
                        grad += C[r, l, q] * F[g, q]
                    old = alpha[r, l]
                    new = old - grad * lam / kgg
                    if new < 0.0:
                        new = 0.0
                    elif new > upper[r, l]:
                        new = upper[r, l]
                    delta = new - old
                    if delta != 0.0:
                        alpha[r, l] = new
                        s = delta / lam
                        for q in range(km1):
                            F[g, q] += s * kgg * C[r, l, q]
                            acc[q] += s * C[r, l, q]
                        if abs(delta) > max_change:
                            max_change = abs(delta)
                        moved = True
            if moved:
                for h in range(G):
                    if h != g:
                        kgh = Kg[g, h]
                        for q in range(km1):
                            F[h, q] += kgh * acc[q]
        trace[sweep] = _objective(alpha, C, F, b, group_of)
        sweeps = sweep + 1
        if max_change < tol:
            converged = True
            break
    return sweeps, converged


@dataclass(frozen=True, eq=False)
class RamsvmModel:
    """Fitted model. ``coef[g]`` aggregates ``1/lam * sum a_rl c_rl`` per support point."""

    code: SimplexCode
    kernel: KernelSpec
    features: np.ndarray       # distinct training feature rows (one per subject)
    coef: np.ndarray           # (G, k-1)
    alpha: np.ndarray          # (N, k), rows in instance order
    upper: np.ndarray          # (N, k)
    labels: np.ndarray         # (N,)
    groups: np.ndarray         # (N,) row of ``features`` for each instance
    lam: float
    gamma: float
    converged: bool
    n_sweeps: int
    objective_trace: np.ndarray = field(repr=False)
    beta: Optional[np.ndarray] = None  # (p+1, k-1), intercept first; linear only

    @property
    def k(self) -> int:
        return self.code.k

    @property
    def dual_objective(self) -> float:
        return float(self.objective_trace[-1]) if len(self.objective_trace) else 0.0

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.features.shape[1]:
            raise ValueError(
                f"expected {self.features.shape[1]} features, got {X.shape[1]}")
        if self.beta is not None:
            return self.beta[0] + X @ self.beta[1:]
        out = np.empty((X.shape[0], self.k - 1))
        for s in range(0, X.shape[0], 4096):
            out[s:s + 4096] = gram(self.kernel, X[s:s + 4096], self.features) @ self.coef
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        scores = self.decision_function(X) @ self.code.vertices.T
        return np.argmax(scores, axis=1) + 1

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "vertices": self.code.vertices.tolist(),
            "kernel": {"kind": self.kernel.kind, "bandwidth": self.kernel.bandwidth},
            "features": self.features.tolist(),
            "coef": self.coef.tolist(),
            "alpha": self.alpha.tolist(),
            "upper": self.upper.tolist(),
            "labels": self.labels.tolist(),
            "groups": self.groups.tolist(),
            "lambda": self.lam,
            "gamma": self.gamma,
            "converged": self.converged,
            "n_sweeps": self.n_sweeps,
            "objective_trace": self.objective_trace.tolist(),
            "beta": None if self.beta is None else self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RamsvmModel":
        k = int(d["k"])
        kern = d["kernel"]
        beta = d.get("beta")
        return cls(
            code=simplex_vertices(k),
            kernel=KernelSpec(kern["kind"], kern["bandwidth"]),
            features=np.asarray(d["features"], dtype=float),
            coef=np.asarray(d["coef"], dtype=float).reshape(-1, k - 1),
            alpha=np.asarray(d["alpha"], dtype=float).reshape(-1, k),
            upper=np.asarray(d["upper"], dtype=float).reshape(-1, k),
            labels=np.asarray(d["labels"], dtype=np.int64),
            groups=np.asarray(d["groups"], dtype=np.int64),
            lam=float(d["lambda"]),
            gamma=float(d["gamma"]),
            converged=bool(d["converged"]),
            n_sweeps=int(d["n_sweeps"]),
            objective_trace=np.asarray(d["objective_trace"], dtype=float),
            beta=None if beta is None else np.asarray(beta, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class DualProblem:
    """Data-dependent pieces of the dual that do not depend on ``lam``.

    Build once and reuse across a lambda path; ``fit`` accepts it directly.
    """

    code: SimplexCode
    kernel: KernelSpec
    features: np.ndarray
    Kg: np.ndarray
    order: np.ndarray     # instance permutation sorting rows by group
    start: np.ndarray
    group_of: np.ndarray  # in sorted order
    C: np.ndarray
    b: np.ndarray
    upper: np.ndarray
    labels: np.ndarray
    groups: np.ndarray    # in original order
    gamma: float

    @classmethod
    def build(cls, instances: Instances, kernel: KernelSpec | str = "gaussian",
              gamma: float = DEFAULT_GAMMA) -> "DualProblem":
        if isinstance(kernel, str):
            kernel = KernelSpec(kernel)
        if len(instances) == 0:
            raise SolverError("empty instance list")
        labels = np.asarray(instances.labels, dtype=np.int64)
        if np.unique(labels).size < 2:
            raise SolverError("single-label data: need instances with at least 2 distinct labels")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        weights = np.asarray(instances.weights, dtype=float)
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise SolverError("instance weights must be finite and non-negative")
        k = instances.k
        code = simplex_vertices(k)

        uniq, groups = np.unique(instances.subjects, return_inverse=True)
        first = np.zeros(len(uniq), dtype=np.int64)
        first[groups[::-1]] = np.arange(len(groups))[::-1]
        features = np.asarray(instances.features, dtype=float)[first]
        kernel = kernel.resolved(features)
        Kg = np.ascontiguousarray(gram(kernel, features, features))

        order = np.argsort(groups, kind="stable")
        g_sorted = groups[order]
        start = np.searchsorted(g_sorted, np.arange(len(uniq) + 1)).astype(np.int64)
        y = labels[order] - 1
        N = len(order)
        is_label = np.zeros((N, k), dtype=bool)
        is_label[np.arange(N), y] = True
        sign = np.where(is_label, 1.0, -1.0)
        C = np.ascontiguousarray(sign[:, :, None] * code.vertices[None, :, :])
        b = np.where(is_label, k - 1.0, 1.0)
        w = weights[order][:, None]
        upper = np.where(is_label, gamma * w, (1.0 - gamma) * w)
        return cls(code, kernel, features, Kg, order, start, g_sorted.astype(np.int64),
                   C, b, upper, labels, groups.astype(np.int64), gamma)


def fit(instances: Instances | DualProblem, kernel: KernelSpec | str = "gaussian",
        lam: float = 1.0, gamma: float = DEFAULT_GAMMA, tol: float = DEFAULT_TOL,
        max_sweeps: int = DEFAULT_MAX_SWEEPS,
        init_alpha: Optional[np.ndarray] = None) -> RamsvmModel:
    """Fit by cyclic coordinate descent over instances (subject-major) and arms.

    Each update minimizes the dual exactly along one coordinate and clips to
    the box, so iterates stay feasible and the objective never increases.
    Stops when the largest single-variable change in a sweep is below
    ``tol``; hitting ``max_sweeps`` leaves ``converged=False``.
    ``init_alpha`` (instance order, clipped to the box) warm-starts the run.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    prob = instances if isinstance(instances, DualProblem) else DualProblem.build(
        instances, kernel, gamma)
    N, k = prob.upper.shape
    if init_alpha is None:
        alpha = np.zeros((N, k))
    else:
        alpha = np.clip(np.asarray(init_alpha, dtype=float)[prob.order], 0.0, prob.upper)
    alpha = np.ascontiguousarray(alpha)
    F = _scores_at_groups(prob, alpha, lam)
    trace = np.empty(max(max_sweeps, 1))
    sweeps, converged = _coordinate_descent(
        prob.Kg, prob.start, prob.group_of, prob.C, prob.b, prob.upper, alpha, F,
        float(lam), float(tol), int(max_sweeps), trace)

    G = prob.features.shape[0]
    coef = np.zeros((G, k - 1))
    np.add.at(coef, prob.group_of, np.einsum("rl,rlq->rq", alpha, prob.C) / lam)
    inv = np.empty_like(prob.order)
    inv[prob.order] = np.arange(N)
    beta = None
    if prob.kernel.kind == "linear":
        Xt = np.column_stack([np.ones(G), prob.features])
        beta = Xt.T @ coef
    return RamsvmModel(
        code=prob.code, kernel=prob.kernel, features=prob.features, coef=coef,
        alpha=alpha[inv], upper=prob.upper[inv], labels=prob.labels, groups=prob.groups,
        lam=float(lam), gamma=prob.gamma, converged=bool(converged), n_sweeps=int(sweeps),
        objective_trace=trace[:sweeps].copy(), beta=beta)


def _scores_at_groups(prob: DualProblem, alpha: np.ndarray, lam: float) -> np.ndarray:
    G = prob.features.shape[0]
    km1 = prob.code.k - 1
    coef = np.zeros((G, km1))
    if np.any(alpha):
        np.add.at(coef, prob.group_of, np.einsum("rl,rlq->rq", alpha, prob.C) / lam)
    return np.ascontiguousarray(prob.Kg @ coef)


def fit_path(instances: Instances | DualProblem, lambdas, kernel="gaussian",
             gamma: float = DEFAULT_GAMMA, tol: float = DEFAULT_TOL,
             max_sweeps: int = DEFAULT_MAX_SWEEPS) -> dict:
    """Fit every lambda, largest first, warm-starting from the previous solution."""
    prob = instances if isinstance(instances, DualProblem) else DualProblem.build(
        instances, kernel, gamma)
    models = {}
    alpha = None
    for lam in sorted(set(float(v) for v in lambdas), reverse=True):
        model = fit(prob, lam=lam, tol=tol, max_sweeps=max_sweeps, init_alpha=alpha)
        alpha = model.alpha
        models[lam] = model
    return models


def predict(model: RamsvmModel, x: np.ndarray) -> np.ndarray | int:
    x = np.asarray(x, dtype=float)
    out = model.predict(np.atleast_2d(x))
    return int(out[0]) if x.ndim == 1 else out
