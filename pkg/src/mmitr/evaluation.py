"""Value-function criteria and cross-validated choice of lambda."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import ramsvm
from .data import Dataset, Rule
from .gps import fit_multinomial
from .labeling import Instances
from .pipeline import PipelineConfig, prepare

MAX_FOLD_DRAWS = 20


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationReport:
    rule: str
    value: float
    misclassification: Optional[float]
    n_eval: int
    gps_source: str

    def to_dict(self) -> dict:
        return asdict(self)


def empirical_value(rule: Rule, d: Dataset, gps: np.ndarray) -> float:
    """IPW ratio estimate ``E_n[R 1{A=D(X)}/pi] / E_n[1{A=D(X)}/pi]``.

    ``gps`` holds one probability vector per subject (rows of length k).
    """
    R = d.require_outcomes()
    gps = np.asarray(gps, dtype=float)
    if gps.shape != (d.n, d.k):
        raise ValueError(f"gps must have shape ({d.n}, {d.k})")
    pi = gps[np.arange(d.n), d.treatments - 1]
    if np.any(pi <= 0):
        raise ValueError("propensities must be positive")
    hit = rule.predict(d.covariates) == d.treatments
    if not np.any(hit):
        raise EvaluationError("no subject received the treatment the rule recommends")
    w = hit / pi
    return float(np.sum(w * R) / np.sum(w))


def misclassification(rule: Rule, d: Dataset) -> float:
    if d.optimal_arms is None:
        raise EvaluationError("dataset has no optimal arms")
    return float(np.mean(rule.predict(d.covariates) != d.optimal_arms))


def matched_value(rule, instances: Instances) -> float:
    """Matched value ``sum W * 1{D(X_i) = Y}`` over the instances.

    ``rule`` is anything with ``predict`` (or a callable) on the instance
    features; dropped zero-weight tuples contribute nothing.
    """
    if len(instances) == 0:
        return 0.0
    pred = rule.predict(instances.features) if hasattr(rule, "predict") else rule(instances.features)
    hit = np.asarray(pred) == instances.labels
    return math.fsum(instances.weights[hit])


def evaluate(rule: Rule, d: Dataset, gps: np.ndarray, gps_source: str) -> EvaluationReport:
    value = empirical_value(rule, d, gps)
    mis = misclassification(rule, d) if d.optimal_arms is not None else None
    return EvaluationReport(rule.name, value, mis, d.n, gps_source)


def stratified_folds(treatments: np.ndarray, k: int, folds: int, rng) -> np.ndarray:
    """Fold id per subject, stratified by arm; every fold must hold every arm."""
    A = np.asarray(treatments)
    for _ in range(MAX_FOLD_DRAWS):
        fold = np.empty(len(A), dtype=np.int64)
        for w in range(1, k + 1):
            members = np.flatnonzero(A == w)
            perm = rng.permutation(members)
            offset = rng.integers(folds)
            fold[perm] = (np.arange(len(perm)) + offset) % folds
        ok = all(np.all(np.isin(np.arange(1, k + 1), A[fold == f])) for f in range(folds))
        if ok:
            return fold
    raise EvaluationError(
        f"could not assign {folds} folds with every arm present after {MAX_FOLD_DRAWS} draws")


def select_lambda(grid: Sequence[float], means: Sequence[float]) -> float:
    """Grid point with the largest mean value; ties go to the larger lambda."""
    best_lam, best_val = None, -np.inf
    for lam, val in sorted(zip(grid, means), key=lambda t: -t[0]):
        if best_lam is None or val > best_val:
            best_lam, best_val = lam, val
    return float(best_lam)


def cross_validate_lambda(d: Dataset, cfg: PipelineConfig,
                          lambda_grid: Optional[Sequence[float]] = None,
                          folds: Optional[int] = None, seed: int = 0) -> tuple[float, dict]:
    """Pick lambda by k-fold cross-validated empirical value.

    Matching, labeling and the solver see only the training folds; held-out
    values use a multinomial GPS fitted on the training folds. A fold whose
    held-out set has no subject treated as recommended scores ``-inf``.
    Returns the chosen lambda and the per-lambda mean values.
    """
    grid = tuple(float(v) for v in (lambda_grid if lambda_grid is not None else cfg.lambda_grid))
    folds = folds if folds is not None else cfg.folds
    if d.n < folds * d.k:
        raise EvaluationError(f"need n >= folds*k = {folds * d.k} subjects, got {d.n}")
    if len(grid) == 1:
        return grid[0], {grid[0]: float("nan")}
    rng = np.random.default_rng(seed)
    fold = stratified_folds(d.treatments, d.k, folds, rng)
    fold_seeds = rng.integers(0, 2**31, size=folds)
    scores = {lam: [] for lam in grid}
    for f in range(folds):
        train = d.subset(np.flatnonzero(fold != f))
        held = d.subset(np.flatnonzero(fold == f))
        prep = prepare(train, cfg, seed=int(fold_seeds[f]))
        models = ramsvm.fit_path(prep.problem, grid, tol=cfg.tol, max_sweeps=cfg.max_sweeps)
        gps_model = fit_multinomial(prep.train, cfg.ridge, cfg.clip)
        Xh = held.covariates if prep.standardizer is None else prep.standardizer.transform(held.covariates)
        pi_hat = gps_model.predict(Xh)
        for lam in grid:
            try:
                v = empirical_value(prep.rule(models[lam]), held, pi_hat)
            except EvaluationError:
                v = -np.inf
            scores[lam].append(v)
    means = {lam: float(np.mean(v)) for lam, v in scores.items()}
    return select_lambda(grid, [means[l] for l in grid]), means
