"""Simulation designs, the multicategory O-learning comparator and an experiment runner."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import softmax

from . import ramsvm
from .data import Dataset, Rule, standardize_covariates
from .evaluation import cross_validate_lambda, empirical_value, misclassification
from .gps import GpsModel
from .pipeline import METHODS, PipelineConfig, fit_rule, multi_ol_instances
from .survival import impute_dataset

BETA_CORRECT = np.array([
    [1, 2, 1, 1, 1, 1],
    [1, 1, 2, 1, 1, 1],
    [1, 1, 1, 4, 1, 1],
    [1, 1, -1, 1, 1, 5],
], dtype=float)
BETA_MISSPECIFIED = np.array([
    [1, 2, 1, 1, 1, 1],
    [1, 1, 2, 1, 1, 1],
    [1, 1, 1, 2, 1, 1],
    [1, 1, 1, 1, 1, 2],
], dtype=float)

SCENARIOS = {
    "LS": ("linear", "simple"),
    "NS": ("nonlinear", "simple"),
    "LC": ("linear", "complex"),
    "NC": ("nonlinear", "complex"),
}
TAU = 9.1
CENSOR_RATE = 0.2


@dataclass(frozen=True)
class ScenarioConfig:
    boundary: str = "linear"
    main_effect: str = "simple"
    gps_model: str = "correct"
    outcome: str = "continuous"
    n: int = 1000
    test_n: int = 20000
    replications: int = 20
    seed: int = 0
    k: int = 4
    p: int = 6
    tau: float = TAU
    censor_rate: float = CENSOR_RATE

    def __post_init__(self):
        checks = {"boundary": ("linear", "nonlinear"), "main_effect": ("simple", "complex"),
                  "gps_model": ("correct", "misspecified"),
                  "outcome": ("continuous", "survival")}
        for name, allowed in checks.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}")
        if self.k != 4 or self.p != 6:
            raise ValueError("the simulation designs are defined for k=4 arms and p=6 covariates")
        for name in ("n", "test_n", "replications"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.tau > 0 and self.censor_rate > 0):
            raise ValueError("tau and censor_rate must be positive")

    @classmethod
    def from_code(cls, code: str, **kw) -> "ScenarioConfig":
        try:
            boundary, effect = SCENARIOS[code.upper()]
        except KeyError:
            raise ValueError(f"unknown scenario {code!r}; choose from {sorted(SCENARIOS)}") from None
        return cls(boundary=boundary, main_effect=effect, **kw)

    @property
    def code(self) -> str:
        return ("L" if self.boundary == "linear" else "N") + ("S" if self.main_effect == "simple" else "C")

    @property
    def beta(self) -> np.ndarray:
        return BETA_CORRECT if self.gps_model == "correct" else BETA_MISSPECIFIED

    def to_dict(self) -> dict:
        return asdict(self)


def true_gps(X: np.ndarray, gps_model: str = "correct") -> np.ndarray:
    X = np.atleast_2d(X)
    if gps_model == "correct":
        return softmax(X @ BETA_CORRECT.T, axis=1)
    return softmax((X @ BETA_MISSPECIFIED.T) ** 2, axis=1)


def optimal_arm(X: np.ndarray, boundary: str = "linear") -> np.ndarray:
    X = np.atleast_2d(X)
    x1, x2 = X[:, 0], X[:, 1]
    if boundary == "linear":
        return np.select([(x1 > 0.5) & (x2 > 0.5), (x1 <= 0.5) & (x2 > 0.5),
                          (x1 <= 0.5) & (x2 <= 0.5)], [1, 2, 3], default=4)
    q = 0.5 * (x2 - 0.5) ** 2
    return np.select([q - x1 + 0.7 < 0, (q + x1 > 0.3) & (q + x1 <= 0.55), q + x1 <= 0.3],
                     [1, 3, 4], default=2)


def main_effect(X: np.ndarray, effect: str) -> np.ndarray:
    if effect == "simple":
        return X[:, 1].copy()
    return X[:, 0] ** 2 + np.exp(-X[:, 2] - X[:, 3])


def _draw_design(cfg: ScenarioConfig, rng, n: int):
    X = rng.uniform(size=(n, cfg.p))
    P = true_gps(X, cfg.gps_model)
    # inverse-CDF draw per row
    u = rng.uniform(size=(n, 1))
    A = 1 + np.minimum(np.sum(np.cumsum(P, axis=1) < u, axis=1), cfg.k - 1)
    opt = optimal_arm(X, cfg.boundary)
    return X, A.astype(np.int64), P, opt


def generate_continuous(cfg: ScenarioConfig, rng=None, n: Optional[int] = None) -> Dataset:
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    n = cfg.n if n is None else n
    X, A, P, opt = _draw_design(cfg, rng, n)
    R = 2.0 * (A == opt) + main_effect(X, cfg.main_effect)
    if cfg.main_effect == "complex":
        R = R + rng.uniform(size=n)
    return Dataset(X, A, cfg.k, outcomes=R, optimal_arms=opt, gps=P)


# cumulative baseline hazards of the four arms -------------------------------

_E075 = math.exp(-0.075)
_H3_A = (1.0 - _E075) / 0.3              # H3(0.25)
_H3_B = _H3_A + 0.5 * _E075              # H3(0.75)
_H4_A = 2.0 * (math.exp(0.5) - 1.0) + 2.0  # H4(1)


def baseline_hazard(t, arm: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if arm == 1:
        return np.ones_like(t)
    if arm == 2:
        return 0.5 * t ** -0.5
    if arm == 3:
        return np.where(t <= 0.25, np.exp(-0.3 * t),
                        np.where(t <= 0.75, _E075, np.exp(0.3 * (t - 1.0))))
    return np.where(t <= 1.0, np.exp(0.5 * t), np.exp(-0.5 * (t - 2.0))) + 2.0


def cumulative_baseline(t, arm: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if arm == 1:
        return t.copy()
    if arm == 2:
        return np.sqrt(t)
    if arm == 3:
        return np.where(
            t <= 0.25, (1.0 - np.exp(-0.3 * t)) / 0.3,
            np.where(t <= 0.75, _H3_A + _E075 * (t - 0.25),
                     _H3_B + (np.exp(0.3 * (t - 1.0)) - _E075) / 0.3))
    return np.where(t <= 1.0, 2.0 * (np.exp(0.5 * t) - 1.0) + 2.0 * t,
                    _H4_A + 2.0 * (math.exp(0.5) - np.exp(-0.5 * (t - 2.0))) + 2.0 * (t - 1.0))


def _bisect(fn, target, lo, hi, tol=1e-13, max_iter=200):
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = fn(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, hi)):
            break
    return 0.5 * (lo + hi)


def inverse_cumulative_baseline(h, arm: int) -> np.ndarray:
    """Solve ``cumulative_baseline(t, arm) == h`` segment by segment."""
    h = np.asarray(h, dtype=float)
    if arm == 1:
        return h.copy()
    if arm == 2:
        return h ** 2
    if arm == 3:
        with np.errstate(invalid="ignore", divide="ignore"):
            s1 = -np.log1p(-0.3 * h) / 0.3
            s2 = 0.25 + (h - _H3_A) / _E075
            s3 = 1.0 + np.log(_E075 + 0.3 * (h - _H3_B)) / 0.3
        return np.where(h <= _H3_A, s1, np.where(h <= _H3_B, s2, s3))
    # arm 4 has no closed-form inverse; the hazard exceeds 2 everywhere so t <= h/2
    fn = lambda t: cumulative_baseline(t, 4)
    seg1 = h <= _H4_A
    lo = np.where(seg1, 0.0, 1.0)
    hi = np.where(seg1, 1.0, np.maximum(1.0, h / 2.0 + 1.0))
    return _bisect(fn, h, lo, hi)


class SurvivalSample(NamedTuple):
    dataset: Dataset
    true_time: np.ndarray
    uniforms: np.ndarray
    risk: np.ndarray
    censoring: np.ndarray


def sample_survival(cfg: ScenarioConfig, rng=None, n: Optional[int] = None) -> SurvivalSample:
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    n = cfg.n if n is None else n
    X, A, P, opt = _draw_design(cfg, rng, n)
    risk = 2.0 * (A == opt) + main_effect(X, cfg.main_effect)
    U = rng.uniform(size=n)
    h = -np.log(U) * np.exp(risk)
    Tt = np.empty(n)
    for arm in range(1, cfg.k + 1):
        sel = A == arm
        Tt[sel] = inverse_cumulative_baseline(h[sel], arm)
    C = rng.exponential(1.0 / cfg.censor_rate, size=n)
    T = np.minimum(np.minimum(Tt, C), cfg.tau)
    # alive at tau without earlier censoring counts as an event at tau
    event = (np.minimum(Tt, cfg.tau) <= C).astype(np.int64)
    d = Dataset(X, A, cfg.k, time=T, event=event, optimal_arms=opt, gps=P)
    return SurvivalSample(d, Tt, U, risk, C)


def generate_survival(cfg: ScenarioConfig, rng=None, n: Optional[int] = None) -> Dataset:
    return sample_survival(cfg, rng, n).dataset


def survival_test_set(cfg: ScenarioConfig, rng=None, n: Optional[int] = None) -> Dataset:
    """Survival test data whose reward is the true survival time restricted to tau."""
    s = sample_survival(cfg, rng, n)
    return s.dataset.with_outcomes(np.minimum(s.true_time, cfg.tau))


def fit_multi_ol(d: Dataset, gps: GpsModel, lam: float = 1.0,
                 config: Optional[PipelineConfig] = None) -> Rule:
    """Multicategory outcome-weighted learning on ``d`` as given (no rescaling)."""
    cfg = config or PipelineConfig(method="multi-ol")
    inst = multi_ol_instances(d, gps)
    model = ramsvm.fit(inst, cfg.kernel_spec, lam=lam, gamma=cfg.gamma, tol=cfg.tol,
                       max_sweeps=cfg.max_sweeps)
    return Rule(model, d.k, name="multi-ol")


# experiment runner ----------------------------------------------------------

RESULT_COLUMNS = ("scenario", "method", "replication", "value", "misclassification",
                  "gps", "outcome", "lambda", "status")


@dataclass(frozen=True)
class ReplicationSeeds:
    train: int
    test: int
    cv: int
    forest: int
    labeling: int


def replication_seeds(seed: int, replication: int) -> ReplicationSeeds:
    ss = np.random.SeedSequence([int(seed), int(replication)])
    vals = [int(c.generate_state(1)[0]) for c in ss.spawn(5)]
    return ReplicationSeeds(*vals)


@dataclass(frozen=True)
class SurvivalSettings:
    n_trees: int = 200
    mtry: Optional[int] = None
    min_node: int = 15
    n_split: int = 10


def replication_data(cfg: ScenarioConfig, replication: int) -> tuple[Dataset, Dataset]:
    """Training and test sets of one replication (training survival data un-imputed)."""
    seeds = replication_seeds(cfg.seed, replication)
    if cfg.outcome == "continuous":
        train = generate_continuous(cfg, np.random.default_rng(seeds.train), cfg.n)
        test = generate_continuous(cfg, np.random.default_rng(seeds.test), cfg.test_n)
    else:
        train = generate_survival(cfg, np.random.default_rng(seeds.train), cfg.n)
        test = survival_test_set(cfg, np.random.default_rng(seeds.test), cfg.test_n)
    return train, test


def impute_training(train: Dataset, cfg: ScenarioConfig, seeds: ReplicationSeeds,
                    surv: SurvivalSettings) -> Dataset:
    return impute_dataset(train, cfg.tau, n_trees=surv.n_trees, mtry=surv.mtry,
                          min_node=surv.min_node, seed=seeds.forest, n_split=surv.n_split)


def tune_and_fit(train: Dataset, pcfg: PipelineConfig, seeds: ReplicationSeeds) -> tuple[Rule, float]:
    lam, _ = cross_validate_lambda(train, pcfg, seed=seeds.cv)
    rule = fit_rule(train, pcfg, lam, seed=seeds.labeling)
    return rule, lam


def run_replication(cfg: ScenarioConfig, replication: int, methods: Sequence[str],
                    pipeline: Optional[PipelineConfig] = None,
                    surv: Optional[SurvivalSettings] = None) -> list:
    base = pipeline or PipelineConfig()
    surv = surv or SurvivalSettings()
    seeds = replication_seeds(cfg.seed, replication)
    rows = []

    def row(method, value, mis, lam, status):
        return {"scenario": cfg.code, "method": method, "replication": replication,
                "value": value, "misclassification": mis, "gps": cfg.gps_model,
                "outcome": cfg.outcome, "lambda": lam, "status": status}

    try:
        train, test = replication_data(cfg, replication)
        if cfg.outcome == "survival":
            train = impute_training(train, cfg, seeds, surv)
    except Exception as exc:  # recorded, not fatal
        return [row(m, float("nan"), float("nan"), float("nan"), f"failed: {exc}") for m in methods]
    for method in methods:
        try:
            rule, lam = tune_and_fit(train, base.replace(method=method), seeds)
            value = empirical_value(rule, test, test.gps)
            mis = misclassification(rule, test)
            rows.append(row(method, value, mis, lam, "ok"))
        except Exception as exc:
            rows.append(row(method, float("nan"), float("nan"), float("nan"), f"failed: {exc}"))
    return rows


def run_experiment(cfg: ScenarioConfig, methods: Sequence[str] = METHODS,
                   pipeline: Optional[PipelineConfig] = None,
                   surv: Optional[SurvivalSettings] = None, n_jobs: int = 1) -> list:
    """One row per (replication, method); replications may run in worker processes."""
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    reps = range(cfg.replications)
    if n_jobs == 1:
        chunks = [run_replication(cfg, r, methods, pipeline, surv) for r in reps]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(run_replication, cfg, r, list(methods), pipeline, surv)
                       for r in reps]
            chunks = [f.result() for f in futures]
    return [r for chunk in chunks for r in chunk]


def summarize(rows: list) -> dict:
    """Mean value and misclassification per method over successful replications."""
    out = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        out[method] = {
            "value": float(np.mean([r["value"] for r in ok])) if ok else float("nan"),
            "misclassification": float(np.mean([r["misclassification"] for r in ok])) if ok else float("nan"),
            "n_ok": len(ok),
        }
    return out
