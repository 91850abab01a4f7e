"""From a training Dataset to a fitted Rule, for each supported method."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Optional

import numpy as np

from . import ramsvm
from .data import Dataset, Rule, Standardizer, standardize_covariates
from .gps import DEFAULT_CLIP, DEFAULT_RIDGE, GpsModel, fit_multinomial
from .labeling import DEFAULT_TUPLE_CAP, Instances, build_instances
from .matching import build_matched_sets

METHODS = ("match-g1", "match-gw1", "match-gw2", "multi-ol")
WEIGHTING_OF = {"match-g1": "constant", "match-gw1": "g1", "match-gw2": "g2"}


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "match-gw1"
    metric: str = "mahalanobis"   # or "gps" for GPS-vector matching
    m: int = 1
    caliper: Optional[float] = None
    tuple_cap: int = DEFAULT_TUPLE_CAP
    kernel: str = "gaussian"
    bandwidth: Optional[float] = None
    gamma: float = ramsvm.DEFAULT_GAMMA
    tol: float = ramsvm.DEFAULT_TOL
    max_sweeps: int = ramsvm.DEFAULT_MAX_SWEEPS
    lambda_grid: tuple = ramsvm.LAMBDA_GRID
    folds: int = 3
    clip: float = DEFAULT_CLIP
    ridge: float = DEFAULT_RIDGE
    standardize: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.metric not in ("mahalanobis", "gps", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))

    def replace(self, **changes) -> "PipelineConfig":
        d = asdict(self)
        d.update(changes)
        return PipelineConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_grid"] = list(d["lambda_grid"])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown pipeline keys: {sorted(extra)}")
        return cls(**d)

    @property
    def kernel_spec(self) -> ramsvm.KernelSpec:
        return ramsvm.KernelSpec(self.kernel, self.bandwidth)


def multi_ol_instances(d: Dataset, gps: GpsModel) -> Instances:
    """One instance per subject: label A_i, weight R_i / (n * pi_hat(A_i, X_i)).

    Outcomes are shifted by their minimum when any is negative so that all
    weights are non-negative; zero weights are dropped.
    """
    R = np.asarray(d.require_outcomes(), dtype=float)
    if R.min() < 0:
        R = R - R.min()
    P = gps.predict(d.covariates)
    pi = P[np.arange(d.n), d.treatments - 1]
    w = R / (d.n * pi)
    keep = w > 0
    idx = np.flatnonzero(keep)
    return Instances.from_arrays(d.covariates[idx], d.treatments[idx], w[idx], d.k,
                                 subjects=idx)


def training_instances(d: Dataset, cfg: PipelineConfig, seed: int = 0) -> Instances:
    """Classification instances for ``cfg.method`` on (already scaled) data ``d``."""
    if cfg.method == "multi-ol":
        gps = fit_multinomial(d, cfg.ridge, cfg.clip)
        return multi_ol_instances(d, gps)
    if cfg.metric == "gps":
        metric = fit_multinomial(d, cfg.ridge, cfg.clip)
    else:
        metric = cfg.metric
    ms = build_matched_sets(d, metric, cfg.m, cfg.caliper)
    return build_instances(d, ms, WEIGHTING_OF[cfg.method], cfg.tuple_cap, seed)


@dataclass(frozen=True, eq=False)
class PreparedProblem:
    problem: ramsvm.DualProblem
    standardizer: Optional[Standardizer]
    train: Dataset = field(repr=False)

    def rule(self, model: ramsvm.RamsvmModel, name: str = "rule") -> Rule:
        return Rule(model, model.k, self.standardizer, name=name)


def prepare(d: Dataset, cfg: PipelineConfig, seed: int = 0) -> PreparedProblem:
    st = None
    if cfg.standardize:
        d = standardize_covariates(d)
        st = d.standardizer
    inst = training_instances(d, cfg, seed)
    prob = ramsvm.DualProblem.build(inst, cfg.kernel_spec, cfg.gamma)
    return PreparedProblem(prob, st, d)


def fit_rule(d: Dataset, cfg: PipelineConfig, lam: float, seed: int = 0) -> Rule:
    prep = prepare(d, cfg, seed)
    model = ramsvm.fit(prep.problem, lam=lam, tol=cfg.tol, max_sweeps=cfg.max_sweeps)
    return prep.rule(model, name=cfg.method)
