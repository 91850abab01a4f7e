"""Turn matched sets into a weighted multicategory classification problem."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .data import Dataset
from .matching import MatchedSets

WEIGHTINGS = ("constant", "g1", "g2")
DEFAULT_TUPLE_CAP = 64


@dataclass(frozen=True)
class WeightingFunction:
    """Exchangeable, non-negative function of a tuple's k outcomes."""

    tag: str = "g1"

    def __post_init__(self):
        if self.tag not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.tag!r}; choose from {WEIGHTINGS}")

    def __call__(self, outcomes) -> np.ndarray:
        return evaluate_weight(self, outcomes)


def evaluate_weight(f: WeightingFunction | str, outcomes) -> np.ndarray | float:
    """Weight of one outcome vector, or of each row of a matrix of them.

    ``constant`` is 1, ``g1`` sums the gaps to the maximum, ``g2`` is the range.
    """
    tag = f.tag if isinstance(f, WeightingFunction) else WeightingFunction(f).tag
    R = np.asarray(outcomes, dtype=float)
    if not np.all(np.isfinite(R)):
        raise ValueError("outcomes must be finite")
    R2 = np.atleast_2d(R)
    if tag == "constant":
        w = np.ones(R2.shape[0])
    elif tag == "g1":
        # summing in sorted order makes the rounding permutation-invariant
        w = np.sum(R2.max(axis=1, keepdims=True) - np.sort(R2, axis=1), axis=1)
    else:
        w = R2.max(axis=1) - R2.min(axis=1)
    return float(w[0]) if R.ndim == 1 else w


def tuple_labels(outcomes: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Argmax arm (1-based) of each row; ties prefer the observed arm, then the lowest."""
    R = np.atleast_2d(outcomes)
    top = R == R.max(axis=1, keepdims=True)
    rows = np.arange(R.shape[0])
    obs = np.asarray(observed) - 1
    return np.where(top[rows, obs], obs, np.argmax(top, axis=1)) + 1


@dataclass(frozen=True)
class ClassificationInstance:
    subject: int
    tuple: tuple
    features: np.ndarray
    label: int
    weight: float


@dataclass(frozen=True, eq=False)
class Instances:
    """Columnar store of classification instances, sorted by subject.

    ``tuples`` holds one matched subject per arm (``tuples[r, A_i-1] == i``);
    ``features`` are the subject's covariates. ``total_weight`` includes
    dropped zero-weight tuples (which contribute nothing).
    """

    subjects: np.ndarray
    tuples: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    k: int

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[ClassificationInstance]:
        for r in range(len(self)):
            yield ClassificationInstance(
                int(self.subjects[r]), tuple(int(j) for j in self.tuples[r]),
                self.features[r], int(self.labels[r]), float(self.weights[r]))

    def __getitem__(self, r: int) -> ClassificationInstance:
        return ClassificationInstance(
            int(self.subjects[r]), tuple(int(j) for j in self.tuples[r]),
            self.features[r], int(self.labels[r]), float(self.weights[r]))

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    @classmethod
    def from_arrays(cls, features, labels, weights, k: int,
                    subjects: Optional[np.ndarray] = None) -> "Instances":
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=np.int64)
        weights = np.asarray(weights, dtype=float)
        n = len(labels)
        subjects = np.arange(n) if subjects is None else np.asarray(subjects, dtype=np.int64)
        tuples = np.tile(subjects[:, None], (1, k))
        return cls(subjects, tuples, features, labels, weights, k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            p = self.features.shape[1]
            w.writerow(["subject"] + [f"j{a + 1}" for a in range(self.k)]
                       + [f"x{j + 1}" for j in range(p)] + ["label", "weight"])
            for r in range(len(self)):
                w.writerow([int(self.subjects[r])] + self.tuples[r].tolist()
                           + [repr(float(v)) for v in self.features[r]]
                           + [int(self.labels[r]), repr(float(self.weights[r]))])


def build_instances(d: Dataset, ms: MatchedSets, f: WeightingFunction | str = "g1",
                    tuple_cap: int = DEFAULT_TUPLE_CAP, seed: int = 0,
                    drop_zero: bool = True) -> Instances:
    """Enumerate matched tuples per subject and attach labels and weights.

    Each tuple ``j`` of subject ``i`` gets label ``argmax_w R_{j_w}`` and
    weight ``g(R_j) / (n * prod_{w != A_i} |M_i^(w)|)``. When a subject has
    more than ``tuple_cap`` tuples, ``tuple_cap`` of them are drawn uniformly
    without replacement and rescaled so the subject's total weight matches
    full enumeration. Subjects with an empty matched set contribute nothing.
    """
    if not isinstance(f, WeightingFunction):
        f = WeightingFunction(f)
    if tuple_cap < 1:
        raise ValueError("tuple_cap must be positive")
    R = d.require_outcomes()
    A = d.treatments
    n, k = d.n, d.k
    rng = np.random.default_rng(seed)

    subj, tups, labs, wts = [], [], [], []
    for i in range(n):
        sets = ms.neighbors[i]
        sizes = [len(s) for s in sets]
        total = int(np.prod(sizes))
        if total == 0:
            continue
        if total == 1:
            T = np.array([[s[0] for s in sets]], dtype=np.int64)
            w = evaluate_weight(f, R[T]) / n
        else:
            T_all = np.stack(np.meshgrid(*sets, indexing="ij"), axis=-1).reshape(-1, k)
            g_all = evaluate_weight(f, R[T_all])
            if total > tuple_cap:
                pick = np.sort(rng.choice(total, size=tuple_cap, replace=False))
                T = T_all[pick]
                g = g_all[pick]
                full = g_all.sum() / (n * total)
                s = g.sum()
                w = g * (full / s) if s > 0 else np.zeros(len(T))
            else:
                T = T_all
                w = g_all / (n * total)
        y = tuple_labels(R[T], np.full(len(T), A[i]))
        subj.append(np.full(len(T), i))
        tups.append(T)
        labs.append(y)
        wts.append(np.atleast_1d(w))

    if not subj:
        return Instances(np.empty(0, np.int64), np.empty((0, k), np.int64),
                         np.empty((0, d.p)), np.empty(0, np.int64), np.empty(0), k)
    subjects = np.concatenate(subj)
    tuples = np.concatenate(tups)
    labels = np.concatenate(labs)
    weights = np.concatenate(wts).astype(float)
    if drop_zero:
        keep = weights > 0
        subjects, tuples, labels, weights = (subjects[keep], tuples[keep],
                                             labels[keep], weights[keep])
    return Instances(subjects, tuples, d.covariates[subjects], labels, weights, k)
