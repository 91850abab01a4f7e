"""Nearest-neighbour matching with replacement across treatment arms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .gps import GpsModel

COND_LIMIT = 1e10


def mahalanobis_distance(x1, x2, inv_cov) -> float:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    inv_cov = np.asarray(inv_cov, dtype=float)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2)) and np.all(np.isfinite(inv_cov))):
        raise ValueError("mahalanobis_distance: non-finite input")
    diff = x1 - x2
    q = float(diff @ inv_cov @ diff)
    return float(np.sqrt(max(q, 0.0)))


def pooled_inverse_covariance(X: np.ndarray) -> np.ndarray:
    """Inverse of the pooled sample covariance, ridged when ill-conditioned."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    S = np.atleast_2d(np.cov(X, rowvar=False))
    cond = np.linalg.cond(S) if np.all(np.isfinite(S)) else np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        ridge = 1e-8 * np.trace(S) / p
        S = S + max(ridge, 1e-12) * np.eye(p)
    inv = np.linalg.inv(S)
    return 0.5 * (inv + inv.T)


@dataclass(frozen=True)
class MatchedSets:
    """For each subject ``i`` and arm ``w``: matched indices and distances.

    ``neighbors[i][w-1]`` is an int array sorted by distance (ties by lower
    index). For ``w == A_i`` it is ``[i]`` with distance 0.
    """

    neighbors: tuple
    distances: tuple
    treatments: np.ndarray
    k: int
    m: int
    metric: str

    @property
    def n(self) -> int:
        return len(self.neighbors)

    def matched(self, i: int, w: int) -> np.ndarray:
        return self.neighbors[i][w - 1]

    def set_sizes(self) -> np.ndarray:
        return np.array([[len(s) for s in row] for row in self.neighbors])

    def to_records(self) -> list:
        out = []
        for i in range(self.n):
            for w in range(1, self.k + 1):
                if w == self.treatments[i]:
                    continue
                out.append({
                    "subject": i,
                    "arm": w,
                    "neighbors": self.neighbors[i][w - 1].tolist(),
                    "distances": self.distances[i][w - 1].tolist(),
                })
        return out

    def to_dict(self) -> dict:
        return {"metric": self.metric, "m": self.m, "k": self.k,
                "matches": self.to_records()}


def _embedding(d: Dataset, metric) -> tuple[np.ndarray, str]:
    """Rows in a space where Euclidean distance equals the requested metric."""
    if isinstance(metric, GpsModel):
        return metric.predict(d.covariates), "gps"
    if metric == "mahalanobis":
        inv = pooled_inverse_covariance(d.covariates)
        L = np.linalg.cholesky(inv)
        return d.covariates @ L, "mahalanobis"
    if metric == "euclidean":
        return np.asarray(d.covariates, dtype=float), "euclidean"
    raise ValueError(f"unknown metric {metric!r}")


def build_matched_sets(d: Dataset, metric="mahalanobis", m: int = 1,
                       caliper: Optional[float] = None) -> MatchedSets:
    """Match every subject to its ``m`` nearest neighbours in each other arm.

    ``metric`` is ``"mahalanobis"`` (pooled covariance of the given
    covariates), ``"euclidean"`` or a fitted :class:`GpsModel`, in which case
    the distance is Euclidean between clipped GPS vectors. Matching is with
    replacement. With ``caliper`` set, matches farther than it are dropped
    and a set may come back empty.
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    A = d.treatments
    for w in range(1, d.k + 1):
        size = int(np.sum(A == w))
        if size < m:
            raise ValueError(f"arm {w} has {size} subjects, fewer than m={m}")
    Z, tag = _embedding(d, metric)
    n = d.n
    neigh = [[None] * d.k for _ in range(n)]
    dist = [[None] * d.k for _ in range(n)]
    for i in range(n):
        neigh[i][A[i] - 1] = np.array([i], dtype=np.int64)
        dist[i][A[i] - 1] = np.zeros(1)
    for w in range(1, d.k + 1):
        cand = np.flatnonzero(A == w)
        others = np.flatnonzero(A != w)
        if others.size == 0:
            continue
        D = cdist(Z[others], Z[cand])
        # stable sort on candidates listed by increasing index gives the tie rule
        order = np.argsort(D, axis=1, kind="stable")[:, :m]
        for row, i in enumerate(others):
            sel = order[row]
            dd = D[row, sel]
            idx = cand[sel]
            if caliper is not None:
                keep = dd <= caliper
                idx, dd = idx[keep], dd[keep]
            neigh[i][w - 1] = idx.astype(np.int64)
            dist[i][w - 1] = dd
    return MatchedSets(
        neighbors=tuple(tuple(r) for r in neigh),
        distances=tuple(tuple(r) for r in dist),
        treatments=A,
        k=d.k,
        m=m,
        metric=tag,
    )
