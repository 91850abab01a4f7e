"""Random survival forest with log-rank splitting and mean-residual-life imputation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .data import Dataset

CAP_EPS = 1e-10


def nelson_aalen(time: np.ndarray, event: np.ndarray, grid: Optional[np.ndarray] = None,
                 weights: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Nelson-Aalen cumulative hazard evaluated at each point of ``grid``.

    ``grid`` defaults to the distinct event times. ``weights`` are case
    multiplicities (e.g. bootstrap counts).
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    w = np.ones(len(time)) if weights is None else np.asarray(weights, dtype=float)
    if grid is None:
        grid = np.unique(time[event])
    grid = np.asarray(grid, dtype=float)
    ti = np.searchsorted(grid, time, side="right") - 1
    return grid, _hazard_from_index(ti, event, w, len(grid))


def _hazard_from_index(ti, ev, w, G):
    ok = ti >= 0
    d = np.bincount(ti[ev & ok], weights=w[ev & ok], minlength=G)[:G]
    # at risk at grid point g iff T_i >= grid[g] iff ti >= g
    at = np.bincount(ti[ok], weights=w[ok], minlength=G)[:G]
    Y = np.cumsum(at[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = np.where(Y > 0, d / Y, 0.0)
    return np.cumsum(inc)


def _logrank(pos, e_loc, ev, w, masks, D):
    """|log-rank statistic| for each left-group mask (rows of ``masks``)."""
    n_cut = masks.shape[0]
    at_tot = np.bincount(pos, weights=w, minlength=D + 1)
    Y = np.cumsum(at_tot[::-1])[::-1][1:]   # at risk at local event time j: pos > j
    evw = w * ev
    d = np.bincount(e_loc[ev], weights=w[ev], minlength=D)
    rows, cols = np.nonzero(masks)
    at_L = np.bincount(rows * (D + 1) + pos[cols], weights=w[cols],
                       minlength=n_cut * (D + 1)).reshape(n_cut, D + 1)
    YL = np.cumsum(at_L[:, ::-1], axis=1)[:, ::-1][:, 1:]
    evm = ev[cols]
    dL = np.bincount((rows * D + e_loc[cols])[evm], weights=evw[cols][evm],
                     minlength=n_cut * D).reshape(n_cut, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(Y > 0, YL / Y, 0.0)
        num = np.sum(dL - frac * d, axis=1)
        vfac = np.where(Y > 1, (Y - d) / (Y - 1) * d, 0.0)
        var = np.sum(frac * (1 - frac) * vfac, axis=1)
        stat = np.where(var > 0, np.abs(num) / np.sqrt(var), -np.inf)
    return stat


@dataclass
class _Tree:
    feature: np.ndarray      # -1 for leaves; p means the treatment variable
    threshold: np.ndarray
    left_arms: list          # frozenset of arms sent left for treatment splits
    left: np.ndarray
    right: np.ndarray
    leaf_index: np.ndarray   # position in the tree's hazard table, -1 for internal nodes
    survival: Optional[np.ndarray] = None  # (n_leaves, G), exp(-H)

    def apply(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            nd = node[idx]
            f = self.feature[nd]
            go_left = np.empty(len(idx), dtype=bool)
            cov = f < X.shape[1]
            go_left[cov] = X[idx[cov], f[cov]] <= self.threshold[nd[cov]]
            for t in np.flatnonzero(~cov):
                go_left[t] = A[idx[t]] in self.left_arms[nd[t]]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.leaf_index[node]


@dataclass
class SurvivalForest:
    """Ensemble of log-rank survival trees over (covariates, treatment arm).

    Tree structure is grown on a bootstrap sample; each leaf then stores the
    Nelson-Aalen estimate of all training cases that fall into it.
    """

    trees: list
    grid: np.ndarray
    n_trees: int
    mtry: int
    min_node: int
    n_split: int
    seed: int
    p: int
    k: int

    def survival_matrix(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        """Ensemble S(t_g | x, a) on the event-time grid, shape (n, G)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = np.asarray(A, dtype=np.int64)
        S = np.zeros((len(X), len(self.grid)))
        for tree in self.trees:
            S += tree.survival[tree.apply(X, A)]
        return S / len(self.trees)

    def survival(self, t, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        """S(t | x_i, a_i) for each row; ``t`` is scalar or per-row."""
        S = self.survival_matrix(X, A)
        t = np.broadcast_to(np.asarray(t, dtype=float), (S.shape[0],))
        return _step_eval(self.grid, S, t)


def _step_eval(grid, S, t):
    g = np.searchsorted(grid, t, side="right") - 1
    rows = np.arange(S.shape[0])
    return np.where(g >= 0, S[rows, np.maximum(g, 0)], 1.0)


def _grow_tree(X, A, ti, ev, counts, rng, mtry, min_node, n_split, k):
    n, p = X.shape
    feature, threshold, left_arms, left, right = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left_arms.append(None)
        left.append(-1)
        right.append(-1)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.flatnonzero(counts > 0))]
    while stack:
        node, idx = stack.pop()
        w = counts[idx].astype(float)
        size = w.sum()
        if size < 2 * min_node:
            continue
        evn = ev[idx]
        if not np.any(evn):
            continue
        u = np.unique(ti[idx][evn])
        D = len(u)
        pos = np.searchsorted(u, ti[idx], side="right")
        e_loc = np.minimum(np.searchsorted(u, ti[idx]), D - 1)

        best = (-np.inf, None, None)
        for f in rng.choice(p + 1, size=min(mtry, p + 1), replace=False):
            if f < p:
                x = X[idx, f]
                vals = np.unique(x)
                if len(vals) < 2:
                    continue
                cuts = vals[:-1]
                order = np.argsort(x, kind="stable")
                cw = np.cumsum(w[order])
                n_left = cw[np.searchsorted(x[order], cuts, side="right") - 1]
                ok = (n_left >= min_node) & (size - n_left >= min_node)
                cuts = cuts[ok]
                if cuts.size == 0:
                    continue
                if n_split and cuts.size > n_split:
                    cuts = np.sort(rng.choice(cuts, size=n_split, replace=False))
                masks = x[None, :] <= cuts[:, None]
                cands = [(f, c, None) for c in cuts]
            else:
                arms = np.unique(A[idx])
                if len(arms) < 2:
                    continue
                rest = arms[1:]
                parts = []
                for r in range(0, len(rest)):
                    for combo in combinations(rest, r):
                        if len(combo) + 1 < len(arms):
                            parts.append(frozenset((arms[0],) + combo))
                masks = np.array([np.isin(A[idx], list(s)) for s in parts])
                nl = masks @ w
                ok = (nl >= min_node) & (size - nl >= min_node)
                masks = masks[ok]
                cands = [(f, np.nan, s) for s, keep in zip(parts, ok) if keep]
                if not cands:
                    continue
            stats = _logrank(pos, e_loc, evn, w, masks, D)
            j = int(np.argmax(stats))
            if stats[j] > best[0]:
                best = (stats[j], cands[j], masks[j])
        if best[1] is None or not np.isfinite(best[0]):
            continue
        f, c, s = best[1]
        mask = best[2]
        feature[node] = int(f)
        threshold[node] = float(c)
        left_arms[node] = s
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        stack.append((r, idx[~mask]))
        stack.append((l, idx[mask]))

    feature = np.array(feature, dtype=np.int64)
    leaf_index = np.full(len(feature), -1, dtype=np.int64)
    leaves = np.flatnonzero(feature < 0)
    leaf_index[leaves] = np.arange(len(leaves))
    return _Tree(feature, np.array(threshold), left_arms, np.array(left, dtype=np.int64),
                 np.array(right, dtype=np.int64), leaf_index)


def fit_survival_forest(d: Dataset, n_trees: int = 200, mtry: Optional[int] = None,
                        min_node: int = 15, seed: int = 0, n_split: int = 10) -> SurvivalForest:
    """Grow ``n_trees`` log-rank survival trees on bootstrap samples.

    At each node ``mtry`` candidates are drawn from the p covariates plus the
    treatment arm (split as a two-group partition of arms). Up to ``n_split``
    random cut points are tried per covariate (0 tries every admissible cut).
    Children must hold at least ``min_node`` bootstrap cases.
    """
    if not d.has_survival:
        raise ValueError("dataset has no survival fields")
    ev = d.event.astype(bool)
    if not np.any(ev):
        raise ValueError("survival forest needs at least one event")
    p = d.p
    mtry = int(math.ceil(math.sqrt(p + 1))) if mtry is None else int(mtry)
    grid = np.unique(d.time[ev])
    ti = np.searchsorted(grid, d.time, side="right") - 1
    X = d.covariates
    A = d.treatments
    n = d.n
    ones = np.ones(n)
    trees = []
    for seq in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(seq)
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        tree = _grow_tree(X, A, ti, ev, counts, rng, mtry, min_node, n_split, d.k)
        leaf = tree.apply(X, A)
        n_leaves = int(tree.leaf_index.max()) + 1
        surv = np.empty((n_leaves, len(grid)))
        for j in range(n_leaves):
            members = leaf == j
            H = _hazard_from_index(ti[members], ev[members], ones[members], len(grid))
            surv[j] = np.exp(-H)
        tree.survival = surv
        trees.append(tree)
    return SurvivalForest(trees, grid, n_trees, mtry, min_node, n_split, seed, p, d.k)


@dataclass(frozen=True)
class ImputedOutcome:
    subject: int
    R: float
    source: str  # observed | imputed | capped


def residual_integral(grid: np.ndarray, S: np.ndarray, T: float, tau: float) -> float:
    """Exact integral of the right-continuous step function S over [T, tau]."""
    if tau <= T:
        return 0.0
    inside = grid[(grid > T) & (grid < tau)]
    knots = np.concatenate([[T], inside, [tau]])
    vals = _step_eval(grid, np.broadcast_to(S, (len(knots) - 1, len(S))), knots[:-1])
    return float(np.sum(vals * np.diff(knots)))


def mean_residual_impute(forest: SurvivalForest, d: Dataset, tau: float) -> list:
    """Replace censored times by ``T + int_T^tau S(t) dt / S(T)`` under the forest.

    Event subjects keep ``R = T``. When ``S(T)`` is below 1e-10 the reward is
    left at ``T`` and tagged ``capped``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    T = d.time
    ev = d.event.astype(bool)
    out = [None] * d.n
    cens = np.flatnonzero(~ev)
    for i in np.flatnonzero(ev):
        out[i] = ImputedOutcome(int(i), float(T[i]), "observed")
    if cens.size:
        S = forest.survival_matrix(d.covariates[cens], d.treatments[cens])
        ST = _step_eval(forest.grid, S, T[cens])
        for row, i in enumerate(cens):
            if ST[row] < CAP_EPS:
                out[i] = ImputedOutcome(int(i), float(T[i]), "capped")
                continue
            integral = residual_integral(forest.grid, S[row], float(T[i]), tau)
            R = min(float(T[i]) + integral / ST[row], max(tau, float(T[i])))
            out[i] = ImputedOutcome(int(i), R, "imputed")
    return out


def impute_dataset(d: Dataset, tau: float, n_trees: int = 200, mtry: Optional[int] = None,
                   min_node: int = 15, seed: int = 0, n_split: int = 10) -> Dataset:
    """Fit a forest on ``d`` and return ``d`` with imputed outcomes filled in."""
    forest = fit_survival_forest(d, n_trees=n_trees, mtry=mtry, min_node=min_node,
                                 seed=seed, n_split=n_split)
    imputed = mean_residual_impute(forest, d, tau)
    return d.with_outcomes(np.array([o.R for o in imputed]))
