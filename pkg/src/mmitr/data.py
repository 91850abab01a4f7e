"""Domain types, validation and delimited-text ingestion."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

ROLES = ("covariate", "treatment", "outcome", "time", "event", "optimal", "gps")


class DataError(ValueError):
    """Raised when an input table or dataset violates its contract."""


def _frozen(a: Optional[np.ndarray], dtype) -> Optional[np.ndarray]:
    if a is None:
        return None
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Standardizer:
    """Column-wise centring/scaling fitted on one sample, reusable on others."""

    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if X.shape[0] < 2:
            raise DataError("standardization needs at least 2 rows")
        mean = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1)
        # rounding in the mean can leave a small nonzero sd on an all-equal column
        constant = np.all(X == X[0], axis=0) | ~(sd > 0)
        mean = np.where(constant, 0.0, mean)
        scale = np.where(constant, 1.0, sd)
        return cls(mean=mean, scale=scale, constant=constant)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Standardizer":
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            constant=np.asarray(d["constant"], dtype=bool),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, dense treatment labels in 1..k and outcome/survival data.

    Arrays are copied and made read-only on construction. ``outcomes`` may be
    left unset for survival data until imputation fills it in.
    """

    covariates: np.ndarray
    treatments: np.ndarray
    k: int
    outcomes: Optional[np.ndarray] = None
    time: Optional[np.ndarray] = None
    event: Optional[np.ndarray] = None
    optimal_arms: Optional[np.ndarray] = None
    gps: Optional[np.ndarray] = None
    arm_labels: tuple = ()
    covariate_names: tuple = ()
    standardizer: Optional[Standardizer] = None

    def __post_init__(self):
        X = _frozen(self.covariates, float)
        if X.ndim != 2:
            raise DataError(f"covariates must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain non-finite values")
        A = np.asarray(self.treatments)
        if A.shape != (n,):
            raise DataError(f"treatments must have length {n}")
        if not np.all(A == np.round(A)):
            raise DataError("treatment labels must be integers")
        A = _frozen(A, np.int64)
        k = int(self.k)
        if k < 2:
            raise DataError(f"arm count k must be >= 2, got {k}")
        bad = np.flatnonzero((A < 1) | (A > k))
        if bad.size:
            raise DataError(
                f"row {bad[0]}: treatment label {A[bad[0]]} outside 1..{k}"
            )
        missing = sorted(set(range(1, k + 1)) - set(np.unique(A).tolist()))
        if missing:
            raise DataError(f"arm(s) {missing} have no subjects")

        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatments", A)
        object.__setattr__(self, "k", k)

        R = _frozen(self.outcomes, float)
        if R is not None:
            if R.shape != (n,):
                raise DataError(f"outcomes must have length {n}")
            if not np.all(np.isfinite(R)):
                raise DataError("outcomes contain non-finite values")
        object.__setattr__(self, "outcomes", R)

        T = _frozen(self.time, float)
        E = _frozen(self.event, np.int64)
        if (T is None) != (E is None):
            raise DataError("survival data needs both time and event")
        if T is not None:
            if T.shape != (n,) or E.shape != (n,):
                raise DataError(f"time/event must have length {n}")
            if not np.all(np.isfinite(T)) or np.any(T < 0):
                raise DataError("survival times must be finite and >= 0")
            if not np.all((E == 0) | (E == 1)):
                raise DataError("event indicator must be 0 or 1")
        object.__setattr__(self, "time", T)
        object.__setattr__(self, "event", E)

        opt = _frozen(self.optimal_arms, np.int64)
        if opt is not None and (opt.shape != (n,) or np.any((opt < 1) | (opt > k))):
            raise DataError("optimal_arms must be length-n labels in 1..k")
        object.__setattr__(self, "optimal_arms", opt)

        G = _frozen(self.gps, float)
        if G is not None and G.shape != (n, k):
            raise DataError(f"gps must have shape ({n}, {k})")
        object.__setattr__(self, "gps", G)

        labels = tuple(self.arm_labels) or tuple(str(a) for a in range(1, k + 1))
        if len(labels) != k:
            raise DataError("arm_labels must have k entries")
        object.__setattr__(self, "arm_labels", labels)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError("covariate_names must have p entries")
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def has_survival(self) -> bool:
        return self.time is not None

    def with_outcomes(self, outcomes: np.ndarray) -> "Dataset":
        return replace(self, outcomes=outcomes)

    def with_covariates(self, covariates: np.ndarray, **changes) -> "Dataset":
        return replace(self, covariates=covariates, **changes)

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)

        def take(a):
            return None if a is None else a[idx]

        return replace(
            self,
            covariates=self.covariates[idx],
            treatments=self.treatments[idx],
            outcomes=take(self.outcomes),
            time=take(self.time),
            event=take(self.event),
            optimal_arms=take(self.optimal_arms),
            gps=take(self.gps),
        )

    def require_outcomes(self) -> np.ndarray:
        if self.outcomes is None:
            raise DataError("dataset has no outcomes (impute survival data first)")
        return self.outcomes


class Rule:
    """A treatment rule mapping covariate rows to labels in 1..k.

    Wraps either a fitted classifier (anything with ``predict``) or a plain
    function of the covariate matrix. An optional standardizer is applied to
    raw covariates before the model sees them.
    """

    def __init__(self, model, k: int, standardizer: Optional[Standardizer] = None,
                 name: str = "rule"):
        self.model = model
        self.k = int(k)
        self.standardizer = standardizer
        self.name = name

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], k: int,
                      name: str = "function") -> "Rule":
        return cls(fn, k, name=name)

    @classmethod
    def constant(cls, arm: int, k: int) -> "Rule":
        return cls.from_function(lambda X: np.full(len(X), arm, dtype=np.int64), k,
                                 name=f"constant-{arm}")

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        if hasattr(self.model, "predict"):
            out = self.model.predict(X)
        else:
            out = self.model(X)
        out = np.asarray(out, dtype=np.int64)
        if np.any((out < 1) | (out > self.k)):
            raise ValueError("rule produced a label outside 1..k")
        return out

    __call__ = predict


@dataclass
class Schema:
    """Column-role map for delimited files, plus optional declared arm count."""

    columns: dict = field(default_factory=dict)
    k: Optional[int] = None
    delimiter: str = ","

    def __post_init__(self):
        for col, role in self.columns.items():
            if role not in ROLES:
                raise DataError(f"column {col!r}: unknown role {role!r}")

    def names(self, role: str) -> list:
        return [c for c, r in self.columns.items() if r == role]

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        if "columns" in d:
            extra = set(d) - {"columns", "k", "delimiter"}
            if extra:
                raise DataError(f"unknown schema keys: {sorted(extra)}")
            return cls(dict(d["columns"]), d.get("k"), d.get("delimiter", ","))
        return cls(dict(d))

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {"columns": dict(self.columns), "delimiter": self.delimiter}
        if self.k is not None:
            out["k"] = self.k
        return out


def _sort_labels(labels: Sequence[str]) -> list:
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def load_dataset(path, schema: Schema | Mapping, k: Optional[int] = None) -> Dataset:
    """Read a delimited text file with a header row into a validated Dataset.

    Lines starting with ``#`` are comments. Treatment labels are remapped to
    dense ``1..k`` by sorted order; the original labels are kept in
    ``Dataset.arm_labels``. If ``k`` is declared (argument or schema), labels
    must already be integers in ``1..k``.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_dict(schema)
    k = k if k is not None else schema.k
    path = Path(path)
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines, delimiter=schema.delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    rows = list(reader)

    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    col_index = {c: header.index(c) for c in schema.columns}

    def numeric(col: str) -> np.ndarray:
        j = col_index[col]
        out = np.empty(len(rows))
        for r, row in enumerate(rows):
            cell = row[j].strip() if j < len(row) else ""
            try:
                out[r] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {r + 1}, column {col!r}: non-numeric value {cell!r}"
                ) from None
            if not np.isfinite(out[r]):
                raise DataError(f"{path}: row {r + 1}, column {col!r}: non-finite value")
        return out

    treat_cols = schema.names("treatment")
    if len(treat_cols) != 1:
        raise DataError("schema must name exactly one treatment column")
    tcol = treat_cols[0]
    raw = []
    for r, row in enumerate(rows):
        cell = row[col_index[tcol]].strip() if col_index[tcol] < len(row) else ""
        if cell == "":
            raise DataError(f"{path}: row {r + 1}, column {tcol!r}: empty treatment")
        raw.append(cell)

    if k is not None:
        vals = []
        for r, cell in enumerate(raw):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r + 1}: non-numeric treatment {cell!r}") from None
            if v != int(v) or not 1 <= v <= k:
                raise DataError(
                    f"{path}: row {r + 1}: treatment label {cell!r} outside 1..{k}"
                )
            vals.append(int(v))
        A = np.array(vals, dtype=np.int64)
        empty = sorted(set(range(1, k + 1)) - set(vals))
        if empty:
            raise DataError(f"{path}: arm(s) {empty} have no subjects")
        labels = tuple(str(a) for a in range(1, k + 1))
    else:
        labels = tuple(_sort_labels(sorted(set(raw))))
        lookup = {lab: i + 1 for i, lab in enumerate(labels)}
        A = np.array([lookup[c] for c in raw], dtype=np.int64)
        k = len(labels)
        if k < 2:
            raise DataError(f"{path}: only one treatment arm present (single-label data)")

    cov_cols = schema.names("covariate")
    if not cov_cols:
        raise DataError("schema names no covariate columns")
    X = np.column_stack([numeric(c) for c in cov_cols]) if rows else np.empty((0, len(cov_cols)))

    def single(role):
        cols = schema.names(role)
        if len(cols) > 1:
            raise DataError(f"schema names more than one {role} column")
        return numeric(cols[0]) if cols else None

    gps_cols = schema.names("gps")
    gps = np.column_stack([numeric(c) for c in gps_cols]) if gps_cols else None
    opt = single("optimal")
    return Dataset(
        covariates=X,
        treatments=A,
        k=k,
        outcomes=single("outcome"),
        time=single("time"),
        event=single("event"),
        optimal_arms=None if opt is None else opt.astype(np.int64),
        gps=gps,
        arm_labels=labels,
        covariate_names=tuple(cov_cols),
    )


def dataset_schema(d: Dataset) -> Schema:
    """The schema under which :func:`save_dataset` writes ``d``."""
    cols = {name: "covariate" for name in d.covariate_names}
    cols["a"] = "treatment"
    if d.outcomes is not None:
        cols["r"] = "outcome"
    if d.time is not None:
        cols["time"] = "time"
        cols["event"] = "event"
    if d.optimal_arms is not None:
        cols["opt"] = "optimal"
    if d.gps is not None:
        for w in range(d.k):
            cols[f"gps{w + 1}"] = "gps"
    return Schema(cols)


def save_dataset(d: Dataset, path, header: Optional[str] = None) -> Schema:
    """Write ``d`` as comma-separated text; floats use ``repr`` for exact round trips."""
    schema = dataset_schema(d)
    columns = []
    for name, role in schema.columns.items():
        if role == "covariate":
            columns.append([repr(float(v)) for v in d.covariates[:, d.covariate_names.index(name)]])
        elif role == "treatment":
            columns.append([d.arm_labels[a - 1] for a in d.treatments])
        elif role == "outcome":
            columns.append([repr(float(v)) for v in d.outcomes])
        elif role == "time":
            columns.append([repr(float(v)) for v in d.time])
        elif role == "event":
            columns.append([str(int(v)) for v in d.event])
        elif role == "optimal":
            columns.append([str(int(v)) for v in d.optimal_arms])
        elif role == "gps":
            w = int(name[3:]) - 1
            columns.append([repr(float(v)) for v in d.gps[:, w]])
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(schema.columns))
        writer.writerows(zip(*columns))
    return schema


def standardize_covariates(d: Dataset, standardizer: Optional[Standardizer] = None) -> Dataset:
    """Centre and scale covariates to sample mean 0, SD 1.

    Constant columns are left unchanged and flagged in
    ``result.standardizer.constant``. Pass a fitted ``standardizer`` to apply
    training parameters to another sample.
    """
    st = standardizer if standardizer is not None else Standardizer.fit(d.covariates)
    return d.with_covariates(st.transform(d.covariates), standardizer=st)
