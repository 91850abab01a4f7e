import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmitr.data import (
    Dataset, DataError, Rule, Schema, Standardizer, load_dataset, save_dataset,
    standardize_covariates,
)
from mmitr.simulation import ScenarioConfig, generate_survival


def write(path, text):
    path.write_text(text)
    return path


SCHEMA = {"x1": "covariate", "x2": "covariate", "a": "treatment", "r": "outcome"}


def test_three_row_file(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0.1,1,1,2.0\n0.2,2,2,3.0\n0.3,3,3,4.0\n")
    d = load_dataset(f, SCHEMA)
    assert d.n == 3 and d.k == 3 and d.p == 2
    assert d.treatments.tolist() == [1, 2, 3]
    assert d.outcomes.tolist() == [2.0, 3.0, 4.0]


def test_label_outside_declared_k_names_row(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0,0,1,0\n0,0,2,0\n0,0,3,0\n0,0,4,0\n0,0,5,0\n")
    with pytest.raises(DataError, match="row 5"):
        load_dataset(f, Schema(SCHEMA, k=4))


def test_labels_relabeled_dense(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0,0,10,0\n1,0,30,1\n2,0,20,2\n3,1,10,3\n")
    d = load_dataset(f, SCHEMA)
    assert d.arm_labels == ("10", "20", "30")
    assert d.treatments.tolist() == [1, 3, 2, 1]


def test_missing_column(tmp_path):
    f = write(tmp_path / "d.csv", "x1,a,r\n0,1,0\n0,2,0\n")
    with pytest.raises(DataError, match="x2"):
        load_dataset(f, SCHEMA)


def test_non_numeric_cell_names_row_and_column(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0,0,1,0\n0,abc,2,0\n")
    with pytest.raises(DataError, match=r"row 2.*x2|x2.*row 2"):
        load_dataset(f, SCHEMA)


def test_empty_cell_rejected(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0,,1,0\n0,1,2,0\n")
    with pytest.raises(DataError):
        load_dataset(f, SCHEMA)


def test_declared_arm_without_subjects(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0,0,1,0\n0,1,2,0\n")
    with pytest.raises(DataError, match="3"):
        load_dataset(f, Schema(SCHEMA, k=3))


def test_single_arm_file(tmp_path):
    f = write(tmp_path / "d.csv", "x1,x2,a,r\n0,0,1,0\n0,1,1,0\n")
    with pytest.raises(DataError, match="single-label data"):
        load_dataset(f, SCHEMA)


def test_survival_schema_round_trip(tmp_path):
    cfg = ScenarioConfig(outcome="survival", n=200)
    base = generate_survival(cfg, np.random.default_rng(1))
    X = np.column_stack([base.covariates, np.random.default_rng(2).normal(size=(200, 8))])
    d = Dataset(X, base.treatments, 4, time=base.time, event=base.event)
    path = tmp_path / "hcc.csv"
    schema = save_dataset(d, path)
    back = load_dataset(path, schema)
    assert back.p == 14 and back.has_survival and back.outcomes is None
    np.testing.assert_array_equal(back.covariates, d.covariates)
    np.testing.assert_array_equal(back.time, d.time)
    np.testing.assert_array_equal(back.event, d.event)


def test_dataset_invariants():
    X = np.zeros((3, 1))
    with pytest.raises(DataError):
        Dataset(X, [1, 2, 2], 3)
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan], [0], [1]]), [1, 2, 3], 3)
    with pytest.raises(DataError):
        Dataset(X, [1, 2, 3], 3, outcomes=[0, np.inf, 1])
    with pytest.raises(DataError):
        Dataset(X, [1, 2, 3], 3, time=[0, -1, 1], event=[0, 1, 1])
    d = Dataset(X, [1, 2, 3], 3)
    with pytest.raises(ValueError):
        d.covariates[0, 0] = 1.0


def test_standardize_examples():
    d = Dataset(np.array([[1.0, 2.0], [2.0, 2.0], [3.0, 2.0]]), [1, 2, 3], 3)
    s = standardize_covariates(d)
    np.testing.assert_allclose(s.covariates[:, 0], [-1.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_array_equal(s.covariates[:, 1], [2.0, 2.0, 2.0])
    assert s.standardizer.constant.tolist() == [False, True]


def test_standardize_idempotent(rng):
    d = Dataset(rng.normal(size=(30, 3)), np.resize([1, 2, 3], 30), 3)
    once = standardize_covariates(d)
    twice = standardize_covariates(once)
    np.testing.assert_allclose(twice.covariates, once.covariates, atol=1e-12)


def test_standardizer_serializes(rng):
    st_ = Standardizer.fit(rng.normal(size=(20, 2)))
    back = Standardizer.from_dict(st_.to_dict())
    X = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(back.transform(X), st_.transform(X))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(4, 30), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_standardization_moments(X):
    k = 2
    A = np.resize([1, 2], X.shape[0])
    d = standardize_covariates(Dataset(X, A, k))
    for j in range(X.shape[1]):
        col = d.covariates[:, j]
        if d.standardizer.constant[j]:
            np.testing.assert_array_equal(col, X[:, j])
        else:
            assert abs(col.mean()) < 1e-10
            assert abs(col.std(ddof=1) - 1) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 25), st.integers(1, 4), st.booleans())
def test_round_trip_bit_exact(tmp_path_factory, seed, n, p, surv):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * 10.0 ** rng.integers(-8, 8, size=p)
    A = np.concatenate([[1, 2, 3], rng.integers(1, 4, size=n - 3)])
    kw = {"outcomes": rng.standard_cauchy(size=n), "optimal_arms": rng.integers(1, 4, size=n)}
    if surv:
        kw.update(time=rng.exponential(size=n), event=rng.integers(0, 2, size=n))
    d = Dataset(X, A, 3, **kw)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    schema = save_dataset(d, path, header="note")
    back = load_dataset(path, schema)
    for name in ("covariates", "treatments", "outcomes", "time", "event", "optimal_arms"):
        a, b = getattr(d, name), getattr(back, name)
        if a is None:
            assert b is None
        else:
            assert a.tobytes() == b.tobytes()


def test_rule_wrappers():
    r = Rule.constant(2, 3)
    assert r.predict(np.zeros((4, 2))).tolist() == [2, 2, 2, 2]
    bad = Rule.from_function(lambda X: np.full(len(X), 7), 3)
    with pytest.raises(ValueError):
        bad.predict(np.zeros((1, 1)))
