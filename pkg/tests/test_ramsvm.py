import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmitr import ramsvm
from mmitr.labeling import Instances
from mmitr.ramsvm import (
    DualProblem, KernelSpec, RamsvmModel, SolverError, fit, fit_path, gram, reinforced_loss,
    simplex_vertices,
)
from _oracles import dense_dual, dual_value, projected_gradient, vertices


def random_instances(rng, n, k, p=2, repeat=True):
    """Random weighted instances; with ``repeat`` some subjects carry several rows."""
    subjects = np.sort(rng.integers(0, max(n // 2, 2), size=n)) if repeat else np.arange(n)
    base = rng.normal(size=(subjects.max() + 1, p))
    labels = rng.integers(1, k + 1, size=n)
    labels[:2] = [1, 2]
    weights = rng.uniform(0.1, 1.0, size=n) / n
    return Instances.from_arrays(base[subjects], labels, weights, k, subjects=subjects)


def test_simplex_examples():
    np.testing.assert_allclose(simplex_vertices(2).vertices, [[1.0], [-1.0]], atol=1e-15)
    V = simplex_vertices(3).vertices
    np.testing.assert_allclose(V[0], [0.70710678, 0.70710678], atol=1e-8)
    np.testing.assert_allclose(V[1], [0.25881905, -0.96592583], atol=1e-8)
    np.testing.assert_allclose(V @ V.T, [[1, -.5, -.5], [-.5, 1, -.5], [-.5, -.5, 1]], atol=1e-12)
    with pytest.raises(ValueError):
        simplex_vertices(1)


@pytest.mark.parametrize("k", range(2, 11))
def test_simplex_matches_closed_form_and_equiangular(k):
    V = simplex_vertices(k).vertices
    np.testing.assert_allclose(V, vertices(k), atol=1e-15)
    G = V @ V.T
    off = G[~np.eye(k, dtype=bool)]
    np.testing.assert_allclose(off, -1.0 / (k - 1), atol=1e-12)


def test_reinforced_loss_examples():
    code = simplex_vertices(4)
    for y in range(1, 5):
        assert reinforced_loss(np.zeros(3), y, code, 0.5) == 3.0
        assert reinforced_loss(3 * code.vertices[y - 1], y, code, 0.5) == pytest.approx(0, abs=1e-12)
    u = np.array([0.3, -1.2, 0.8])
    ip = code.vertices @ u
    sum_others = np.sum(np.maximum(1 + np.delete(ip, 1), 0))
    direct = max(3 - ip[1], 0)
    assert reinforced_loss(u, 2, code, 0.0) == pytest.approx(sum_others, rel=1e-15)
    assert reinforced_loss(u, 2, code, 1.0) == pytest.approx(direct, rel=1e-15)


def test_separable_two_instances_linear():
    inst = Instances.from_arrays(np.array([[-2.0], [2.0]]), [1, 2], [0.5, 0.5], 2)
    m = fit(inst, "linear", lam=0.1)
    assert m.predict(inst.features).tolist() == [1, 2]
    assert m.beta[1, 0] < 0  # V1 = +1, so label 1 sits at negative x


def test_errors():
    with pytest.raises(SolverError, match="empty"):
        fit(Instances.from_arrays(np.empty((0, 1)), [], [], 2))
    with pytest.raises(SolverError, match="single-label data"):
        fit(Instances.from_arrays(np.zeros((3, 1)), [2, 2, 2], [1, 1, 1], 3))
    with pytest.raises(ValueError):
        fit(Instances.from_arrays(np.zeros((2, 1)), [1, 2], [1, 1], 2), lam=0)


@pytest.mark.parametrize("seed", range(5))
def test_matches_projected_gradient_k3(seed):
    rng = np.random.default_rng(seed)
    inst = random_instances(rng, 20, 3)
    lam = 0.2
    prob = DualProblem.build(inst, "gaussian")
    m = fit(prob, lam=lam, tol=1e-12, max_sweeps=100000)
    K = gram(prob.kernel, inst.features, inst.features)
    Q, b, ub = dense_dual(K, inst.labels, inst.weights, 3, lam, 0.5)
    ref = dual_value(Q, b, projected_gradient(Q, b, ub))
    ours = dual_value(Q, b, m.alpha.ravel())
    assert abs(ours - ref) <= 1e-4 * abs(ref)
    assert abs(m.dual_objective - ours) <= 1e-10 * abs(ours)


def test_weight_and_lambda_scaling_invariance(rng):
    inst = random_instances(rng, 30, 3)
    scaled = Instances.from_arrays(inst.features, inst.labels, inst.weights * 7.0, 3,
                                   subjects=inst.subjects)
    kern = KernelSpec("gaussian", 1.0)
    a = fit(inst, kern, lam=0.05, tol=1e-12, max_sweeps=100000)
    b = fit(scaled, kern, lam=0.35, tol=1e-12, max_sweeps=100000)
    grid = rng.normal(size=(500, 2))
    np.testing.assert_allclose(b.decision_function(grid), a.decision_function(grid), atol=1e-6)
    assert np.mean(a.predict(grid) == b.predict(grid)) >= 0.99


def make_linear_model(beta, k):
    p = beta.shape[0] - 1
    N = 1
    return RamsvmModel(simplex_vertices(k), KernelSpec("linear"), np.zeros((1, p)),
                       np.zeros((1, k - 1)), np.zeros((N, k)), np.zeros((N, k)),
                       np.ones(N, dtype=np.int64), np.zeros(N, dtype=np.int64), 1.0, 0.5,
                       True, 0, np.empty(0), beta=beta)


def test_predict_tie_and_vertex():
    inst = random_instances(np.random.default_rng(0), 6, 4)
    prob = DualProblem.build(inst, "gaussian")
    zero = fit(prob, lam=1.0, max_sweeps=0)
    assert np.all(zero.alpha == 0)
    assert zero.predict(np.ones((3, 2))).tolist() == [1, 1, 1]
    V = simplex_vertices(4).vertices
    m = make_linear_model(np.vstack([V[2], np.zeros((2, 3))]), 4)
    assert ramsvm.predict(m, np.array([0.3, 0.1])) == 3
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 5)))


def test_linear_two_arm_is_sign_rule(rng):
    inst = random_instances(rng, 40, 2, p=3, repeat=False)
    m = fit(inst, "linear", lam=0.1, tol=1e-10)
    X = rng.normal(size=(200, 3))
    f = m.decision_function(X)[:, 0]
    np.testing.assert_array_equal(m.predict(X), np.where(f >= 0, 1, 2))
    # kernel-form and primal-form scores agree
    np.testing.assert_allclose(gram(m.kernel, X, m.features) @ m.coef, m.decision_function(X),
                               atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 4]), st.sampled_from(["linear", "gaussian"]),
       st.floats(1e-3, 10))
def test_feasible_and_monotone(seed, k, kind, lam):
    rng = np.random.default_rng(seed)
    inst = random_instances(rng, 25, k)
    m = fit(inst, kind, lam=lam, max_sweeps=200)
    assert np.all(m.alpha >= 0) and np.all(m.alpha <= m.upper)
    tr = m.objective_trace
    assert np.all(np.diff(tr) <= 1e-12 * np.maximum(1.0, np.abs(tr[1:])))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations([2, 3, 4]))
def test_label_permutation_equivariance(seed, perm):
    rng = np.random.default_rng(seed)
    inst = random_instances(rng, 30, 4)
    sigma = np.array([0, 1] + list(perm))
    permuted = Instances.from_arrays(inst.features, sigma[inst.labels], inst.weights, 4,
                                     subjects=inst.subjects)
    kern = KernelSpec("gaussian", 1.0)
    a = fit(inst, kern, lam=0.1, tol=1e-12, max_sweeps=100000)
    b = fit(permuted, kern, lam=0.1, tol=1e-12, max_sweeps=100000)
    X = rng.normal(size=(300, 2))
    sa = a.decision_function(X) @ a.code.vertices.T
    clear = np.sort(sa, axis=1)[:, -1] - np.sort(sa, axis=1)[:, -2] > 1e-6
    np.testing.assert_array_equal(b.predict(X)[clear], sigma[a.predict(X)][clear])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5))
def test_gaussian_gram_psd(seed, bw):
    X = np.random.default_rng(seed).normal(size=(15, 3))
    K = gram(KernelSpec("gaussian", bw), X, X)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_beats_constant_rule_mostly():
    wins = 0
    trials = 50
    for seed in range(trials):
        rng = np.random.default_rng(1000 + seed)
        inst = random_instances(rng, 30, 3, repeat=False)
        m = fit(inst, "gaussian", lam=0.01)
        err = np.sum(inst.weights * (m.predict(inst.features) != inst.labels))
        mass = np.bincount(inst.labels, weights=inst.weights, minlength=4)[1:]
        const_err = np.sum(inst.weights) - mass.max()
        wins += err <= const_err + 1e-15
    assert wins >= 0.9 * trials


def test_path_matches_cold_fits(rng):
    inst = random_instances(rng, 30, 3)
    prob = DualProblem.build(inst, "gaussian")
    lams = [1.0, 0.1, 0.01]
    path = fit_path(prob, lams, tol=1e-10, max_sweeps=50000)
    for lam in lams:
        cold = fit(prob, lam=lam, tol=1e-10, max_sweeps=50000)
        assert path[lam].dual_objective == pytest.approx(cold.dual_objective, rel=1e-6)


def test_json_round_trip(rng):
    inst = random_instances(rng, 20, 3)
    m = fit(inst, "gaussian", lam=0.3)
    back = RamsvmModel.from_dict(m.to_dict())
    X = rng.normal(size=(50, 2))
    np.testing.assert_array_equal(back.decision_function(X), m.decision_function(X))
    lin = fit(inst, "linear", lam=0.3)
    back = RamsvmModel.from_dict(lin.to_dict())
    np.testing.assert_array_equal(back.predict(X), lin.predict(X))


def test_median_bandwidth():
    X = np.array([[0.0], [1.0], [3.0]])
    assert ramsvm.median_bandwidth(X) == 2.0
    assert ramsvm.median_bandwidth(np.zeros((4, 2))) == 1.0


def test_sweep_cap_flags_not_fails(rng):
    inst = random_instances(rng, 30, 3)
    m = fit(inst, "gaussian", lam=1e-4, tol=1e-14, max_sweeps=3)
    assert not m.converged and m.n_sweeps == 3
