import math

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.svm import OneClassSVM as SkOneClassSVM

from adaas.errors import ConvergenceError
from adaas.ocsvm import OneClassSVM, rbf_kernel, solve_dual


@pytest.mark.parametrize("nu", [0.05, 0.2, 0.5])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_sklearn(nu, seed):
    rng = np.random.default_rng(seed)
    X, T = rng.normal(size=(80, 3)), 1.5 * rng.normal(size=(50, 3))
    ours = OneClassSVM(nu=nu, gamma=0.5, standardize=False).fit(X)
    ref = SkOneClassSVM(nu=nu, gamma=0.5, tol=1e-3).fit(X)
    np.testing.assert_allclose(ours.decision_function(T), ref.decision_function(T), atol=5e-3)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.3, 0.7]))
def test_dual_objective_matches_qp_solver(seed, nu):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 2))
    Q = rbf_kernel(X, X, 0.5)
    alpha, _, _, _ = solve_dual(Q, nu, eps=1e-6)
    assert np.all(alpha >= 0) and np.all(alpha <= 1)
    assert alpha.sum() == pytest.approx(nu * len(X))
    a = cp.Variable(len(X))
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(a, cp.psd_wrap(Q))),
                      [a >= 0, a <= 1, cp.sum(a) == nu * len(X)])
    prob.solve()
    ours = 0.5 * alpha @ Q @ alpha
    assert ours <= prob.value + 1e-5 * max(1.0, abs(prob.value))


def test_two_point_closed_form():
    # nu = 0.5 on two points: the symmetric optimum is alpha = (1/2, 1/2), rho = (1 + k) / 2
    X = np.array([[0.0], [1.0]])
    m = OneClassSVM(nu=0.5, gamma=1.0, standardize=False, eps=1e-9).fit(X)
    k = math.exp(-1.0)
    np.testing.assert_allclose(m.alpha_, [0.5, 0.5], atol=1e-8)
    assert m.rho_ == pytest.approx((1 + k) / 2)
    np.testing.assert_allclose(m.decision_function(X), [0.0, 0.0], atol=1e-8)


def test_nu_one_puts_every_alpha_at_bound():
    X = np.array([[0.0], [1.0], [3.0]])
    m = OneClassSVM(nu=1.0, gamma=1.0, standardize=False).fit(X)
    np.testing.assert_array_equal(m.alpha_, [1.0, 1.0, 1.0])
    assert math.isfinite(m.rho_)


def test_cluster_versus_far_point():
    rng = np.random.default_rng(3)
    X = 0.1 * rng.normal(size=(200, 2))
    m = OneClassSVM(nu=0.05, gamma=0.5).fit(X)
    assert m.predict([[50.0, 50.0]])[0]
    assert not m.predict([[0.0, 0.0]])[0]


def test_nu_bounds_on_ten_points():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(10, 2))
    m = OneClassSVM(nu=0.5, gamma=0.5).fit(X)
    assert len(m.support_) >= 5
    assert m.predict(X).sum() <= 5


def test_zero_variance_dimension_ignored():
    rng = np.random.default_rng(5)
    X = np.column_stack([rng.normal(size=50), np.full(50, 7.0)])
    m = OneClassSVM(nu=0.1).fit(X)
    assert not m.active_[1]
    shifted = X.copy()
    shifted[:, 1] = 1e6
    np.testing.assert_allclose(m.decision_function(shifted), m.decision_function(X))


def test_convergence_error():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(60, 3))
    with pytest.raises(ConvergenceError) as e:
        OneClassSVM(nu=0.3, max_iter=2).fit(X)
    assert e.value.residual > 0


@pytest.mark.parametrize("kwargs", [{"nu": 0}, {"nu": 1.5}, {"gamma": 0.0}])
def test_bad_hyperparameters(kwargs):
    with pytest.raises(ValueError):
        OneClassSVM(**kwargs)


def test_fit_rejects_bad_shapes():
    with pytest.raises(ValueError):
        OneClassSVM().fit(np.zeros(5))
    with pytest.raises(ValueError):
        OneClassSVM().fit(np.zeros((0, 2)))
