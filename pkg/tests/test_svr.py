import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from oracles import svr_dual_pg
from vo2kit.core import ValidationError
from vo2kit.linear import DesignMatrix
from vo2kit.svr import SvrConfig, SvrFit, dual_objective, kernel_matrix, smo, svr_fit, svr_predict


def random_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    X = rng.normal(size=(n, 2))
    y = 3 * np.sin(X[:, 0]) + rng.normal(0, 0.5, n)
    return X, y


def kkt_violations(K, y, beta, bias, C, eps, tol):
    f = K @ beta + bias
    gap = np.abs(y - f)
    bad = []
    for i in range(len(y)):
        if gap[i] < eps - tol and beta[i] != 0:
            bad.append((i, "inside tube but nonzero"))
        if abs(beta[i]) >= C and gap[i] < eps - tol:
            bad.append((i, "at bound but inside tube"))
        if 0 < abs(beta[i]) < C and abs(gap[i] - eps) > tol:
            bad.append((i, "free but off the tube edge"))
        if beta[i] == 0 and gap[i] > eps + tol:
            bad.append((i, "outside tube with zero coefficient"))
    return bad


def test_constant_targets():
    X = np.random.default_rng(0).normal(size=(10, 3))
    fit = svr_fit(DesignMatrix(X, np.full(10, 42.0), ()), SvrConfig(epsilon=0.5))
    assert len(fit.dual_coef) == 0
    assert fit.bias == pytest.approx(42.0)
    np.testing.assert_allclose(fit.predict(X), 42.0)


def test_linear_kernel_recovers_line():
    x = np.linspace(0, 1, 21)
    fit = svr_fit(DesignMatrix(x, 2 * x, ()), SvrConfig(kernel="linear", C=1000.0, epsilon=0.01, tol=1e-4))
    grid = np.linspace(0, 1, 101)
    assert np.max(np.abs(svr_predict(fit, grid[:, None]) - 2 * grid)) < 0.02


@pytest.mark.parametrize("seed", range(4))
def test_matches_projected_gradient_oracle(seed):
    X, y = random_instance(seed)
    K = kernel_matrix(X, X, "rbf", 0.5)
    beta, bias, conv, _ = smo(K, y, 2.0, 0.3)
    _, ref = svr_dual_pg(K, y, 2.0, 0.3)
    assert conv
    assert dual_objective(K, y, beta, 0.3) == pytest.approx(ref, abs=1e-4)


@given(st.integers(0, 10_000), st.floats(0.1, 20.0), st.floats(0.0, 1.0))
@example(206, 0.109375, 1.0)  # once stalled on a 1e-18 coefficient residue
def test_feasibility_and_kkt(seed, C, eps):
    X, y = random_instance(seed)
    K = kernel_matrix(X, X, "rbf", 0.5)
    tol = 1e-3
    beta, bias, conv, _ = smo(K, y, C, eps, tol)
    assert conv
    assert np.all(np.abs(beta) <= C + 1e-12)
    assert abs(beta.sum()) < 1e-10
    # one unit of tol per side of the pair condition
    assert kkt_violations(K, y, beta, bias, C, eps, 2 * tol) == []


def test_rbf_prediction_continuous():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 2))
    fit = svr_fit(DesignMatrix(X, X[:, 0] ** 2 + X[:, 1], ()))
    x0 = np.array([[0.1, -0.2]])
    base = fit.predict(x0)[0]
    for delta in (1e-3, 1e-5, 1e-7):
        change = abs(fit.predict(x0 + delta)[0] - base)
        bound = np.abs(fit.dual_coef).sum() * 2 * fit.config.gamma * 10 * delta
        assert change <= bound


def test_round_trip():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(15, 2))
    fit = svr_fit(DesignMatrix(X, X @ [1.0, -2.0], ("a", "b")))
    again = SvrFit.from_dict(fit.to_dict())
    assert np.array_equal(again.predict(X), fit.predict(X))
    assert again.config == fit.config


def test_nonconvergence_flagged():
    X, y = random_instance(1)
    fit = svr_fit(DesignMatrix(X, 10 * y, ()), SvrConfig(C=100.0, epsilon=0.0, max_passes=1))
    assert fit.passes == 1 and not fit.converged


def test_config_validation():
    for bad in ({"C": 0.0}, {"epsilon": -1.0}, {"gamma": 0.0}, {"kernel": "poly"}, {"tol": 0.0}):
        with pytest.raises(ValidationError):
            SvrConfig(**bad)
    with pytest.raises(ValidationError):
        svr_fit(DesignMatrix([[1.0]], [1.0], ()))
