import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagm.exceptions import ConvergenceError, InputError
from tagm.glasso import (
    ZERO_THRESHOLD,
    kkt_residual,
    objective,
    solve_glasso,
)

from oracles import glasso_grid_2x2

# frozen from oracles.glasso_grid_2x2(S, 0.1), S = [[1, .5], [.5, 1]]
GRID_SOLUTION = np.array([[1.19047617, -0.47619055], [-0.47619055, 1.19047633]])


def random_spd(rng, d, n=None):
    n = n or 3 * d
    A = rng.standard_normal((n, d))
    return A.T @ A / n


def test_identity_lambda_zero():
    sol = solve_glasso(np.eye(3), 0.0)
    np.testing.assert_allclose(sol.theta, np.eye(3), atol=1e-12)
    assert sol.kkt_residual == 0.0


def test_large_lambda_gives_diagonal():
    S = np.diag([2.0, 3.0])
    sol = solve_glasso(S, 10.0)
    np.testing.assert_allclose(sol.theta, np.diag([0.5, 1 / 3]), atol=1e-7)
    assert sol.theta[0, 1] == 0.0


def test_two_by_two_matches_grid():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    sol = solve_glasso(S, 0.1)
    np.testing.assert_allclose(sol.theta, GRID_SOLUTION, atol=1e-3)
    # and the oracle itself, recomputed
    np.testing.assert_allclose(sol.theta, glasso_grid_2x2(S, 0.1), atol=1e-3)


@pytest.mark.parametrize(
    "S, theta, lam, expected",
    [
        (np.eye(3), np.eye(3), 0.0, 0.0),
        (np.diag([2.0, 3.0]), np.diag([0.5, 1 / 3]), 10.0, 0.0),
        (np.eye(3), 2 * np.eye(3), 0.0, 0.5),
    ],
)
def test_kkt_residual_examples(S, theta, lam, expected):
    assert kkt_residual(S, theta, lam) == pytest.approx(expected, abs=1e-15)


def test_kkt_rejects_indefinite():
    with pytest.raises(InputError):
        kkt_residual(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 0.1)


def test_non_symmetric_input():
    with pytest.raises(InputError):
        solve_glasso(np.array([[1.0, 0.2], [0.0, 1.0]]), 0.1)


def test_negative_lambda():
    with pytest.raises(InputError):
        solve_glasso(np.eye(2), -1.0)


def test_convergence_error_carries_iterate():
    rng = np.random.default_rng(3)
    S = random_spd(rng, 6)
    with pytest.raises(ConvergenceError) as info:
        solve_glasso(S, 0.05, tol=1e-14, max_iter=3)
    assert info.value.iterate is not None
    assert info.value.residual > 1e-14


def test_singular_covariance_gets_ridge():
    x = np.array([1.0, 2.0, 3.0])
    S = np.outer(x, x)
    sol = solve_glasso(S, 0.1)
    assert np.linalg.eigvalsh(sol.theta)[0] > 0


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("lam", [0.0, 0.05, 0.2])
def test_random_spd_optimality(seed, lam):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 7))
    S = random_spd(rng, d)
    sol = solve_glasso(S, lam)
    theta = sol.theta
    assert np.array_equal(theta, theta.T)
    assert np.linalg.eigvalsh(theta)[0] > 0
    assert sol.kkt_residual <= 1e-6
    assert kkt_residual(S, theta, lam) <= 1e-6
    if lam == 0.0:
        assert np.max(np.abs(theta - np.linalg.inv(S))) <= 1e-5
    # two feasible references never beat the solution
    f = objective(S, theta, lam)
    assert f <= objective(S, np.linalg.inv(S + 1e-6 * np.eye(d)), lam) + 1e-9
    assert f <= objective(S, np.diag(1 / np.diag(S)), lam) + 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_sparsity_monotone_in_lambda(seed):
    rng = np.random.default_rng(100 + seed)
    d = int(rng.integers(3, 7))
    S = random_spd(rng, d, n=2 * d)
    counts = []
    for lam in np.linspace(0.01, 0.6, 12):
        theta = solve_glasso(S, lam).theta
        off = np.abs(theta[~np.eye(d, dtype=bool)]) > ZERO_THRESHOLD
        counts.append(int(off.sum()))
    assert all(a >= b for a, b in zip(counts, counts[1:])), counts


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    d=st.integers(1, 6),
    lam=st.floats(0.0, 1.0),
)
def test_solution_invariants(seed, d, lam):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, d)
    sol = solve_glasso(S, lam)
    assert np.array_equal(sol.theta, sol.theta.T)
    assert np.linalg.eigvalsh(sol.theta)[0] > 0
    assert sol.kkt_residual <= 1e-6
