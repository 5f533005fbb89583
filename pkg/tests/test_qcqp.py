import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from dgsmpc.errors import InfeasibleError
from dgsmpc.prediction import build_prediction_operators, constraint_lhs, cost_value
from dgsmpc.qcqp import minimize_constraint, pinv_psd, solve_mpc
from dgsmpc.synthesis import dp_fixed_point, record_from_gain

from conftest import scalar_model


def multiplier_oracle(ops, x, eps):
    """Plain bisection on lambda with a dense solve at every probe."""
    nx = ops.nx
    A2, A1 = ops.W2[nx:, nx:], ops.W1[nx:, nx:]
    b2, b1 = ops.W2[nx:, :nx] @ x, ops.W1[nx:, :nx] @ x

    def c_of(lam):
        return -np.linalg.solve(A2 + lam * A1, b2 + lam * b1)

    if constraint_lhs(ops, x, c_of(0.0)) <= eps:
        return c_of(0.0), 0.0
    lo, hi = 0.0, 1.0
    while constraint_lhs(ops, x, c_of(hi)) > eps:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if constraint_lhs(ops, x, c_of(mid)) > eps:
            lo = mid
        else:
            hi = mid
    return c_of(hi), hi


@pytest.fixture(scope="module")
def ops_mid(tank):
    return build_prediction_operators(tank, dp_fixed_point(tank, 0.05))


def test_minimize_constraint_scalar_example():
    m = scalar_model()
    ops = build_prediction_operators(m, record_from_gain(m, [[0.0]]))
    c_o, value = minimize_constraint(ops, [1.0])
    assert c_o[0] == pytest.approx(-0.5, abs=1e-12)
    assert value == pytest.approx(1.0 + ops.trace_bar, rel=1e-12)


def test_pinv_psd_drops_null_space():
    M = np.diag([2.0, 1e-14, 0.0])
    assert np.allclose(pinv_psd(M), np.diag([0.5, 0.0, 0.0]))


def test_unconstrained_when_budget_is_loose(ops_mid, tank):
    x = np.array([0.1, -0.2])
    sol = solve_mpc(ops_mid, x, 1e6)
    nx = tank.nx
    c_u = -np.linalg.solve(ops_mid.W2[nx:, nx:], ops_mid.W2[nx:, :nx] @ x)
    assert sol.multiplier == 0.0 and not sol.constraint_active
    assert np.allclose(sol.c_star, c_u, atol=1e-10)
    assert solve_mpc(ops_mid, x, np.inf).multiplier == 0.0


def test_active_solution_matches_bisection_and_kkt(ops_mid, tank):
    x = np.array([-1.0, 3.0])
    _, vmin = minimize_constraint(ops_mid, x)
    c_u = solve_mpc(ops_mid, x, np.inf).c_star
    vmax = constraint_lhs(ops_mid, x, c_u)
    eps = vmin + 0.3 * (vmax - vmin)
    sol = solve_mpc(ops_mid, x, eps)
    c_ref, lam_ref = multiplier_oracle(ops_mid, x, eps)
    assert sol.constraint_active
    assert sol.multiplier == pytest.approx(lam_ref, rel=1e-6)
    assert np.allclose(sol.c_star, c_ref, rtol=1e-6, atol=1e-8)
    assert abs(sol.constraint_value - eps) <= 1e-9 * (1 + eps)
    # stationarity of the Lagrangian
    nx = tank.nx
    z = np.concatenate([x, sol.c_star])
    grad = ops_mid.W2[nx:] @ z + sol.multiplier * ops_mid.W1[nx:] @ z
    assert np.linalg.norm(grad) <= 1e-6 * (1 + np.linalg.norm(ops_mid.W2[nx:] @ z))


def test_agrees_with_general_purpose_solver(ops_mid):
    x = np.array([0.8, -1.5])
    _, vmin = minimize_constraint(ops_mid, x)
    eps = vmin + 0.5
    sol = solve_mpc(ops_mid, x, eps)
    res = minimize(lambda c: cost_value(ops_mid, x, c), np.zeros(ops_mid.nc), method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda c: eps - constraint_lhs(ops_mid, x, c)}],
                   options={"ftol": 1e-12, "maxiter": 500})
    assert sol.objective <= res.fun + 1e-6 * (1 + abs(res.fun))


def test_no_sampled_neighbour_does_better(ops_mid, rng):
    x = np.array([-1.0, 3.0])
    _, vmin = minimize_constraint(ops_mid, x)
    eps = vmin + 2.0
    sol = solve_mpc(ops_mid, x, eps)
    for _ in range(100):
        c = sol.c_star + 0.05 * rng.standard_normal(ops_mid.nc)
        if constraint_lhs(ops_mid, x, c) <= eps:
            assert cost_value(ops_mid, x, c) >= sol.objective - 1e-7


def test_budget_at_the_minimum_returns_the_minimiser(ops_mid):
    x = np.array([-1.0, 3.0])
    c_o, vmin = minimize_constraint(ops_mid, x)
    sol = solve_mpc(ops_mid, x, vmin)
    assert sol.constraint_active
    assert abs(sol.constraint_value - vmin) <= 1e-9 * (1 + vmin)
    assert np.allclose(sol.c_star, c_o, atol=1e-4)


def test_infeasible_budget_reports_the_gap(ops_mid):
    x = np.array([-1.0, 3.0])
    _, vmin = minimize_constraint(ops_mid, x)
    with pytest.raises(InfeasibleError) as info:
        solve_mpc(ops_mid, x, vmin - 0.1)
    assert info.value.gap == pytest.approx(0.1, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    frac=st.floats(0.0, 1.5),
)
def test_solution_is_feasible_and_no_worse_than_the_minimiser(tank, x, frac):
    ops = build_prediction_operators(tank, dp_fixed_point(tank, 0.05))
    x = np.asarray(x)
    c_o, vmin = minimize_constraint(ops, x)
    eps = vmin + frac * (1.0 + vmin)
    sol = solve_mpc(ops, x, eps)
    assert sol.constraint_value <= eps + 1e-9 * (1 + eps)
    assert sol.objective <= cost_value(ops, x, c_o) + 1e-9 * (1 + sol.objective)
    assert sol.multiplier >= 0.0
