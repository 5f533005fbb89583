import numpy as np
import pytest

from dgsmpc.prediction import (
    build_prediction_operators,
    constraint_lhs,
    cost_value,
    recursive_cost_oracle,
)
from dgsmpc.synthesis import dp_fixed_point, record_from_gain

from conftest import scalar_model


def constraint_oracle(model, rec, x, c):
    """Nominal rollout of sum_i gamma^i |C x_i|^2 + gamma^N |x_N|^2_Pbar + trace term."""
    xi = np.asarray(x, float)
    cs = np.asarray(c, float).reshape(model.N, model.nu)
    total = 0.0
    for i, ci in enumerate(cs):
        total += model.gamma**i * float(np.sum((model.C @ xi) ** 2))
        xi = model.A @ xi + model.B @ (rec.L @ xi + ci)
    total += model.gamma**model.N * float(xi @ rec.P_bar @ xi)
    return total + rec.trace_bar


def test_scalar_w1_frozen():
    m = scalar_model()
    rec = record_from_gain(m, [[0.0]])
    ops = build_prediction_operators(m, rec)
    expect = np.array([[1.29032, 0.58065], [0.58065, 1.16129]])
    assert np.allclose(ops.W1, expect, atol=1e-5)


def test_scalar_cost_by_hand():
    # K = 0, P = 2, x = 2, c = (1, 1): stages 5 + 5, terminal 2 * 2^2
    m = scalar_model(N=2)
    rec = record_from_gain(m, [[0.0]])
    rec = rec.__class__(mu=rec.mu, L=rec.L, P_bar=rec.P_bar, P_hat=np.array([[2.0]]),
                        trace_bar=rec.trace_bar, trace_hat=2.0)
    ops = build_prediction_operators(m, rec)
    assert cost_value(ops, [2.0], [1.0, 1.0]) == pytest.approx(18.0, rel=1e-14)
    assert recursive_cost_oracle(m, rec.L, rec.P_hat, [2.0], [1.0, 1.0]) == pytest.approx(18.0)


@pytest.mark.parametrize("mu", [1e-12, 1e-3, 0.3, 1.0])
def test_operators_match_rollout_oracles(tank, rng, mu):
    rec = dp_fixed_point(tank, mu)
    ops = build_prediction_operators(tank, rec)
    for _ in range(5):
        x = rng.standard_normal(tank.nx) * 3
        c = rng.standard_normal(tank.nc)
        lhs = constraint_lhs(ops, x, c)
        assert lhs == pytest.approx(constraint_oracle(tank, rec, x, c), rel=1e-10)
        cost = cost_value(ops, x, c)
        assert cost == pytest.approx(recursive_cost_oracle(tank, rec.L, rec.P_hat, x, c), rel=1e-10)


def test_operator_shapes_and_symmetry(tank):
    ops = build_prediction_operators(tank, dp_fixed_point(tank, 0.5))
    nz = tank.nx + tank.nc
    assert ops.W1.shape == ops.W2.shape == (nz, nz)
    assert np.array_equal(ops.W1, ops.W1.T) and np.array_equal(ops.W2, ops.W2.T)
    assert np.linalg.eigvalsh(ops.W2[tank.nx:, tank.nx:])[0] > 0
    assert np.linalg.eigvalsh(ops.W1)[0] > -1e-9 * np.abs(ops.W1).max()


def test_schur_gives_minimised_constraint(tank, rng):
    ops = build_prediction_operators(tank, dp_fixed_point(tank, 0.05))
    x = rng.standard_normal(tank.nx)
    c_o = -ops.constraint_gain @ x
    assert constraint_lhs(ops, x, c_o) == pytest.approx(float(x @ ops.constraint_schur @ x) + ops.trace_bar)
    assert cost_value(ops, x, c_o) == pytest.approx(float(x @ ops.min_constraint_cost @ x), rel=1e-10)
