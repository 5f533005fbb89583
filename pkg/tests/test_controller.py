import numpy as np
import pytest

from dgsmpc.controller import (
    ControllerConfig,
    init_controller,
    step,
    trace_header,
    update_epsilon,
    write_trace_csv,
)
from dgsmpc.errors import InfeasibleError, StructuralError, UsageError
from dgsmpc.simulation import DisturbanceSampler, Simulator
from dgsmpc.synthesis import dp_fixed_point


def python_rollout(model, library, bank, mode, W, x0=(-1.0, 3.0)):
    state = init_controller(model, library, np.array(x0), ControllerConfig(mode=mode, initial_policy=1e-15), bank)
    x = np.array(x0, float)
    X, U, EPS, IDX = [x], [], [], []
    for w in W:
        u, diag = step(state, x)
        U.append(u)
        EPS.append(diag["eps"])
        IDX.append(diag["mu_index"])
        x = model.A @ x + model.B @ u + w
        X.append(x)
    return np.array(X), np.array(U), np.array(EPS), np.array(IDX)


@pytest.mark.parametrize("mode", ["fixed", "method1", "method2"])
def test_python_controller_matches_kernel(tank, small_library, small_bank, mode):
    W = DisturbanceSampler(tank.Omega, 99).sample_block(150)
    X, U, EPS, IDX = python_rollout(tank, small_library, small_bank, mode, W)
    sim = Simulator(tank, small_library, ControllerConfig(mode=mode, initial_policy=1e-15), [-1.0, 3.0],
                    bank=small_bank)
    tr = sim.rollout(W)
    assert np.array_equal(IDX, tr.IDX)
    assert np.allclose(X, tr.X, rtol=1e-9, atol=1e-9)
    assert np.allclose(U, tr.U, rtol=1e-8, atol=1e-8)
    assert np.allclose(EPS, tr.EPS, rtol=1e-9)


def test_first_step_uses_the_budget(tank, small_library, small_bank):
    state = init_controller(tank, small_library, [-1.0, 3.0], ControllerConfig(initial_policy=1e-15), small_bank)
    _, diag = step(state, np.array([-1.0, 3.0]))
    assert diag["eps"] == 1.5 and diag["k"] == 0 and diag["mu_index"] == 0
    assert diag["constraint_value"] <= 1.5 + 1e-9


def test_epsilon_update_is_undefined_at_start(tank, small_library, small_bank):
    state = init_controller(tank, small_library, [-1.0, 3.0], ControllerConfig(initial_policy=1e-15), small_bank)
    with pytest.raises(UsageError):
        update_epsilon(state, [0.0, 0.0])


def test_budget_update_keeps_the_tail_feasible(tank, small_library, small_bank, rng):
    state = init_controller(tank, small_library, [-1.0, 3.0], ControllerConfig(mode="method1", initial_policy=1e-15),
                            small_bank)
    x = np.array([-1.0, 3.0])
    for _ in range(60):
        u, diag = step(state, x)
        assert diag["constraint_value"] <= diag["eps"] + 1e-9 * (1 + diag["eps"])
        x = tank.A @ x + tank.B @ u + 2.0 * rng.standard_normal(2)


def test_gain_index_is_monotone(tank, small_library, small_bank):
    W = DisturbanceSampler(tank.Omega, 5).sample_block(200)
    for mode in ("method1", "method2"):
        _, _, _, IDX = python_rollout(tank, small_library, small_bank, mode, W)
        assert np.all(np.diff(IDX) >= 0)


def test_fixed_mode_with_single_record(tank):
    rec = dp_fixed_point(tank, 1e-15)
    state = init_controller(tank, rec, [-1.0, 3.0], ControllerConfig(mode="fixed"))
    u, _ = step(state, np.array([-1.0, 3.0]))
    assert u.shape == (2,)
    with pytest.raises(StructuralError):
        init_controller(tank, rec, [-1.0, 3.0], ControllerConfig(mode="method1"))
    with pytest.raises(InfeasibleError):
        init_controller(tank, rec, [40.0, 40.0], ControllerConfig(mode="fixed"))


def test_unknown_mode():
    with pytest.raises(StructuralError):
        ControllerConfig(mode="method3")


def test_epsilon0_mismatch_warns(tank, small_library, small_bank, caplog):
    init_controller(tank, small_library, [-1.0, 3.0], ControllerConfig(epsilon0=2.0, initial_policy=1e-15),
                    small_bank)
    assert "differs from the constraint budget" in caplog.text


def test_trace_csv_round_trips_doubles(tmp_path):
    X = np.array([[0.1, 1 / 3], [2 / 7, -1e-300], [0.0, 5.0]])
    U = np.array([[np.pi, -np.e], [1e20, 0.5]])
    path = tmp_path / "t.csv"
    write_trace_csv(path, X, U, [1.5, 1.25], [1e-15, 1.0], [0.0, 3.5], [10.0, 1.0], [0, 1], comment="hash=x")
    lines = path.read_text().splitlines()
    assert lines[0] == "# hash=x"
    assert lines[1].split(",") == trace_header(2, 2)
    row = np.array(lines[2].split(","), dtype=float)
    assert row[1] == 0.1 and row[2] == 1 / 3 and row[3] == np.pi
