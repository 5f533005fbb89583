import numpy as np
import pytest

from dgsmpc.properties import (
    check_closed_forms,
    check_certificate_ordering,
    check_rde_ordering,
    finite_horizon_value_qp,
    finite_horizon_value_riccati,
    random_instance,
    verify_properties,
)
from dgsmpc.synthesis import GainLibrary, default_grid, dp_fixed_point, generate_gain_library, make_record

from conftest import scalar_model


def test_closed_forms_scalar_tight(rng):
    m = scalar_model(a=0.6, c=0.7, omega=0.3, gamma=0.8)
    ok, margin = check_closed_forms(m, dp_fixed_point(m, 0.4), rng, 1e-10)
    assert ok, margin


def test_finite_horizon_value_two_ways(tank, rng):
    for _ in range(5):
        G = rng.standard_normal((2, 2))
        P = G @ G.T
        x0 = rng.standard_normal(2)
        assert finite_horizon_value_riccati(tank, P, x0) == pytest.approx(finite_horizon_value_qp(tank, P, x0),
                                                                         rel=1e-9)


def test_rde_ordering_holds(tank, rng):
    ok, _ = check_rde_ordering(tank, rng, 1e-6)
    assert ok


def test_benchmark_model_report_passes(tank, small_library):
    report = verify_properties(tank, small_library, seed=3, draws=20_000)
    failed = [r for r in report["results"] if not r["pass"]]
    assert report["pass"], failed
    suites = {r["suite"] for r in report["results"]}
    assert {"closed_forms", "certificate_ordering", "trace_concavity", "rde_ordering",
            "budget_expectation_mc", "budget_expectation_exact", "cost_decrease_mc"} <= suites


def test_corrupted_certificate_is_caught(tank, small_library):
    recs = list(small_library.records)
    k = len(recs) // 2
    r = recs[k]
    recs[k] = make_record(r.mu, r.L, r.P_bar + 0.1 * np.eye(2), r.P_hat, Omega=tank.Omega, gamma=tank.gamma)
    bad = GainLibrary(small_library.grid, recs)
    ok, margin = check_certificate_ordering(bad, np.random.default_rng(0), 1e-8)
    assert not ok and margin < -0.05
    report = verify_properties(tank, bad, draws=0)
    entry = next(e for e in report["results"] if e["suite"] == "certificate_ordering")
    assert not entry["pass"] and not report["pass"]


def test_random_instances_are_valid_and_reproducible():
    a = random_instance(np.random.default_rng([0, 1]))
    b = random_instance(np.random.default_rng([0, 1]))
    assert a.fingerprint() == b.fingerprint()
    assert np.max(np.abs(np.linalg.eigvals(a.A))) < 1.0


def test_report_shape_on_a_random_instance():
    inst = random_instance(np.random.default_rng([0, 2]))
    lib = generate_gain_library(inst, default_grid(12, 1e-6))
    report = verify_properties(inst, lib, draws=5_000, seed=1)
    for entry in report["results"]:
        assert set(entry) == {"suite", "instance", "pass", "margin", "tolerance"}
