"""Numerical checks of the identities and orderings the control scheme relies on.

Every check yields ``(passed, margin, tolerance)`` where ``margin >= 0`` exactly
when the check passes. Deterministic identities are compared at a relative
tolerance; Monte Carlo identities at three standard errors.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .bank import OperatorBank
from .errors import DgsmpcError
from .model import PlantModel, is_strictly_stable, validate_model
from .prediction import build_prediction_operators
from .qcqp import MAX_ITER, ROOT_RTOL, minimize_constraint, solve_mpc
from .simulation import DisturbanceSampler
from .synthesis import GainLibrary, default_grid, dp_fixed_point, generate_gain_library

DEFAULT_TOLERANCES = {
    "relative": 1e-6,  # deterministic identities
    "order": 1e-8,  # semidefinite orderings, concavity, optimality
    "sigmas": 3.0,  # Monte Carlo identities
}
TRUNCATION = 2000


def _entry(suite, instance, passed, margin, tolerance):
    return {
        "suite": suite,
        "instance": instance,
        "pass": bool(passed),
        "margin": float(margin),
        "tolerance": float(tolerance),
    }


def _rel_check(value, reference, rtol):
    err = abs(value - reference)
    allowed = rtol * max(1.0, abs(reference))
    return err <= allowed, allowed - err


# ---------------------------------------------------------------- identities

def check_closed_forms(model: PlantModel, record, rng, rtol: float):
    """Tail-sum and covariance-sum closed forms, truncated at ``TRUNCATION`` terms."""
    ops = build_prediction_operators(model, record)
    nx, N, gamma = model.nx, model.N, model.gamma
    Phi = model.A + model.B @ record.L
    CtC = model.C.T @ model.C
    x = rng.standard_normal(nx)
    c = rng.standard_normal(model.nc)
    xN = ops.M_x[-nx:] @ x + ops.M_c[-nx:] @ c
    tail, xi, g = 0.0, xN.copy(), gamma**N
    for _ in range(TRUNCATION):
        tail += g * float(xi @ CtC @ xi)
        xi = Phi @ xi
        g *= gamma
    ok1, m1 = _rel_check(tail, gamma**N * float(xN @ record.P_bar @ xN), rtol)

    X = np.zeros((nx, nx))
    total, g = 0.0, 1.0
    for _ in range(TRUNCATION):
        total += g * float(np.trace(CtC @ X))
        X = Phi @ X @ Phi.T + model.Omega
        g *= gamma
    ok2, m2 = _rel_check(total, record.trace_bar, rtol)
    return (ok1 and ok2), min(m1, m2)


def check_certificate_ordering(library: GainLibrary, rng, tol: float, random_pairs: int = 50):
    """Constraint certificate grows and cost certificate shrinks with the weight."""
    recs = library.records
    pairs = [(i, i + 1) for i in range(len(recs) - 1)]
    if len(recs) > 2:
        for _ in range(random_pairs):
            i, j = sorted(rng.choice(len(recs), size=2, replace=False))
            pairs.append((int(i), int(j)))
    margin = np.inf
    for i, j in pairs:
        e_bar = np.linalg.eigvalsh(recs[j].P_bar - recs[i].P_bar)[0]
        e_hat = np.linalg.eigvalsh(recs[i].P_hat - recs[j].P_hat)[0]
        margin = min(margin, e_bar + tol, e_hat + tol)
    if not pairs:
        margin = tol
    return margin >= 0.0, margin


def _scalarised_trace(model, mu):
    rec = dp_fixed_point(model, mu)
    return float(np.trace((1.0 - mu) * rec.P_bar + mu * rec.P_hat))


def check_trace_concavity(model: PlantModel, rng, tol: float, triples: int = 3):
    """Midpoint concavity of ``tr((1 - mu) P_bar + mu P_hat)`` on equally spaced triples."""
    margin = np.inf
    for _ in range(triples):
        mid = rng.uniform(0.05, 0.95)
        h = rng.uniform(0.005, 0.5 * min(mid, 1.0 - mid))
        t1, t2, t3 = (_scalarised_trace(model, mu) for mu in (mid - h, mid, mid + h))
        allowed = tol * max(1.0, abs(t2))
        margin = min(margin, allowed - (t1 + t3 - 2.0 * t2))
    return margin >= 0.0, margin


def check_optimality(model: PlantModel, library: GainLibrary, rng, tol: float, pairs: int = 20):
    """Each weight's own certificates minimise its scalarised objective among library gains."""
    recs = library.records
    margin = np.inf
    for _ in range(pairs):
        i, j = rng.integers(len(recs), size=2)
        mu = recs[i].mu
        x0 = rng.standard_normal(model.nx)
        own = (1.0 - mu) * recs[i].P_bar + mu * recs[i].P_hat
        other = (1.0 - mu) * recs[j].P_bar + mu * recs[j].P_hat
        a, b = float(x0 @ own @ x0), float(x0 @ other @ x0)
        margin = min(margin, b - a + tol * max(1.0, abs(a)))
    return margin >= 0.0, margin


def finite_horizon_value_riccati(model: PlantModel, P_term, x0, N=None) -> float:
    A, B, Q, R = model.A, model.B, model.Q, model.R
    P = np.asarray(P_term, float)
    for _ in range(model.N if N is None else N):
        BtP = B.T @ P
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P = 0.5 * (P + P.T)
    return float(x0 @ P @ x0)


def finite_horizon_value_qp(model: PlantModel, P_term, x0, N=None) -> float:
    """Same value as a single stacked least-squares problem over the whole input sequence."""
    A, B, Q, R = model.A, model.B, model.Q, model.R
    N = model.N if N is None else N
    nx, nu = model.nx, model.nu
    Mx = np.zeros(((N + 1) * nx, nx))
    Mu = np.zeros(((N + 1) * nx, N * nu))
    Ak = np.eye(nx)
    for i in range(N + 1):
        Mx[i * nx:(i + 1) * nx] = Ak
        for j in range(i):
            Mu[i * nx:(i + 1) * nx, j * nu:(j + 1) * nu] = np.linalg.matrix_power(A, i - 1 - j) @ B
        Ak = A @ Ak
    Qbar = np.zeros(((N + 1) * nx, (N + 1) * nx))
    for i in range(N):
        Qbar[i * nx:(i + 1) * nx, i * nx:(i + 1) * nx] = Q
    Qbar[N * nx:, N * nx:] = P_term
    Rbar = np.kron(np.eye(N), R)
    Hq = Mu.T @ Qbar @ Mu + Rbar
    f = Mu.T @ Qbar @ Mx @ x0
    U = -np.linalg.solve(Hq, f)
    X = Mx @ x0 + Mu @ U
    return float(X @ Qbar @ X + U @ Rbar @ U)


def check_rde_ordering(model: PlantModel, rng, rtol: float, trials: int = 5):
    """Optimal N-step cost is monotone in the terminal weight (and both solvers agree)."""
    nx = model.nx
    margin = np.inf
    for _ in range(trials):
        G1 = rng.standard_normal((nx, nx))
        G2 = rng.standard_normal((nx, nx))
        P1 = G1 @ G1.T
        P2 = P1 + G2 @ G2.T
        x0 = rng.standard_normal(nx)
        v1, v2 = finite_horizon_value_riccati(model, P1, x0), finite_horizon_value_riccati(model, P2, x0)
        q1, q2 = finite_horizon_value_qp(model, P1, x0), finite_horizon_value_qp(model, P2, x0)
        scale = rtol * max(1.0, abs(v2))
        margin = min(margin, v2 - v1 + scale,
                     rtol * max(1.0, abs(v1)) - abs(v1 - q1),
                     rtol * max(1.0, abs(v2)) - abs(v2 - q2))
    return margin >= 0.0, margin


# --------------------------------------------------------- frozen-state checks

def frozen_state(model: PlantModel, record, rng, x=None, epsilon=None):
    """A feasible state, budget and solution used by the expectation checks."""
    ops = build_prediction_operators(model, record)
    if x is None:
        x = rng.standard_normal(model.nx)
    x = np.asarray(x, float)
    _, v_min = minimize_constraint(ops, x)
    if epsilon is None:
        loose = solve_mpc(ops, x, np.inf)
        # budget between the minimum and the unconstrained value, so the constraint binds
        epsilon = v_min + 0.3 * max(loose.constraint_value - v_min, 0.0) + 1e-6
    sol = solve_mpc(ops, x, epsilon)
    return ops, x, float(epsilon), sol


def next_step_samples(model: PlantModel, record, x, sol, draws: int, seed: int, distribution="laplace"):
    bank = OperatorBank(model, [record])
    W = DisturbanceSampler(model.Omega, seed, distribution).sample_block(draws)
    EPS, J, failures = kernels.next_step_batch(
        0, x, sol.c_star, W, model.A, model.B, bank.gains, bank.T, bank.d, bank.TA, bank.TB,
        bank.W1, bank.W2, bank.G, bank.trace_bar, bank.dcut, ROOT_RTOL, MAX_ITER,
    )
    return EPS, J, int(failures)


def check_budget_expectation(model, record, ops, x, sol, EPS, sigmas, rtol):
    """``gamma E[eps_next] = constraint value - |C x|^2``, by sampling and in closed form."""
    gamma = model.gamma
    Cx = model.C @ x
    rhs = sol.constraint_value - float(Cx @ Cx)
    mean = float(EPS.mean())
    se = float(EPS.std(ddof=1) / np.sqrt(EPS.size))
    mc_margin = sigmas * gamma * se - abs(gamma * mean - rhs)
    nu = model.nu
    u = record.L @ x + sol.c_star[:nu]
    z = np.concatenate([model.A @ x + model.B @ u, sol.c_star[nu:], np.zeros(nu)])
    eps_nom = float(z @ ops.W1 @ z) + ops.trace_bar
    exact = gamma * (eps_nom + float(np.trace(model.Omega @ record.P_bar)))
    ok, ex_margin = _rel_check(exact, rhs, rtol)
    return (mc_margin >= 0.0, mc_margin), (ok, ex_margin), float(rhs - gamma * mean)


def check_cost_decrease(model, record, ops, x, sol, J, failures, sigmas):
    """``E[J*(x_next)] <= J*(x) - stage cost + tr(Omega P)`` by sampling."""
    u = record.L @ x + sol.c_star[: model.nu]
    stage = float(x @ model.Q @ x + u @ model.R @ u)
    bound = sol.objective - stage + record.trace_hat
    se = float(J.std(ddof=1) / np.sqrt(J.size))
    margin = bound - float(J.mean()) + sigmas * se
    if failures:
        margin = -abs(margin) - failures
    return margin >= 0.0, margin


# ------------------------------------------------------------------- driver

def random_instance(rng, max_tries: int = 50) -> PlantModel:
    """A random controllable, observable instance with a stable state matrix."""
    for _ in range(max_tries):
        nx = int(rng.integers(2, 4))
        nu = int(rng.integers(1, 3))
        ny = int(rng.integers(1, 3))
        A = rng.standard_normal((nx, nx))
        A *= rng.uniform(0.3, 0.95) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
        B = rng.standard_normal((nx, nu))
        C = 0.5 * rng.standard_normal((ny, nx))
        R = np.diag(rng.uniform(0.5, 2.0, nu))
        G = rng.standard_normal((nx, nx))
        Omega = 0.5 * G @ G.T / nx + 0.2 * np.eye(nx)
        model = PlantModel(A=A, B=B, C=C, Q=np.eye(nx), R=R, Omega=Omega,
                           gamma=float(rng.uniform(0.7, 0.95)), e=1.5, N=int(rng.integers(2, 7)))
        if validate_model(model).ok:
            return model
    raise RuntimeError("could not draw a valid random instance")


def _suites_for(name, model, library, rng, tol, draws, seed, mc_state=None):
    out = []
    rel, order, sig = tol["relative"], tol["order"], tol["sigmas"]

    def run(fn):
        try:
            return fn()
        except DgsmpcError:  # a crash is a failed check, not a crashed report
            return False, -np.inf

    rec = library[int(rng.integers(len(library)))]
    for suite, fn, t in (
        ("closed_forms", lambda: check_closed_forms(model, rec, rng, rel), rel),
        ("certificate_ordering", lambda: check_certificate_ordering(library, rng, order), order),
        ("trace_concavity", lambda: check_trace_concavity(model, rng, order), order),
        ("optimality_cross_check", lambda: check_optimality(model, library, rng, order), order),
        ("rde_ordering", lambda: check_rde_ordering(model, rng, rel), rel),
    ):
        ok, margin = run(fn)
        out.append(_entry(suite, name, ok, margin, t))

    if draws > 0:
        if mc_state is not None:
            j, x, eps = mc_state
            rec = library[j]
        else:
            rec, x, eps = library[int(rng.integers(len(library)))], None, None
        if not is_strictly_stable(model.A + model.B @ rec.L):
            out.append(_entry("frozen_state", name, False, -np.inf, 0.0))
            return out
        ops, x, eps, sol = frozen_state(model, rec, rng, x, eps)
        EPS, J, failures = next_step_samples(model, rec, x, sol, draws, seed)
        (ok_mc, m_mc), (ok_ex, m_ex), _ = check_budget_expectation(model, rec, ops, x, sol, EPS, sig, rel)
        out.append(_entry("budget_expectation_mc", name, ok_mc, m_mc, sig))
        out.append(_entry("budget_expectation_exact", name, ok_ex, m_ex, rel))
        out.append(_entry("recursive_feasibility", name, failures == 0, -failures, 0.0))
        ok, margin = check_cost_decrease(model, rec, ops, x, sol, J, failures, sig)
        out.append(_entry("cost_decrease_mc", name, ok, margin, sig))
    return out


def verify_properties(model: PlantModel, library: GainLibrary, tolerances=None, seed: int = 0,
                      draws: int = 100_000, random_instances: int = 0, instance_grid: int = 12,
                      mc_state=None) -> dict:
    """Run every suite on ``(model, library)`` and on ``random_instances`` random problems.

    ``mc_state`` optionally fixes ``(grid index, x, epsilon)`` for the expectation checks.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    rng = np.random.default_rng(seed)
    results = _suites_for("model", model, library, rng, tol, draws, seed, mc_state)
    grid = default_grid(instance_grid, 1e-6)
    for i in range(random_instances):
        inst_rng = np.random.default_rng([seed, i + 1])
        inst = random_instance(inst_rng)
        lib = generate_gain_library(inst, grid)
        results.extend(_suites_for(f"random_{i}", inst, lib, inst_rng, tol, draws, seed + i + 1))
    return {
        "pass": all(r["pass"] for r in results),
        "tolerances": tol,
        "seed": seed,
        "draws": draws,
        "results": results,
    }
