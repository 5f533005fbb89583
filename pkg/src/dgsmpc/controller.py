"""Receding-horizon controller: epsilon update, gain selection, QCQP solve, input."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .bank import OperatorBank
from .errors import InfeasibleError, StructuralError, UsageError
from .model import PlantModel
from .prediction import PredictionOperators, build_prediction_operators
from .qcqp import FEAS_RTOL, minimize_constraint, solve_mpc
from .selection import TIE_RTOL, SelectionOutcome, initial_gain, select_method1, select_method2
from .synthesis import GainLibrary, GainRecord

log = logging.getLogger(__name__)

MODES = ("fixed", "method1", "method2")


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "method1"
    epsilon0: float | None = None  # None means the model's budget e
    initial_policy: object = "largest"  # "largest", "smallest" or a grid weight
    tie_rtol: float = TIE_RTOL

    def __post_init__(self):
        if self.mode not in MODES:
            raise StructuralError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class ControllerState:
    model: PlantModel
    mode: str
    k: int
    epsilon: float
    selection: SelectionOutcome
    ops: PredictionOperators
    prev_c_star: np.ndarray | None = None
    prev_ops: PredictionOperators | None = None
    library: GainLibrary | None = None
    bank: OperatorBank | None = None
    tie_rtol: float = TIE_RTOL


def _ops_provider(bank, model, library):
    if bank is not None:
        return bank.ops
    memo = {}

    def get(j):
        if j not in memo:
            memo[j] = build_prediction_operators(model, library[j])
        return memo[j]

    return get


def init_controller(
    model: PlantModel,
    gains,
    x0,
    config: ControllerConfig = ControllerConfig(),
    bank: OperatorBank | None = None,
) -> ControllerState:
    """Prepare the controller at ``k = 0``.

    ``gains`` is a :class:`GainLibrary` (any mode) or a single :class:`GainRecord`
    (fixed mode only). A library in fixed mode keeps the initially selected gain.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    eps0 = model.e if config.epsilon0 is None else float(config.epsilon0)
    if eps0 != model.e:
        log.warning("epsilon0=%g differs from the constraint budget e=%g; the violation bound needs them equal",
                    eps0, model.e)
    if isinstance(gains, GainRecord):
        if config.mode != "fixed":
            raise StructuralError("a single gain record can only drive the fixed mode")
        library = None
        ops = bank.ops(0) if bank is not None else build_prediction_operators(model, gains)
        sel = SelectionOutcome(record=gains, mu_index=0)
        _, v = minimize_constraint(ops, x0)
        if v > eps0 + FEAS_RTOL * (1.0 + abs(eps0)):
            raise InfeasibleError(f"x0 infeasible for the fixed gain (gap {v - eps0:.6g})", gap=v - eps0)
    else:
        library = gains
        provider = _ops_provider(bank, model, library)
        sel = initial_gain(library, model, x0, eps0, config.initial_policy, ops_provider=provider)
        ops = provider(sel.mu_index)
    return ControllerState(model=model, mode=config.mode, k=0, epsilon=eps0, selection=sel, ops=ops,
                           library=library, bank=bank, tie_rtol=config.tie_rtol)


def update_epsilon(state: ControllerState, x_k) -> float:
    """Budget for step ``k`` from the shifted tail of the previous solution, scored with the previous gain."""
    if state.k == 0 or state.prev_c_star is None or state.prev_ops is None:
        raise UsageError("epsilon update needs a previous step; it is undefined at k = 0")
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    nu = state.model.nu
    tail = np.concatenate([state.prev_c_star[nu:], np.zeros(nu)])
    z = np.concatenate([x_k, tail])
    # compensated sum keeps long runs comparable with the expanded form
    terms = (z[:, None] * state.prev_ops.W1 * z[None, :]).ravel().tolist()
    return math.fsum(terms) + state.prev_ops.trace_bar


def step(state: ControllerState, x_k):
    """Advance one step at measured state ``x_k``; returns ``(u_k, diagnostics)``."""
    model = state.model
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    if state.k > 0:
        state.epsilon = update_epsilon(state, x_k)
        if state.mode != "fixed" and state.library is not None:
            provider = _ops_provider(state.bank, model, state.library)
            if state.mode == "method1":
                sel = select_method1(state.library, state.selection, state.ops, x_k, state.epsilon,
                                     model=model, ops_provider=provider)
            else:
                sel = select_method2(state.library, state.selection, model, x_k, state.epsilon,
                                     ops_provider=provider, tie_rtol=state.tie_rtol)
            if sel.mu_index != state.selection.mu_index:
                state.ops = provider(sel.mu_index)
            state.selection = sel
    try:
        sol = solve_mpc(state.ops, x_k, state.epsilon)
    except InfeasibleError as exc:
        if state.k > 0:
            raise InfeasibleError(
                f"online problem infeasible at k={state.k} despite the epsilon update: {exc}", gap=exc.gap
            ) from exc
        raise
    u = state.ops.K @ x_k + sol.c_star[:model.nu]
    Cx = model.C @ x_k
    diag = {
        "k": state.k,
        "eps": state.epsilon,
        "mu_bar": state.selection.mu,
        "mu_index": state.selection.mu_index,
        "lambda": sol.multiplier,
        "stage_cost": float(x_k @ model.Q @ x_k + u @ model.R @ u),
        "violation": int(float(Cx @ Cx) >= 1.0),
        "constraint_value": sol.constraint_value,
        "objective": sol.objective,
        "fallback": state.selection.fallback,
    }
    state.prev_c_star = sol.c_star
    state.prev_ops = state.ops
    state.k += 1
    return u, diag


TRACE_COLUMNS = ("k", "x", "u", "eps", "mu_bar", "lambda", "stage_cost", "violation")


def trace_header(nx: int, nu: int) -> list:
    return (["k"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
            + ["eps", "mu_bar", "lambda", "stage_cost", "violation"])


def fmt(v) -> str:
    """17 significant digits, so a CSV round-trips every double."""
    return format(float(v), ".17g")


def write_trace_csv(path, X, U, EPS, MU, LAM, STAGE, VIOL, comment: str | None = None) -> None:
    X, U = np.asarray(X), np.asarray(U)
    steps = U.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(X.shape[1], U.shape[1]))
        for k in range(steps):
            w.writerow([k] + [fmt(v) for v in X[k]] + [fmt(v) for v in U[k]]
                       + [fmt(EPS[k]), fmt(MU[k]), fmt(LAM[k]), fmt(STAGE[k]), int(VIOL[k])])
