"""Online choice of the feedback gain from a library, plus the initial-gain rule.

Both methods only ever move up the grid. Method 1 uses the constraint
minimiser of the previous gain and the monotone ``trace_bar`` column; Method 2
re-minimises the constraint under each candidate gain and then picks the
candidate with the smallest predicted cost at that minimiser.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InitialInfeasibilityError, StructuralError
from .model import PlantModel
from .prediction import PredictionOperators, build_prediction_operators
from .qcqp import FEAS_RTOL, minimize_constraint
from .synthesis import GainLibrary, GainRecord

POLICIES = ("largest", "smallest")
# Method 2 costs within this relative distance of the window minimum count as tied.
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class SelectionOutcome:
    record: GainRecord
    mu_index: int
    slack: float = 0.0
    probes: int = 0
    fallback: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def mu(self) -> float:
        return self.record.mu


class _OpsMemo:
    """Operators keyed by grid index; lives for one selection call unless a provider is shared."""

    def __init__(self, model, library, provider=None):
        self.model = model
        self.library = library
        self.provider = provider
        self.cache = {}

    def __call__(self, j: int) -> PredictionOperators:
        if self.provider is not None:
            return self.provider(j)
        ops = self.cache.get(j)
        if ops is None:
            ops = build_prediction_operators(self.model, self.library[j])
            self.cache[j] = ops
        return ops


def _feas_tol(eps: float) -> float:
    return FEAS_RTOL * (1.0 + abs(eps))


def _largest_true(pred, lo: int, hi: int) -> tuple[int, int]:
    """Largest index in ``[lo, hi]`` with ``pred`` true, given ``pred(lo)`` and a monotone predicate."""
    probes = 1
    if pred(hi):
        return hi, probes
    while hi - lo > 1:
        mid = (lo + hi) // 2
        probes += 1
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, probes


def select_method1(
    library: GainLibrary,
    prev: SelectionOutcome,
    ops_prev: PredictionOperators,
    x,
    epsilon: float,
    model: PlantModel | None = None,
    ops_provider=None,
) -> SelectionOutcome:
    """Largest grid weight whose trace term still fits next to the previous gain's minimised quadratic.

    If the chosen gain turns out to leave the online problem infeasible (its own
    constraint minimum exceeds ``epsilon``), the search falls back to the largest
    index that keeps it feasible; ``model`` or ``ops_provider`` is needed for that check.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    j0, m = prev.mu_index, len(library)
    _, v_prev = minimize_constraint(ops_prev, x)
    quad = v_prev - ops_prev.trace_bar
    tb = library.trace_bar
    cand, probes = _largest_true(lambda j: quad + tb[j] <= epsilon, j0, m - 1) if j0 < m - 1 else (j0, 0)
    fallback = False
    if cand != j0 and (model is not None or ops_provider is not None):
        ops_for = _OpsMemo(model, library, ops_provider)
        tol = _feas_tol(epsilon)

        def feasible(j):
            return minimize_constraint(ops_for(j), x)[1] <= epsilon + tol

        if not feasible(cand):
            fallback = True
            lo, hi = j0, cand
            while hi - lo > 1:
                mid = (lo + hi) // 2
                probes += 1
                if feasible(mid):
                    lo = mid
                else:
                    hi = mid
            cand = lo
    return SelectionOutcome(
        record=library[cand],
        mu_index=cand,
        slack=float(epsilon - quad - tb[cand]),
        probes=probes,
        fallback=fallback,
    )


def select_method2(
    library: GainLibrary,
    prev: SelectionOutcome,
    model: PlantModel,
    x,
    epsilon: float,
    ops_provider=None,
    tie_rtol: float = TIE_RTOL,
) -> SelectionOutcome:
    """Cheapest-at-the-constraint-minimiser gain among those that keep the problem feasible.

    Costs within ``tie_rtol * (1 + |min|)`` of the smallest one are tied, and
    ties go to the larger weight.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    j0, m = prev.mu_index, len(library)
    ops_for = _OpsMemo(model, library, ops_provider)
    mins = {}

    def minimised(j):
        if j not in mins:
            mins[j] = minimize_constraint(ops_for(j), x)
        return mins[j]

    if j0 < m - 1:
        top, probes = _largest_true(lambda j: minimised(j)[1] <= epsilon, j0, m - 1)
    else:
        top, probes = j0, 0
    costs = np.array([float(x @ ops_for(j).min_constraint_cost @ x) for j in range(j0, top + 1)])
    vmin = float(costs.min())
    best = j0 + int(np.nonzero(costs <= vmin + tie_rtol * (1.0 + abs(vmin)))[0][-1])
    best_val = float(costs[best - j0])
    c_o, v_min = minimised(best)
    return SelectionOutcome(
        record=library[best],
        mu_index=best,
        slack=float(epsilon - v_min),
        probes=probes,
        extra={"mu_tilde_index": top, "cost": best_val},
    )


def membership_values(library: GainLibrary, model: PlantModel, x0, ops_provider=None) -> np.ndarray:
    """Minimised constraint left-hand side at ``x0`` for every grid weight."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    ops_for = _OpsMemo(model, library, ops_provider)
    return np.array([float(x0 @ ops_for(j).constraint_schur @ x0) + library.trace_bar[j]
                     for j in range(len(library))])


def initial_gain(
    library: GainLibrary,
    model: PlantModel,
    x0,
    epsilon0: float,
    policy="largest",
    ops_provider=None,
) -> SelectionOutcome:
    """Pick the starting gain among those whose feasible set contains ``x0``.

    ``policy`` is ``"largest"``, ``"smallest"`` or an explicit grid weight.
    """
    values = membership_values(library, model, x0, ops_provider)
    ok = values <= epsilon0 + _feas_tol(epsilon0)
    if isinstance(policy, str):
        if policy not in POLICIES:
            raise StructuralError(f"unknown initial-gain policy {policy!r}")
        if not ok.any():
            j = int(np.argmin(values))
            raise InitialInfeasibilityError(
                f"x0 is outside the feasible set for every grid weight; closest is mu={library.grid[j]:.6g} "
                f"with gap {values[j] - epsilon0:.6g}",
                gap=float(values[j] - epsilon0),
            )
        idx = np.nonzero(ok)[0]
        j = int(idx[-1] if policy == "largest" else idx[0])
    else:
        j = library.index_of(float(policy))
        if not ok[j]:
            raise InitialInfeasibilityError(
                f"x0 is infeasible at mu={library.grid[j]:.6g} (gap {values[j] - epsilon0:.6g})",
                gap=float(values[j] - epsilon0),
            )
    return SelectionOutcome(record=library[j], mu_index=j, slack=float(epsilon0 - values[j]))


def feasible_set_boundary(record: GainRecord, model: PlantModel, epsilon0: float, directions) -> np.ndarray:
    """Radius of the initial feasible set along each unit direction.

    ``inf`` marks directions along which the minimised quadratic vanishes; an
    empty set (``trace_bar > epsilon0``) gives zero everywhere.
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    ops = build_prediction_operators(model, record)
    budget = epsilon0 - record.trace_bar
    if budget <= 0.0:
        return np.zeros(D.shape[0])
    q = np.einsum("ni,ij,nj->n", D, ops.constraint_schur, D)
    scale = 1e-14 * max(1.0, float(np.abs(ops.constraint_schur).max()))
    radii = np.full(D.shape[0], np.inf)
    pos = q > scale
    radii[pos] = np.sqrt(budget / q[pos])
    return radii


def unit_directions(count: int, nx: int = 2) -> np.ndarray:
    """Evenly spaced directions on the unit circle (first two coordinates)."""
    if nx < 2:
        return np.array([[1.0], [-1.0]])[: max(count, 1)]
    theta = 2.0 * np.pi * np.arange(count) / count
    D = np.zeros((count, nx))
    D[:, 0] = np.cos(theta)
    D[:, 1] = np.sin(theta)
    return D
