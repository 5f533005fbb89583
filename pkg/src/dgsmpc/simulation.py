"""Disturbances, closed-loop rollouts and Monte Carlo aggregation."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bank import OperatorBank
from .controller import ControllerConfig, write_trace_csv
from .errors import ConfigError, InfeasibleError, NonConvergenceError, NumericalError, StructuralError
from .model import PlantModel
from .qcqp import MAX_ITER, ROOT_RTOL
from .selection import initial_gain
from .synthesis import GainLibrary, GainRecord

DISTRIBUTIONS = ("laplace", "gaussian")
MODE_CODES = {"fixed": kernels.MODE_FIXED, "method1": kernels.MODE_METHOD1, "method2": kernels.MODE_METHOD2}
DEFAULT_VIOLATION_HORIZON = 150
Z95 = 1.959963984540054


def derive_seed(base_seed: int, run: int) -> int:
    """Independent, individually replayable 64-bit seed for run ``run``."""
    ss = np.random.SeedSequence([int(base_seed), int(run)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class DisturbanceSampler:
    """Zero-mean disturbances with covariance ``Omega``.

    The Laplace draw is the normal variance mixture ``sqrt(E) * L z`` with
    ``E ~ Exp(1)``, so its covariance is ``L L' = Omega`` and each marginal has
    fourth-moment ratio 6.
    """

    def __init__(self, Omega, seed: int, distribution: str = "laplace"):
        if distribution not in DISTRIBUTIONS:
            raise StructuralError(f"distribution must be one of {DISTRIBUTIONS}, got {distribution!r}")
        Omega = np.asarray(Omega, dtype=float)
        try:
            self.cholesky_factor = np.linalg.cholesky(0.5 * (Omega + Omega.T))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("disturbance covariance is not positive definite") from exc
        self.seed = int(seed)
        self.distribution = distribution
        self._rng = np.random.default_rng(self.seed)

    @property
    def dim(self) -> int:
        return self.cholesky_factor.shape[0]

    def sample_block(self, n: int) -> np.ndarray:
        """``n`` draws as rows of an ``(n, dim)`` array."""
        z = self._rng.standard_normal((n, self.dim))
        if self.distribution == "laplace":
            z *= np.sqrt(self._rng.standard_exponential(n))[:, None]
        return z @ self.cholesky_factor.T

    def sample(self) -> np.ndarray:
        return self.sample_block(1)[0]


@dataclass
class Trajectory:
    mode: str
    X: np.ndarray  # (T+1, nx)
    U: np.ndarray  # (T, nu)
    EPS: np.ndarray  # (T,) per applied step, like MU, IDX, LAM, STAGE
    MU: np.ndarray
    IDX: np.ndarray
    LAM: np.ndarray
    STAGE: np.ndarray
    VIOL: np.ndarray  # (T+1,) indicator of |C x_k| >= 1 for every visited state
    seed: int
    config_hash: str = ""
    fallbacks: int = 0

    @property
    def steps(self) -> int:
        return self.U.shape[0]

    def discounted_violations(self, gamma: float, horizon: int) -> float:
        kmax = min(horizon, self.steps)
        return float(np.sum(gamma ** np.arange(kmax + 1) * self.VIOL[: kmax + 1]))

    def to_csv(self, path, comment: str | None = None) -> None:
        write_trace_csv(path, self.X, self.U, self.EPS, self.MU, self.LAM, self.STAGE, self.VIOL[:-1], comment)


@dataclass
class Metrics:
    mode: str
    runs: int
    steps: int
    violation_horizon: int
    J_average: float
    J_half_width: float
    P_violation: float
    P_violation_half_width: float
    mu_convergence: float
    mu_final_mean: float
    feasibility_failures: int
    fallbacks: int
    base_seed: int
    config_hash: str = ""
    J_runs: np.ndarray = field(default=None, repr=False)
    P_runs: np.ndarray = field(default=None, repr=False)
    mu_final_runs: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready fields; undefined half-widths (single run) become ``None``."""
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in self._fields().items()}

    def _fields(self) -> dict:
        return {
            "mode": self.mode,
            "runs": self.runs,
            "steps": self.steps,
            "violation_horizon": self.violation_horizon,
            "J_average": self.J_average,
            "J_half_width": self.J_half_width,
            "J_count": self.runs * self.steps,
            "P_violation": self.P_violation,
            "P_violation_half_width": self.P_violation_half_width,
            "P_violation_count": self.runs,
            "mu_convergence": self.mu_convergence,
            "mu_final_mean": self.mu_final_mean,
            "feasibility_failures": self.feasibility_failures,
            "fallbacks": self.fallbacks,
            "base_seed": self.base_seed,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def half_width(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float("nan")
    return float(Z95 * values.std(ddof=1) / np.sqrt(values.size))


class Simulator:
    """Bank, initial gain and kernel arguments prepared once for many rollouts."""

    def __init__(self, model: PlantModel, gains, config: ControllerConfig, x0,
                 bank: OperatorBank | None = None, distribution: str = "laplace"):
        self.model = model
        self.config = config
        self.x0 = np.asarray(x0, dtype=float).reshape(-1)
        if self.x0.shape != (model.nx,):
            raise StructuralError(f"x0 must have {model.nx} entries")
        self.distribution = distribution
        self.eps0 = model.e if config.epsilon0 is None else float(config.epsilon0)
        if isinstance(gains, GainRecord):
            if config.mode != "fixed":
                raise StructuralError("a single gain record can only drive the fixed mode")
            self.bank = bank or OperatorBank.from_record(model, gains)
            self.idx0 = 0
            _, v = self._min_at(0)
            if v > self.eps0 + 1e-9 * (1.0 + abs(self.eps0)):
                raise InfeasibleError(f"x0 infeasible for the fixed gain (gap {v - self.eps0:.6g})",
                                      gap=v - self.eps0)
        else:
            self.bank = bank or OperatorBank.from_library(model, gains)
            sel = initial_gain(gains, model, self.x0, self.eps0, config.initial_policy, ops_provider=self.bank.ops)
            self.idx0 = sel.mu_index
        self.mode_code = MODE_CODES[config.mode]
        self.grid = self.bank.grid

    def _min_at(self, j):
        from .qcqp import minimize_constraint

        return minimize_constraint(self.bank.ops(j), self.x0)

    def disturbances(self, seed: int, steps: int) -> np.ndarray:
        return DisturbanceSampler(self.model.Omega, seed, self.distribution).sample_block(steps)

    def rollout(self, W: np.ndarray, seed: int = 0, config_hash: str = "", raise_on_failure: bool = True):
        m = self.model
        W = np.ascontiguousarray(W, dtype=float)
        X, U, EPS, IDX, LAM, STAGE, status, k_fail, fallbacks = kernels.rollout(
            self.mode_code, self.idx0, self.x0, self.eps0, W, m.A, m.B, m.Q, m.R, m.C, m.gamma,
            *self.bank.kernel_args(), ROOT_RTOL, MAX_ITER, self.config.tie_rtol,
        )
        if status != 0:
            if not raise_on_failure:
                return None
            what = {kernels.INFEASIBLE: "infeasible", kernels.NO_CONVERGENCE: "did not converge",
                    kernels.NON_MONOTONE: "lost monotonicity"}.get(int(status), f"status {status}")
            msg = f"online problem {what} at k={k_fail} (seed {seed})"
            if status == kernels.INFEASIBLE:
                raise InfeasibleError(msg)
            raise NonConvergenceError(msg)
        CX = X @ m.C.T
        VIOL = (np.einsum("ki,ki->k", CX, CX) >= 1.0).astype(np.int8)
        return Trajectory(
            mode=self.config.mode, X=X, U=U, EPS=EPS, MU=self.grid[IDX], IDX=IDX, LAM=LAM,
            STAGE=STAGE, VIOL=VIOL, seed=int(seed), config_hash=config_hash, fallbacks=int(fallbacks),
        )

    def run(self, steps: int, seed: int, config_hash: str = "", raise_on_failure: bool = True):
        return self.rollout(self.disturbances(seed, steps), seed, config_hash, raise_on_failure)


def run_closed_loop(model: PlantModel, gains, config: ControllerConfig, x0, steps: int, seed: int,
                    distribution: str = "laplace", bank: OperatorBank | None = None,
                    config_hash: str = "") -> Trajectory:
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    return Simulator(model, gains, config, x0, bank, distribution).run(steps, seed, config_hash)


def default_workers() -> int:
    raw = os.environ.get("DGSMPC_WORKERS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"DGSMPC_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("DGSMPC_WORKERS must be >= 1")
    return n


def monte_carlo(model: PlantModel, gains, config: ControllerConfig, x0, runs: int, steps: int,
                violation_horizon: int = DEFAULT_VIOLATION_HORIZON, base_seed: int = 0,
                distribution: str = "laplace", bank: OperatorBank | None = None,
                workers: int | None = None, config_hash: str = "", abort_on_failure: bool = True) -> Metrics:
    """Aggregate ``runs`` independent rollouts.

    Run ``i`` uses ``derive_seed(base_seed, i)``, so two modes called with the
    same ``base_seed`` see identical disturbance sequences. Results are reduced
    in run order, so worker count never changes the output.
    """
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if violation_horizon < 0:
        raise ConfigError("violation_horizon must be >= 0")
    sim = Simulator(model, gains, config, x0, bank, distribution)
    workers = default_workers() if workers is None else int(workers)
    last = len(sim.grid) - 1

    J = np.empty(runs)
    P = np.empty(runs)
    mu_final = np.empty(runs)
    at_top = np.zeros(runs, dtype=bool)
    ok = np.ones(runs, dtype=bool)
    fb = np.zeros(runs, dtype=np.int64)

    def one(i):
        seed = derive_seed(base_seed, i)
        tr = sim.run(steps, seed, config_hash, raise_on_failure=abort_on_failure)
        if tr is None:
            ok[i] = False
            return
        J[i] = tr.STAGE.mean()
        P[i] = tr.discounted_violations(model.gamma, violation_horizon)
        mu_final[i] = tr.MU[-1]
        at_top[i] = tr.IDX[-1] == last
        fb[i] = tr.fallbacks

    if workers == 1:
        for i in range(runs):
            one(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(runs)))

    good = ok
    n_good = int(good.sum())
    if n_good == 0:
        raise InfeasibleError("every run failed")
    return Metrics(
        mode=config.mode,
        runs=runs,
        steps=steps,
        violation_horizon=violation_horizon,
        J_average=float(J[good].mean()),
        J_half_width=half_width(J[good]),
        P_violation=float(P[good].mean()),
        P_violation_half_width=half_width(P[good]),
        mu_convergence=float(at_top[good].mean()),
        mu_final_mean=float(mu_final[good].mean()),
        feasibility_failures=int(runs - n_good),
        fallbacks=int(fb.sum()),
        base_seed=int(base_seed),
        config_hash=config_hash,
        J_runs=J[good],
        P_runs=P[good],
        mu_final_runs=mu_final[good],
    )


def paired_difference(a: Metrics, b: Metrics, attr: str = "J_runs"):
    """Mean of ``a - b`` over paired runs and its standard error."""
    da, db = getattr(a, attr), getattr(b, attr)
    if da.shape != db.shape:
        raise StructuralError("paired comparison needs equal run counts")
    diff = da - db
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(diff.size))
