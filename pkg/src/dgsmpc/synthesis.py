"""Offline synthesis of the gain library by the scalarised DP fixed-point iteration.

For a weight ``mu`` in (0, 1] the iteration trades the discounted constraint
objective (weight ``1 - mu``) against the undiscounted LQ cost (weight ``mu``).
Each converged gain comes with two certificate matrices:

* ``P_bar`` solves ``P = C'C + gamma * Phi' P Phi`` (discounted constraint value),
* ``P_hat`` solves ``P = Q + L'RL + Phi' P Phi`` (LQ cost of the gain),

with ``Phi = A + B L``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CertificationError, NonConvergenceError, StaleLibraryError, StructuralError
from .model import PlantModel, is_strictly_stable, require_valid, solve_discounted_lyapunov

log = logging.getLogger(__name__)

LIBRARY_FORMAT = "dgsmpc.gain_library"
LIBRARY_VERSION = 1

DEFAULT_GRID_SIZE = 2000
DEFAULT_MU_MIN = 1e-15
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
CERT_TOL = 1e-8
TIGHTENING = (1.0, 1e-2, 1e-4, 1e-5)


class StationarityError(CertificationError):
    """The gain is not a fixed point of its own certificates."""


@dataclass(frozen=True)
class GainRecord:
    mu: float
    L: np.ndarray
    P_bar: np.ndarray
    P_hat: np.ndarray
    trace_bar: float
    trace_hat: float

    def scalarised(self) -> np.ndarray:
        """``S(mu) = (1 - mu) P_bar + mu P_hat``."""
        return (1.0 - self.mu) * self.P_bar + self.mu * self.P_hat

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "L": self.L.tolist(),
            "P_bar": self.P_bar.tolist(),
            "P_hat": self.P_hat.tolist(),
            "trace_bar": self.trace_bar,
            "trace_hat": self.trace_hat,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GainRecord":
        return make_record(
            d["mu"], np.array(d["L"], float), np.array(d["P_bar"], float), np.array(d["P_hat"], float),
            trace_bar=d.get("trace_bar"), trace_hat=d.get("trace_hat"), Omega=None, gamma=None,
        )


def make_record(mu, L, P_bar, P_hat, *, Omega, gamma, trace_bar=None, trace_hat=None) -> GainRecord:
    for arr in (L, P_bar, P_hat):
        arr.setflags(write=False)
    if trace_bar is None:
        trace_bar = gamma / (1.0 - gamma) * float(np.trace(Omega @ P_bar))
    if trace_hat is None:
        trace_hat = float(np.trace(Omega @ P_hat))
    return GainRecord(
        mu=float(mu), L=L, P_bar=P_bar, P_hat=P_hat,
        trace_bar=float(trace_bar), trace_hat=float(trace_hat),
    )


def gain_from_sigma(model: PlantModel, mu: float, Sigma: np.ndarray) -> np.ndarray:
    B = model.B
    lhs = mu * model.R + B.T @ Sigma @ B
    return -np.linalg.solve(lhs, B.T @ Sigma @ model.A)


def record_from_gain(model: PlantModel, L, mu=None) -> GainRecord:
    """Certificate matrices of an arbitrary stabilising gain (fixed-gain mode)."""
    L = np.array(L, dtype=float).reshape(model.nu, model.nx)
    Phi = model.A + model.B @ L
    if not is_strictly_stable(Phi):
        raise CertificationError("gain is not strictly stabilising")
    P_bar = solve_discounted_lyapunov(Phi, model.C.T @ model.C, model.gamma)
    P_hat = solve_discounted_lyapunov(Phi, model.Q + L.T @ model.R @ L, 1.0)
    return make_record(float("nan") if mu is None else mu, L, P_bar, P_hat,
                       Omega=model.Omega, gamma=model.gamma)


def certify(model: PlantModel, rec: GainRecord, tol: float = CERT_TOL) -> None:
    """Raise :class:`CertificationError` unless ``rec`` passes every record invariant."""
    A, B, C = model.A, model.B, model.C
    L, P_bar, P_hat = rec.L, rec.P_bar, rec.P_hat
    Phi = A + B @ L
    if not is_strictly_stable(Phi):
        raise CertificationError(f"mu={rec.mu:.6g}: gain is not strictly stabilising")
    if not is_strictly_stable(Phi, model.gamma):
        raise CertificationError(f"mu={rec.mu:.6g}: sqrt(gamma)*Phi not stable")
    r_bar = np.linalg.norm(P_bar - C.T @ C - model.gamma * Phi.T @ P_bar @ Phi)
    r_hat = np.linalg.norm(P_hat - model.Q - L.T @ model.R @ L - Phi.T @ P_hat @ Phi)
    if r_bar > tol * (1.0 + np.linalg.norm(P_bar)) or r_hat > tol * (1.0 + np.linalg.norm(P_hat)):
        raise CertificationError(f"mu={rec.mu:.6g}: Lyapunov residuals {r_bar:.2e}, {r_hat:.2e}")
    mu = rec.mu
    Sigma = model.gamma * (1.0 - mu) * P_bar + mu * P_hat
    r_L = np.linalg.norm(L - gain_from_sigma(model, mu, Sigma))
    if r_L > tol * (1.0 + np.linalg.norm(L)):
        raise StationarityError(f"mu={rec.mu:.6g}: stationarity residual {r_L:.2e}")


def dp_fixed_point(
    model: PlantModel,
    mu: float,
    warm_start=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    validate: bool = True,
) -> GainRecord:
    """Run the DP iteration for one weight ``mu`` until the certificates settle.

    The stopping test is ``|dP_bar|_F + |dP_hat|_F <= tol * max(1, |P_bar|_F + |P_hat|_F)``.
    The converged gain is then polished: both certificates are re-solved exactly
    for the final gain and the record is certified.
    """
    if validate:
        require_valid(model)
    if not 0.0 < mu <= 1.0:
        raise StructuralError(f"mu must lie in (0, 1], got {mu}")
    if tol <= 0:
        raise StructuralError("tol must be positive")
    A, B, C, Q, R, gamma = model.A, model.B, model.C, model.Q, model.R, model.gamma
    CtC = C.T @ C
    if warm_start is None:
        P_bar = np.zeros_like(A)
        P_hat = np.zeros_like(A)
    else:
        P_bar, P_hat = (np.array(m, dtype=float) for m in warm_start)

    # A slowly contracting iteration (closed-loop pole near 1) can pass the step
    # test while the gain is still off the fixed point; tighten and continue.
    for factor in TIGHTENING:
        P_bar, P_hat = _iterate(model, mu, P_bar, P_hat, max(tol * factor, 1e-15), max_iter)
        Sigma = gamma * (1.0 - mu) * P_bar + mu * P_hat
        L = gain_from_sigma(model, mu, Sigma)
        Phi = A + B @ L
        if not is_strictly_stable(Phi):
            raise CertificationError(f"mu={mu:.6g}: converged gain is not strictly stabilising")
        rec = make_record(mu, L, solve_discounted_lyapunov(Phi, CtC, gamma),
                          solve_discounted_lyapunov(Phi, Q + L.T @ R @ L, 1.0),
                          Omega=model.Omega, gamma=gamma)
        try:
            certify(model, rec)
            return rec
        except StationarityError as exc:
            last = exc
            log.debug("mu=%.6g: %s; tightening the step test", mu, exc)
    raise last


def _iterate(model, mu, P_bar, P_hat, tol, max_iter):
    A, B, Q, R, gamma = model.A, model.B, model.Q, model.R, model.gamma
    CtC = model.C.T @ model.C
    resid = np.inf
    for _ in range(max_iter):
        Sigma = gamma * (1.0 - mu) * P_bar + mu * P_hat
        L = gain_from_sigma(model, mu, Sigma)
        Phi = A + B @ L
        P_bar_new = CtC + gamma * Phi.T @ P_bar @ Phi
        P_hat_new = Q + L.T @ R @ L + Phi.T @ P_hat @ Phi
        P_bar_new = 0.5 * (P_bar_new + P_bar_new.T)
        P_hat_new = 0.5 * (P_hat_new + P_hat_new.T)
        resid = np.linalg.norm(P_bar_new - P_bar) + np.linalg.norm(P_hat_new - P_hat)
        P_bar, P_hat = P_bar_new, P_hat_new
        if not np.isfinite(resid):
            raise NonConvergenceError(f"DP iteration at mu={mu:.6g} diverged", residual=resid)
        if resid <= tol * max(1.0, np.linalg.norm(P_bar) + np.linalg.norm(P_hat)):
            return P_bar, P_hat
    raise NonConvergenceError(f"DP iteration at mu={mu:.6g} did not converge", residual=resid)


def default_grid(count: int = DEFAULT_GRID_SIZE, mu_min: float = DEFAULT_MU_MIN, spacing: str = "log"):
    """Ascending weights ending at exactly 1; gaps widen towards 1 for both laws."""
    if count < 1:
        raise StructuralError("grid count must be >= 1")
    if not 0.0 < mu_min <= 1.0:
        raise StructuralError("mu_min must lie in (0, 1]")
    if count == 1:
        return np.array([1.0])
    if spacing == "log":
        grid = np.logspace(np.log10(mu_min), 0.0, count)
    elif spacing == "quadratic":
        t = np.linspace(0.0, 1.0, count)
        grid = mu_min + (1.0 - mu_min) * t**2
    elif spacing == "linear":
        grid = np.linspace(mu_min, 1.0, count)
    else:
        raise StructuralError(f"unknown grid spacing {spacing!r}")
    grid[-1] = 1.0
    return grid


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise StructuralError("empty mu grid")
    if np.any(grid <= 0.0) or np.any(grid > 1.0):
        raise StructuralError("grid values must lie in (0, 1]")
    if np.any(np.diff(grid) <= 0.0):
        raise StructuralError("grid must be strictly increasing")
    if grid[-1] != 1.0:
        raise StructuralError("grid must end at mu = 1")
    return grid


class GainLibrary:
    """Certified gains on an ascending ``mu`` grid ending at 1."""

    def __init__(self, grid, records, model_hash: str = ""):
        self.grid = check_grid(grid)
        self.records = tuple(records)
        if len(self.records) != self.grid.size:
            raise StructuralError("one record per grid point is required")
        self.model_hash = model_hash
        self.trace_bar = np.array([r.trace_bar for r in self.records])
        self.trace_hat = np.array([r.trace_hat for r in self.records])
        self.grid.setflags(write=False)
        self.trace_bar.setflags(write=False)
        self.trace_hat.setflags(write=False)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> GainRecord:
        return self.records[i]

    def index_of(self, mu: float, rtol: float = 1e-12) -> int:
        i = int(np.argmin(np.abs(self.grid - mu)))
        if abs(self.grid[i] - mu) > rtol * max(mu, 1e-300):
            raise KeyError(f"mu={mu!r} is not on the grid")
        return i

    def monotonicity_violations(self, tol: float = 1e-8):
        """Indices where the trace columns break the required ordering."""
        tb, th = self.trace_bar, self.trace_hat
        bad_bar = np.nonzero(np.diff(tb) < -tol * (1.0 + np.abs(tb[1:])))[0]
        bad_hat = np.nonzero(np.diff(th) > tol * (1.0 + np.abs(th[1:])))[0]
        return bad_bar, bad_hat

    def to_dict(self) -> dict:
        return {
            "header": {"format": LIBRARY_FORMAT, "version": LIBRARY_VERSION, "model_hash": self.model_hash},
            "grid": self.grid.tolist(),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict, model: PlantModel | None = None) -> "GainLibrary":
        header = d.get("header", {})
        if header.get("format") != LIBRARY_FORMAT:
            raise StructuralError("not a gain-library document")
        if header.get("version") != LIBRARY_VERSION:
            raise StructuralError(f"unsupported gain-library version {header.get('version')!r}")
        if model is not None and header.get("model_hash") != model.fingerprint():
            raise StaleLibraryError("gain library was synthesised for a different model")
        records = [GainRecord.from_dict(r) for r in d["records"]]
        return cls(d["grid"], records, header.get("model_hash", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path, model: PlantModel | None = None) -> "GainLibrary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), model)


def generate_gain_library(
    model: PlantModel,
    grid=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> GainLibrary:
    """Solve the DP fixed point along ``grid``, warm-starting each weight from the previous one."""
    require_valid(model)
    grid = check_grid(default_grid() if grid is None else grid)
    records = []
    warm = None
    for mu in grid:
        try:
            rec = dp_fixed_point(model, float(mu), warm_start=warm, tol=tol, max_iter=max_iter, validate=False)
        except (NonConvergenceError, CertificationError) as exc:
            raise type(exc)(f"gain synthesis failed at mu={mu!r}: {exc}") from exc
        records.append(rec)
        warm = (rec.P_bar, rec.P_hat)
    if len(records) > 1 and np.linalg.norm(records[0].L - records[1].L) < 1e-12:
        log.warning("first two grid gains coincide; mu_1=%g is too small to distinguish records", grid[0])
    lib = GainLibrary(grid, records, model.fingerprint())
    bad_bar, bad_hat = lib.monotonicity_violations()
    if bad_bar.size or bad_hat.size:
        raise CertificationError(
            f"trace monotonicity violated at grid indices {bad_bar.tolist()} / {bad_hat.tolist()}"
        )
    return lib
