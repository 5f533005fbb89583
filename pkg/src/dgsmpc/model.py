"""Plant/problem data, assumption checks and the discounted Lyapunov solver."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidModelError, NumericalError, StructuralError

# Operational test for "strictly stabilising".
STABILITY_MARGIN = 1e-9
RANK_RTOL = 1e-10
KRONECKER_MAX_DIM = 50


def _as_matrix(value, name):
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a bare vector is read as a column (n_u = 1 input matrices, etc.)
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise StructuralError(f"{name} must be a matrix, got ndim={arr.ndim}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PlantModel:
    """LTI plant ``x+ = A x + B u + w`` with the discounted chance constraint data.

    ``C, gamma, e`` describe the constraint ``sum_k gamma^k P{|C x_k| >= 1} <= e``;
    ``Q, R`` weight the quadratic cost; ``Omega`` is the disturbance covariance
    and ``N`` the prediction horizon.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Omega: np.ndarray
    gamma: float
    e: float
    N: int
    _hash: str = field(default="", init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R", "Omega"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "e", float(self.e))
        if int(self.N) != self.N:
            raise StructuralError(f"N must be an integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        check_dimensions(self)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def nc(self) -> int:
        """Number of perturbation decision variables, ``N * n_u``."""
        return self.N * self.nu

    @property
    def trace_factor(self) -> float:
        return self.gamma / (1.0 - self.gamma)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "Omega": self.Omega.tolist(),
            "gamma": self.gamma,
            "e": self.e,
            "N": self.N,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlantModel":
        keys = ("A", "B", "C", "Q", "R", "Omega", "gamma", "e", "N")
        missing = [k for k in keys if k not in data]
        if missing:
            raise StructuralError(f"model document is missing keys {missing}")
        return cls(**{k: data[k] for k in keys})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PlantModel":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON form; used to reject stale gain libraries."""
        if not self._hash:
            digest = hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()
            object.__setattr__(self, "_hash", digest)
        return self._hash


def coupled_tank_model(N: int = 10) -> PlantModel:
    """The linearised coupled-tank benchmark (sampling time 0.05 s)."""
    return PlantModel(
        A=[[0.8207, 0.04], [0.0799, 0.7808]],
        B=[[0.0454, 0.0011], [0.0022, 0.0443]],
        C=[[0.3, 0.15], [0.1, -0.1]],
        Q=np.eye(2),
        R=np.eye(2),
        Omega=np.eye(2),
        gamma=0.9,
        e=1.5,
        N=N,
    )


def check_dimensions(model: PlantModel) -> None:
    nx = model.A.shape[0]
    pairs = [
        ("A", "A", model.A.shape[0], model.A.shape[1]),
        ("A", "B", nx, model.B.shape[0]),
        ("A", "C", nx, model.C.shape[1]),
        ("A", "Q", (nx, nx), model.Q.shape),
        ("B", "R", (model.B.shape[1],) * 2, model.R.shape),
        ("A", "Omega", (nx, nx), model.Omega.shape),
    ]
    for left, right, expect, got in pairs:
        if expect != got:
            raise StructuralError(f"dimension mismatch between {left} and {right}: {expect} vs {got}")
    if model.N < 1:
        raise StructuralError(f"horizon N must be >= 1, got {model.N}")


@dataclass(frozen=True)
class ValidationReport:
    controllable: bool
    observable: bool
    rank_deficiencies: list
    spectral_radius_A: float

    @property
    def ok(self) -> bool:
        return not self.rank_deficiencies

    def to_dict(self) -> dict:
        return {
            "controllable": self.controllable,
            "observable": self.observable,
            "rank_deficiencies": list(self.rank_deficiencies),
            "spectral_radius_A": self.spectral_radius_A,
        }


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def is_controllable(A, B) -> bool:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return numerical_rank(np.hstack(blocks)) == n


def is_observable(A, Cobs) -> bool:
    n = A.shape[0]
    blocks = [Cobs]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return numerical_rank(np.vstack(blocks)) == n


def _min_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def validate_model(model: PlantModel) -> ValidationReport:
    check_dimensions(model)
    findings = []
    for name in ("Q", "R", "Omega"):
        M = getattr(model, name)
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(M).max())):
            findings.append(f"{name} not symmetric")
    scale = lambda M: 1e-12 * max(1.0, float(np.abs(M).max()))  # noqa: E731
    if _min_eig(model.Q) < -scale(model.Q):
        findings.append("Q not positive semidefinite")
    if _min_eig(model.R) <= scale(model.R):
        findings.append("R not positive definite")
    if _min_eig(model.Omega) <= scale(model.Omega):
        findings.append("Omega not positive definite")
    controllable = is_controllable(model.A, model.B)
    if not controllable:
        findings.append("(A, B) not controllable")
    observable = is_observable(model.A, psd_sqrt(model.Q))
    if not observable:
        findings.append("(A, Q^1/2) not observable")
    if not 0.0 < model.gamma < 1.0:
        findings.append("gamma outside (0, 1)")
    if not model.e > 0.0:
        findings.append("e not positive")
    return ValidationReport(
        controllable=controllable,
        observable=observable,
        rank_deficiencies=findings,
        spectral_radius_A=spectral_radius(model.A),
    )


def require_valid(model: PlantModel) -> ValidationReport:
    report = validate_model(model)
    if not report.ok:
        raise InvalidModelError("invalid model: " + "; ".join(report.rank_deficiencies))
    return report


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise StructuralError(f"spectral radius needs a square matrix, got shape {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_strictly_stable(M, scale: float = 1.0) -> bool:
    return np.sqrt(scale) * spectral_radius(M) < 1.0 - STABILITY_MARGIN


def solve_discounted_lyapunov(Phi, S, scale: float = 1.0) -> np.ndarray:
    """Solve ``P = scale * Phi' P Phi + S``.

    Equivalent to the series ``sum_j scale^j (Phi')^j S Phi^j``. Small systems use
    the vectorised Kronecker form; larger ones fall back to Smith doubling.
    """
    Phi = np.asarray(Phi, dtype=float)
    S = np.asarray(S, dtype=float)
    if Phi.ndim != 2 or Phi.shape[0] != Phi.shape[1] or S.shape != Phi.shape:
        raise StructuralError(f"Phi {Phi.shape} and S {S.shape} must be equal square shapes")
    if not 0.0 < scale <= 1.0:
        raise StructuralError(f"scale must lie in (0, 1], got {scale}")
    rho = np.sqrt(scale) * spectral_radius(Phi)
    if rho >= 1.0:
        raise DivergenceError(f"discounted series diverges: sqrt(scale)*rho(Phi) = {rho:.6g} >= 1")
    n = Phi.shape[0]
    if n <= KRONECKER_MAX_DIM:
        lhs = np.eye(n * n) - scale * np.kron(Phi.T, Phi.T)
        P = np.linalg.solve(lhs, S.reshape(-1)).reshape(n, n)
    else:
        P = _smith_doubling(Phi, S, scale)
    P = 0.5 * (P + P.T)
    resid = np.linalg.norm(P - scale * Phi.T @ P @ Phi - S)
    if not resid <= 1e-8 * (1.0 + np.linalg.norm(P)):
        raise NumericalError(f"Lyapunov residual {resid:.3e} exceeds tolerance")
    return P


def _smith_doubling(Phi, S, scale, max_iter=200):
    Ak = np.sqrt(scale) * Phi
    P = 0.5 * (S + S.T)
    for _ in range(max_iter):
        step = Ak.T @ P @ Ak
        P = P + step
        Ak = Ak @ Ak
        if np.linalg.norm(step) <= 1e-16 * (1.0 + np.linalg.norm(P)):
            break
    return P
