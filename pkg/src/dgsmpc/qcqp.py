"""Online problem: a convex quadratic objective under one convex quadratic constraint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InfeasibleError, NonConvergenceError, NumericalError
from .prediction import PredictionOperators

PINV_RTOL = 1e-10
RIDGE_COND = 1e12
RIDGE = 1e-12
# |g| tolerance of the multiplier search, relative to (1 + |eps|)
ROOT_RTOL = 1e-9
FEAS_RTOL = 1e-9
MAX_ITER = 200
DCUT_RTOL = 1e-10


def pinv_psd(M: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Pseudoinverse of a symmetric PSD matrix, dropping eigenvalues below ``rtol * max``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M.T.copy()
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    top = max(float(w[-1]), 0.0)
    keep = w > rtol * top
    if not keep.any():
        return np.zeros_like(M)
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T


@dataclass(frozen=True, eq=False)
class SecularForm:
    """Both c-block Hessians diagonalised at once: ``T' W2_cc T = I``, ``T' W1_cc T = diag(d)``."""

    T: np.ndarray
    d: np.ndarray
    TA: np.ndarray  # T' W2_cx
    TB: np.ndarray  # T' W1_cx
    dcut: float
    ridge: float


def build_secular_form(ops: PredictionOperators) -> SecularForm:
    nx = ops.nx
    W2cc = ops.W2[nx:, nx:]
    W1cc = ops.W_cc
    ridge = 0.0
    if np.linalg.cond(W2cc) > RIDGE_COND:
        ridge = RIDGE
        W2cc = W2cc + ridge * np.eye(W2cc.shape[0])
    try:
        Lc = np.linalg.cholesky(W2cc)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("cost Hessian on the perturbation block is not positive definite") from exc
    Linv = np.linalg.inv(Lc)
    M = Linv @ W1cc @ Linv.T
    d, V = np.linalg.eigh(0.5 * (M + M.T))
    d = np.clip(d, 0.0, None)
    T = Linv.T @ V
    dmax = float(d.max()) if d.size else 0.0
    return SecularForm(
        T=T,
        d=d,
        TA=T.T @ ops.W2[nx:, :nx],
        TB=T.T @ ops.W_cx,
        dcut=DCUT_RTOL * dmax,
        ridge=ridge,
    )


@dataclass(frozen=True)
class QcqpSolution:
    c_star: np.ndarray
    multiplier: float
    constraint_active: bool
    objective: float
    constraint_value: float
    iterations: int = 0
    ridge: float = 0.0


def minimize_constraint(ops: PredictionOperators, x) -> tuple[np.ndarray, float]:
    """Constraint minimiser ``c_o = -W_cc^+ W_cx x`` and the minimised left-hand side."""
    x = np.asarray(x, dtype=float).reshape(-1)
    c_o = -(ops.constraint_gain @ x)
    z = np.concatenate([x, c_o])
    return c_o, float(z @ ops.W1 @ z) + ops.trace_bar


def solve_mpc(ops: PredictionOperators, x, epsilon: float) -> QcqpSolution:
    """Minimise ``[x;c]' W2 [x;c]`` subject to ``[x;c]' W1 [x;c] + trace_bar <= epsilon``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    epsilon = float(epsilon)
    c_o, v_min = minimize_constraint(ops, x)
    slack = FEAS_RTOL * (1.0 + abs(epsilon)) if np.isfinite(epsilon) else 0.0
    if v_min > epsilon + slack:
        raise InfeasibleError(
            f"constraint minimum {v_min:.12g} exceeds epsilon {epsilon:.12g}", gap=v_min - epsilon
        )
    sf = ops.secular_form
    nx = ops.nx
    const = float(x @ ops.W_xx @ x) + ops.trace_bar - epsilon
    gtol = ROOT_RTOL * (1.0 + abs(epsilon)) if np.isfinite(epsilon) else 0.0
    a = sf.TA @ x
    b = sf.TB @ x
    status, lam, y, g, iters = kernels.secular_solve(
        sf.d, a, b, const, sf.dcut, gtol, slack, MAX_ITER
    )
    if status == kernels.NO_CONVERGENCE:
        raise NonConvergenceError(f"multiplier search did not converge in {iters} iterations", residual=g)
    if status == kernels.NON_MONOTONE:
        raise NumericalError(f"constraint excess not monotone in the multiplier near {lam:.6g}")
    if status == kernels.INFEASIBLE:
        raise InfeasibleError(f"constraint minimum exceeds epsilon by {g:.3e}", gap=float(g))
    if status == kernels.AT_MINIMUM:
        c = c_o
    else:
        c = sf.T @ y
    z = np.concatenate([x, c])
    return QcqpSolution(
        c_star=c,
        multiplier=float(lam),
        constraint_active=status != kernels.UNCONSTRAINED,
        objective=float(z @ ops.W2 @ z),
        constraint_value=float(z @ ops.W1 @ z) + ops.trace_bar,
        iterations=int(iters),
        ridge=sf.ridge,
    )
