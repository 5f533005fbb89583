"""Stacked nominal predictions and the constraint/cost quadratic forms.

With ``z = [x; c]`` (current state and the ``N`` perturbation blocks) the
constraint left-hand side is ``z' W1 z + trace_bar`` and the predicted cost is
``z' W2 z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import PlantModel
from .synthesis import GainRecord


def _sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class PredictionOperators:
    M_x: np.ndarray
    M_c: np.ndarray
    H: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    gain: GainRecord
    nx: int
    nc: int

    @property
    def K(self):
        return self.gain.L

    @property
    def P_tilde(self):
        return self.gain.P_bar

    @property
    def P(self):
        return self.gain.P_hat

    @property
    def trace_bar(self) -> float:
        return self.gain.trace_bar

    # blocks of W1 in the (x, c) partition
    @property
    def W_xx(self):
        return self.W1[: self.nx, : self.nx]

    @property
    def W_xc(self):
        return self.W1[: self.nx, self.nx :]

    @property
    def W_cx(self):
        return self.W1[self.nx :, : self.nx]

    @property
    def W_cc(self):
        return self.W1[self.nx :, self.nx :]

    @cached_property
    def constraint_gain(self) -> np.ndarray:
        """``W_cc^+ W_cx``; the constraint minimiser is ``-constraint_gain @ x``."""
        from .qcqp import pinv_psd

        return pinv_psd(self.W_cc) @ self.W_cx

    @cached_property
    def constraint_schur(self) -> np.ndarray:
        """``W_xx - W_xc W_cc^+ W_cx``; minimised constraint quadratic in ``x``."""
        return _sym(self.W_xx - self.W_xc @ self.constraint_gain)

    @cached_property
    def secular_form(self):
        from .qcqp import build_secular_form

        return build_secular_form(self)

    @cached_property
    def min_constraint_cost(self) -> np.ndarray:
        """``x -> [x; c_o]' W2 [x; c_o]`` at the constraint minimiser ``c_o``."""
        Tz = np.vstack([np.eye(self.nx), -self.constraint_gain])
        return _sym(Tz.T @ self.W2 @ Tz)


def closed_loop_powers(Phi: np.ndarray, N: int):
    powers = [np.eye(Phi.shape[0])]
    for _ in range(N):
        powers.append(Phi @ powers[-1])
    return powers


def build_prediction_operators(model: PlantModel, gain: GainRecord) -> PredictionOperators:
    A, B, C, Q, R = model.A, model.B, model.C, model.Q, model.R
    nx, nu, N, gamma = model.nx, model.nu, model.N, model.gamma
    nc = N * nu
    K = gain.L
    Phi = A + B @ K
    Pw = closed_loop_powers(Phi, N)

    M_x = np.vstack(Pw[1:])
    M_c = np.zeros((N * nx, nc))
    for i in range(1, N + 1):
        for j in range(i):
            M_c[(i - 1) * nx : i * nx, j * nu : (j + 1) * nu] = Pw[i - 1 - j] @ B

    CtC = C.T @ C
    H = np.zeros((N * nx, N * nx))
    for i in range(1, N + 1):
        blk = gain.P_bar if i == N else CtC
        H[(i - 1) * nx : i * nx, (i - 1) * nx : i * nx] = gamma**i * blk

    W1 = np.block([
        [CtC + M_x.T @ H @ M_x, M_x.T @ H @ M_c],
        [M_c.T @ H @ M_x, M_c.T @ H @ M_c],
    ])

    # Stage maps: T_i z = xbar_i, S_i z = c_i.
    nz = nx + nc
    T = [np.hstack([np.eye(nx), np.zeros((nx, nc))])]
    for i in range(1, N + 1):
        rows = slice((i - 1) * nx, i * nx)
        T.append(np.hstack([M_x[rows], M_c[rows]]))
    W2 = np.zeros((nz, nz))
    QK = Q + K.T @ R @ K
    for i in range(N):
        S = np.zeros((nu, nz))
        S[:, nx + i * nu : nx + (i + 1) * nu] = np.eye(nu)
        cross = T[i].T @ K.T @ R @ S
        W2 += T[i].T @ QK @ T[i] + cross + cross.T + S.T @ R @ S
    W2 += T[N].T @ gain.P_hat @ T[N]

    ops = PredictionOperators(
        M_x=M_x, M_c=M_c, H=H, W1=_sym(W1), W2=_sym(W2), gain=gain, nx=nx, nc=nc,
    )
    for arr in (ops.M_x, ops.M_c, ops.H, ops.W1, ops.W2):
        arr.setflags(write=False)
    return ops


def _stack(x, c):
    return np.concatenate([np.asarray(x, float).reshape(-1), np.asarray(c, float).reshape(-1)])


def constraint_lhs(ops: PredictionOperators, x, c) -> float:
    z = _stack(x, c)
    return float(z @ ops.W1 @ z) + ops.trace_bar


def cost_value(ops: PredictionOperators, x, c) -> float:
    z = _stack(x, c)
    return float(z @ ops.W2 @ z)


def recursive_cost_oracle(model: PlantModel, K, P, x, c) -> float:
    """Finite-horizon predicted cost by forward simulation of the nominal dynamics."""
    K = np.asarray(K, float)
    P = np.asarray(P, float)
    xi = np.asarray(x, float).reshape(-1)
    cs = np.asarray(c, float).reshape(model.N, model.nu)
    total = 0.0
    for ci in cs:
        ui = K @ xi + ci
        total += xi @ model.Q @ xi + ui @ model.R @ ui
        xi = model.A @ xi + model.B @ ui
    return float(total + xi @ P @ xi)
