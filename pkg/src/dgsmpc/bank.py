"""Per-grid-index operators stacked into contiguous arrays for the compiled kernels."""

from __future__ import annotations

import numpy as np

from .model import PlantModel
from .prediction import PredictionOperators, build_prediction_operators
from .synthesis import GainLibrary, GainRecord


class OperatorBank:
    """Prediction operators for every record of a library, built once.

    ``ops(j)`` returns the :class:`PredictionOperators` of record ``j``; the
    stacked attributes (``W1``, ``W2``, ``T``, ``d``, ...) hold the same data
    indexed by grid position for :mod:`dgsmpc.kernels`.
    """

    def __init__(self, model: PlantModel, records, grid=None):
        self.model = model
        self.records = tuple(records)
        m = len(self.records)
        self.grid = np.array([r.mu for r in self.records] if grid is None else grid, dtype=float)
        self._ops = [build_prediction_operators(model, r) for r in self.records]
        nx, nc = model.nx, model.nc
        nz = nx + nc
        self.gains = np.empty((m, model.nu, nx))
        self.W1 = np.empty((m, nz, nz))
        self.W2 = np.empty((m, nz, nz))
        self.T = np.empty((m, nc, nc))
        self.d = np.empty((m, nc))
        self.TA = np.empty((m, nc, nx))
        self.TB = np.empty((m, nc, nx))
        self.G = np.empty((m, nc, nx))
        self.Sx = np.empty((m, nx, nx))
        self.F2 = np.empty((m, nx, nx))
        self.trace_bar = np.empty(m)
        self.dcut = np.empty(m)
        self.ridged = np.zeros(m, dtype=bool)
        for j, ops in enumerate(self._ops):
            sf = ops.secular_form
            self.gains[j] = ops.K
            self.W1[j] = ops.W1
            self.W2[j] = ops.W2
            self.T[j] = sf.T
            self.d[j] = sf.d
            self.TA[j] = sf.TA
            self.TB[j] = sf.TB
            self.G[j] = ops.constraint_gain
            self.Sx[j] = ops.constraint_schur
            self.F2[j] = ops.min_constraint_cost
            self.trace_bar[j] = ops.trace_bar
            self.dcut[j] = sf.dcut
            self.ridged[j] = sf.ridge > 0.0

    @classmethod
    def from_library(cls, model: PlantModel, library: GainLibrary) -> "OperatorBank":
        return cls(model, library.records, library.grid)

    @classmethod
    def from_record(cls, model: PlantModel, record: GainRecord) -> "OperatorBank":
        return cls(model, [record])

    def __len__(self):
        return len(self.records)

    def ops(self, j: int) -> PredictionOperators:
        return self._ops[j]

    def min_constraint_values(self, x) -> np.ndarray:
        """Minimised constraint left-hand side at ``x`` for every index."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.einsum("i,mij,j->m", x, self.Sx, x) + self.trace_bar

    def kernel_args(self):
        """Stacked arrays in the order :func:`dgsmpc.kernels.rollout` expects after ``gamma``."""
        return (self.gains, self.T, self.d, self.TA, self.TB, self.W1, self.W2, self.G,
                self.Sx, self.F2, self.trace_bar, self.dcut)
