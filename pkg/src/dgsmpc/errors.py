"""Exception hierarchy."""


class DgsmpcError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class StructuralError(DgsmpcError, ValueError):
    code = "structural"


class InvalidModelError(DgsmpcError, ValueError):
    code = "invalid_model"


class DivergenceError(DgsmpcError, ArithmeticError):
    code = "divergence"


class NumericalError(DgsmpcError, ArithmeticError):
    code = "numerical"


class NonConvergenceError(NumericalError):
    code = "non_convergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CertificationError(NumericalError):
    code = "certification"


class InfeasibleError(DgsmpcError):
    """The online problem has no feasible perturbation sequence."""

    code = "infeasible"

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap

    def to_dict(self):
        d = super().to_dict()
        d["gap"] = self.gap
        return d


class InitialInfeasibilityError(InfeasibleError):
    code = "initial_infeasibility"


class UsageError(DgsmpcError, RuntimeError):
    code = "usage"


class ConfigError(DgsmpcError, ValueError):
    code = "config"


class StaleLibraryError(ConfigError):
    code = "stale_library"
