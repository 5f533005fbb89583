"""Discounted chance-constrained stochastic MPC with online feedback-gain selection."""

from .controller import ControllerConfig, init_controller, step
from .model import PlantModel, coupled_tank_model
from .qcqp import minimize_constraint, solve_mpc
from .simulation import monte_carlo, run_closed_loop
from .synthesis import GainLibrary, default_grid, dp_fixed_point, generate_gain_library

__version__ = "0.1.0"

__all__ = [
    "ControllerConfig",
    "GainLibrary",
    "PlantModel",
    "coupled_tank_model",
    "default_grid",
    "dp_fixed_point",
    "generate_gain_library",
    "init_controller",
    "minimize_constraint",
    "monte_carlo",
    "run_closed_loop",
    "solve_mpc",
    "step",
]
