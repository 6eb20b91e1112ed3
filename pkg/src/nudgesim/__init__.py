"""Simulator and policy-design toolkit for stochastic opinion dynamics on
social networks: hidden inclinations, binary acceptance observations, and
budget-constrained nudging policies (uniform, steady-state QP, receding
horizon)."""

from nudgesim.graph import SocialNetwork, generate_modular_graph, row_normalize
from nudgesim.dynamics import Trajectory, simulate
from nudgesim.equilibrium import build_prediction_model, steady_state

__all__ = [
    "SocialNetwork",
    "generate_modular_graph",
    "row_normalize",
    "Trajectory",
    "simulate",
    "build_prediction_model",
    "steady_state",
]
