"""Distributed nonconvex optimization over time-varying networks.

NEXT combines successive convex approximation with gradient tracking; this
package provides the algorithm, a D-Gradient baseline, graph schedules,
surrogate models, metrics and four ready-made applications.
"""

from .baseline_analysis import CentralizedSolver, centralized_solve
from .graph import (
    GraphSchedule,
    constant_schedule,
    erdos_renyi_graph,
    generate_b_connected_schedule,
    geometric_graph,
    metropolis_weights,
    ring_graph,
)
from .metrics import RunTrace
from .problem import DistributedProblem
from .solver import NEXT, DGradient, NumericalAbort, RunConfig, StepSizeRule, run

__version__ = "0.1.0"

__all__ = [
    "CentralizedSolver", "DGradient", "DistributedProblem", "GraphSchedule", "NEXT",
    "NumericalAbort", "RunConfig", "RunTrace", "StepSizeRule", "centralized_solve",
    "constant_schedule", "erdos_renyi_graph", "generate_b_connected_schedule",
    "geometric_graph", "metropolis_weights", "ring_graph", "run",
]
