"""Solver for continuous-time optimal control of switched systems with a
fixed mode sequence: switching-time optimization, structured Newton steps in
linear time, interior-point inequality handling and adaptive mesh refinement.
"""

from .model import EventSpec, PhaseSpec, SwitchedOCP, validate, check_derivatives
from .transcription import TimeGrid, build_grid, rollout, refine
from .kkt import Iterate, KKTResidual, StageKKT, KKTData, eval_residual, assemble
from .riccati import (NewtonStep, RiccatiError, RiccatiFactorization,
                      RiccatiOptions, RiccatiStage, backward, forward, solve_step)
from .interior_point import (IPOptions, fraction_to_boundary, initialize_iterate,
                             recover_bound_steps, update_barrier)
from .solver import ConvergenceLog, Solution, SolverOptions, solve, solve_nlp
from .oracle import DenseKKT, assemble_dense, compare, solve_dense

__version__ = "0.1.0"

__all__ = [
    "EventSpec", "PhaseSpec", "SwitchedOCP", "validate", "check_derivatives",
    "TimeGrid", "build_grid", "rollout", "refine",
    "Iterate", "KKTResidual", "StageKKT", "KKTData", "eval_residual", "assemble",
    "NewtonStep", "RiccatiError", "RiccatiFactorization", "RiccatiOptions",
    "RiccatiStage", "backward", "forward", "solve_step",
    "IPOptions", "fraction_to_boundary", "initialize_iterate",
    "recover_bound_steps", "update_barrier",
    "ConvergenceLog", "Solution", "SolverOptions", "solve", "solve_nlp",
    "DenseKKT", "assemble_dense", "compare", "solve_dense",
]
