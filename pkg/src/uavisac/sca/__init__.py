"""Per-stage trajectory optimisation by successive convex approximation."""

from .stage import OMEGA_GRID, StageResult, initial_iterate, line_search, optimize_stage
from .subproblem import StageIterate, StageProblem, Subproblem, build_subproblem, solve_subproblem

__all__ = [
    "OMEGA_GRID",
    "StageIterate",
    "StageProblem",
    "StageResult",
    "Subproblem",
    "build_subproblem",
    "initial_iterate",
    "line_search",
    "optimize_stage",
    "solve_subproblem",
]
