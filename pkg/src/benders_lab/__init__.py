"""Benders decomposition lab for two-stage stochastic linear programs."""

from .lp_core import LinearProgram, LpOutcome, LpStatus, solve, solve_with_basis
from .model import (
    AggregatedScenario,
    Scenario,
    TwoStageProblem,
    aggregate_cell,
    build_deterministic_equivalent,
    build_subproblem,
    evaluate_first_stage,
)
from .partition import DualKey, Partition, check_cell_conditions, is_refinement, refine
from .benders import (
    Cut,
    CutKind,
    Method,
    SolveConfig,
    SolveReport,
    SolveStatus,
    feasibility_cut,
    optimality_cut,
    run,
    single_cut,
    violation,
)
from .gapm import run_gapm
from .mip import solve_binary

__all__ = [
    "AggregatedScenario",
    "Cut",
    "CutKind",
    "DualKey",
    "LinearProgram",
    "LpOutcome",
    "LpStatus",
    "Method",
    "Partition",
    "Scenario",
    "SolveConfig",
    "SolveReport",
    "SolveStatus",
    "TwoStageProblem",
    "aggregate_cell",
    "build_deterministic_equivalent",
    "build_subproblem",
    "check_cell_conditions",
    "evaluate_first_stage",
    "feasibility_cut",
    "is_refinement",
    "optimality_cut",
    "refine",
    "run",
    "run_gapm",
    "single_cut",
    "solve",
    "solve_binary",
    "solve_with_basis",
    "violation",
]
