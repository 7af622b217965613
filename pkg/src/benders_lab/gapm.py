"""Generalized adaptive partition method over the compact reformulation.

Each iteration solves the partitioned deterministic equivalent directly,
checks the cell sufficiency conditions at its optimizer, and refines the
partition by dual keys until every cell passes. The sequence of DE optima is
a non-decreasing lower bound; the sweep of exact subproblem values supplies
the upper bound.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from . import lp_core
from .benders import SolveConfig, SolveReport, SolveStatus, TraceRecord, _gap_closed, default_key_extractor
from .errors import BinaryNotSupportedHere, MasterUnbounded, ScenarioInfeasibleAtIterate
from .lp_core import LpStatus
from .model import TwoStageProblem, build_deterministic_equivalent, solve_scenario_batch
from .partition import Partition, check_cell_conditions, refine, seeded_partition, trivial_partition


def run_gapm(problem: TwoStageProblem, config: Optional[SolveConfig] = None) -> SolveReport:
    """Iteratively solve DE(partition), check cell conditions, refine."""
    if problem.first_stage_binary:
        raise BinaryNotSupportedHere("GAPM requires a continuous first stage")
    cfg = config or SolveConfig()
    extractor = cfg.key_extractor or default_key_extractor
    n_scen = problem.n_scenarios
    partition = (
        trivial_partition(n_scen) if cfg.initial_cells <= 1 else seeded_partition(n_scen, cfg.initial_cells)
    )
    start = time.monotonic()
    z_lower, z_upper = -np.inf, np.inf
    best_x: Optional[np.ndarray] = None
    trace: list[TraceRecord] = []
    sizes = [len(partition)]
    iterations = 0
    refinements = 0

    def report(status: SolveStatus) -> SolveReport:
        if not trace or (trace[-1].z_lower, trace[-1].z_upper) != (z_lower, z_upper):
            trace.append(TraceRecord(time.monotonic() - start, z_lower, z_upper, len(partition), 0))
        return SolveReport(
            status=status,
            x=best_x,
            objective=z_upper if np.isfinite(z_upper) else None,
            z_lower=z_lower,
            z_upper=z_upper,
            bounds_trace=trace,
            optimality_cuts=0,
            feasibility_cuts=0,
            iterations=iterations,
            refinements=refinements,
            partition_sizes=sizes,
            method="gapm",
        )

    while True:
        if time.monotonic() - start > cfg.time_limit:
            return report(SolveStatus.TIME_LIMIT)
        if iterations >= cfg.iter_limit:
            return report(SolveStatus.ITER_LIMIT)

        de, index_map = build_deterministic_equivalent(problem, partition)
        out = lp_core.solve(de)
        iterations += 1
        if out.status is LpStatus.INFEASIBLE:
            # a feasible point of DE(S) aggregates into one for DE(P), so an
            # infeasible partitioned DE certifies the problem itself
            return report(SolveStatus.INFEASIBLE)
        if out.status is LpStatus.UNBOUNDED:
            raise MasterUnbounded("partitioned deterministic equivalent is unbounded")
        z_lower = out.objective
        x = index_map.x(out.primal)
        rec = TraceRecord(time.monotonic() - start, z_lower, z_upper, len(partition), 0)
        trace.append(rec)
        if cfg.trace_sink is not None:
            cfg.trace_sink(rec)

        outs = solve_scenario_batch(problem, x, problem.scenarios, parallel=cfg.effective_parallel())
        infeasible = [i for i, o in enumerate(outs) if o.status is not LpStatus.OPTIMAL]
        if infeasible and cfg.strict_feasibility:
            raise ScenarioInfeasibleAtIterate(f"scenarios {infeasible[:8]} infeasible at the current iterate")

        if not infeasible:
            probs = problem.probabilities
            value = float(problem.first_stage_cost @ x)
            value += float(sum(p * o.objective for p, o in zip(probs, outs)))
            if value < z_upper:
                z_upper = value
                best_x = np.array(x)
            if _gap_closed(z_lower, z_upper, cfg.tol_gap):
                return report(SolveStatus.OPTIMAL)
            duals = [o.dual for o in outs]
            cells_ok = all(
                len(cell) == 1 or check_cell_conditions(cell, duals, x, problem, cfg.cond_tol)
                for cell in partition.cells
            )
            if cells_ok:
                return report(SolveStatus.OPTIMAL)

        keys = [extractor(i, o) for i, o in enumerate(outs)]
        new = refine(partition, keys, cfg.refine_tol)
        if new.cells == partition.cells:
            new = refine(partition, keys, 0.0)
            if new.cells == partition.cells:
                # cells are key-homogeneous; conditions hold up to tolerance
                return report(SolveStatus.OPTIMAL)
        partition = new
        refinements += 1
        sizes.append(len(partition))
