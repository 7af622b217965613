"""Best-first branch and bound for binary first-stage variables.

Benders cuts are generated lazily, only at nodes whose LP solution is
binary-integral, and every generated cut involves just (x, theta), so the cut
pool and partition live globally across the tree: the pool only grows and the
partition is only ever refined.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .benders import Method, SolveConfig, SolveReport, SolveStatus, _Engine, _gap_closed
from .errors import MasterInfeasible
from .lp_core import LpStatus
from .model import TwoStageProblem

INTEGRALITY_TOL = 1e-6


@dataclass(order=True)
class BnbNode:
    bound: float
    order: int  # FIFO tie-break among equal bounds
    depth: int = field(compare=False)
    parent: int = field(compare=False)
    fixed: dict[int, tuple[float, float]] = field(compare=False)


def _most_fractional(x: np.ndarray, binaries: list[int]) -> Optional[int]:
    best_j, best_frac = None, INTEGRALITY_TOL
    for j in binaries:
        frac = min(x[j] - np.floor(x[j]), np.ceil(x[j]) - x[j])
        if frac > best_frac + 1e-15:
            best_j, best_frac = j, frac
    return best_j


def solve_binary(
    problem: TwoStageProblem,
    method: Method = Method.MULTI_CUT,
    config: Optional[SolveConfig] = None,
) -> SolveReport:
    """Exact optimum over the binary first-stage assignments."""
    if not problem.first_stage_binary:
        raise ValueError("solve_binary needs at least one binary first-stage variable")
    if method is Method.ADAPTIVE_SINGLE_CUT:
        raise ValueError("adaptive-single-cut is not wired into the tree search")
    binaries = sorted(problem.first_stage_binary)
    fs = problem.first_stage
    for j in binaries:
        if fs.lower[j] < -INTEGRALITY_TOL or fs.upper[j] > 1 + INTEGRALITY_TOL:
            raise ValueError("binary variables must be boxed to [0, 1] in the relaxation")

    cfg = config or SolveConfig()
    eng = _Engine(problem.relax_binary(), method, cfg)
    counter = itertools.count()
    heap: list[BnbNode] = [BnbNode(-np.inf, next(counter), 0, -1, {})]
    nodes_processed = 0
    root_solved = False
    stopped_on_gap = False

    def global_bound(current: float) -> float:
        open_bounds = [n.bound for n in heap]
        return min(open_bounds + [current]) if open_bounds else current

    while heap:
        if eng.out_of_time():
            return _finish(eng, SolveStatus.TIME_LIMIT, nodes_processed, heap)
        if eng.iterations >= cfg.iter_limit:
            return _finish(eng, SolveStatus.ITER_LIMIT, nodes_processed, heap)
        node = heapq.heappop(heap)
        if np.isfinite(node.bound) and node.bound > eng.z_lower:
            eng.z_lower = node.bound  # best-first: the popped bound is the global LB
        if _gap_closed(node.bound, eng.z_upper, cfg.tol_gap):
            stopped_on_gap = True  # every open node is at least this bound
            break
        nodes_processed += 1

        # node loop: LP solve, lazy separation at integral points, refinement
        while True:
            if eng.out_of_time() or eng.iterations >= cfg.iter_limit:
                heapq.heappush(heap, node)
                status = SolveStatus.TIME_LIMIT if eng.out_of_time() else SolveStatus.ITER_LIMIT
                return _finish(eng, status, nodes_processed, heap)
            out = eng.master.solve(node.fixed)
            eng.iterations += 1
            if out.status is LpStatus.INFEASIBLE:
                if not root_solved:
                    raise MasterInfeasible("root relaxation is infeasible")
                break  # prune
            root_solved = True
            x, theta_part = eng.master.split(out.primal)
            node.bound = out.objective
            eng.z_lower = global_bound(out.objective)
            eng.record_trace()
            if node.bound >= eng.z_upper - cfg.tol_gap * (1.0 + abs(eng.z_upper)):
                break  # dominated by the incumbent
            branch_var = _most_fractional(x, binaries)
            if branch_var is not None:
                for val in (0.0, 1.0):
                    fixed = dict(node.fixed)
                    fixed[branch_var] = (val, val)
                    heapq.heappush(
                        heap, BnbNode(node.bound, next(counter), node.depth + 1, nodes_processed, fixed)
                    )
                break
            # integral point: run the separation loop of the current partition
            added, cell_outs = eng.separate(x, theta_part)
            if added:
                continue
            sweep_outs = eng.sweep(x, cell_outs)
            eng.update_upper(x, sweep_outs)
            all_feasible = all(o.status is LpStatus.OPTIMAL for o in sweep_outs)
            if eng.adaptive and not (all_feasible and eng.conditions_met(x, sweep_outs)):
                if eng.refine_partition(x, sweep_outs):
                    continue  # re-separate against the finer cells
            break  # node solved exactly; its value is covered by the incumbent

    if np.isfinite(eng.z_upper):
        if not heap and not stopped_on_gap:  # complete enumeration proves the incumbent
            eng.z_lower = eng.z_upper
        return _finish(eng, SolveStatus.OPTIMAL, nodes_processed, [])
    return _finish(eng, SolveStatus.INFEASIBLE, nodes_processed, heap)


def _finish(eng: _Engine, status: SolveStatus, nodes: int, heap: list[BnbNode]) -> SolveReport:
    if status is not SolveStatus.OPTIMAL and heap:
        open_bounds = [n.bound for n in heap if np.isfinite(n.bound)]
        if open_bounds:
            eng.z_lower = min(eng.z_lower, min(open_bounds))
    rep = eng.report(status)
    rep.nodes = nodes
    return rep
