"""Cut construction, master-problem management, and the four Benders drivers.

All four methods share one engine; they differ in the recourse-variable
layout of the master (one theta per scenario vs a single Theta) and in
whether the scenario partition is refined:

* MultiCut:          per-scenario thetas, fixed all-singleton partition.
* SingleCut:         single Theta,        fixed all-singleton partition.
* AdaptiveCut:       per-scenario thetas, partition starts at {S} and is
                     refined by dual keys whenever the aggregated problem is
                     solved but the cell conditions fail.
* AdaptiveSingleCut: single Theta over aggregated cells, refined likewise,
                     plus the classical single cut at every refinement.

Cuts are stored as  coeff_x . x + sum_s w_s theta_s >= rhs_const  so that a
positive `violation` value means the cut is violated. An optimality cut for
cell P with aggregated dual lam encodes
    p^P (h^P)'lam - p^P (T^P)'lam . x <= sum_{s in P} p^s theta^s
and a feasibility cut from a Farkas ray encodes  (h^P)'ray - (T^P)'ray . x <= 0.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import lp_core
from .errors import (
    BinaryNotSupportedHere,
    CellInfeasible,
    DimensionMismatch,
    MasterInfeasible,
    MasterUnbounded,
    NotViolated,
)
from .lp_core import GEQ, LinearProgram, LpOutcome, LpStatus
from .model import (
    AggregatedScenario,
    TwoStageProblem,
    aggregate_cell,
    solve_scenario_batch,
)
from .partition import (
    KEY_TOL,
    POINT,
    RAY,
    DualKey,
    Partition,
    check_cell_conditions,
    refine,
    singleton_partition,
    seeded_partition,
    trivial_partition,
)

THETA = -1  # sentinel theta index used by single-cut mode

TOL_CERT = 1e-9


class Method(Enum):
    SINGLE_CUT = "single"
    MULTI_CUT = "multi"
    ADAPTIVE_CUT = "adaptive"
    ADAPTIVE_SINGLE_CUT = "adaptive-single"


class CutKind(Enum):
    OPTIMALITY = "optimality"
    FEASIBILITY = "feasibility"


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    TIME_LIMIT = "time_limit"
    ITER_LIMIT = "iter_limit"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class Cut:
    """Affine inequality  coeff_x . x + sum w_s theta_s >= rhs_const."""

    kind: CutKind
    coeff_x: np.ndarray
    coeff_theta: dict[int, float]  # scenario index -> weight; {THETA: 1} in single mode
    rhs_const: float
    origin_cell: tuple[int, ...]
    generation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeff_x", np.asarray(self.coeff_x, dtype=float))
        if self.kind is CutKind.FEASIBILITY and self.coeff_theta:
            raise ValueError("feasibility cuts carry no theta terms")
        if not np.all(np.isfinite(self.coeff_x)) or not np.isfinite(self.rhs_const):
            raise ValueError("cut coefficients must be finite")


KeyExtractor = Callable[[int, LpOutcome], DualKey]


def default_key_extractor(scenario: int, outcome: LpOutcome) -> DualKey:
    """Group by the full dual vector, or by the normalized Farkas ray."""
    del scenario
    if outcome.status is LpStatus.OPTIMAL:
        return DualKey(POINT, outcome.dual)
    return DualKey(RAY, outcome.farkas_ray)


@dataclass
class SolveConfig:
    tol_gap: float = 1e-6  # relative optimality gap
    iter_limit: int = 5000  # master solves
    time_limit: float = 3600.0  # seconds
    refine_tol: float = KEY_TOL  # dual-key grouping tolerance
    cut_tol: float = 1e-6  # cut acceptance threshold, scaled by 1 + |rhs|
    cond_tol: float = 1e-6  # cell-condition tolerance
    initial_cells: int = 1  # adaptive methods start from this many seeded cells
    key_extractor: Optional[KeyExtractor] = None
    parallel: int = 0  # subproblem batch chunks solved in worker threads
    strict_feasibility: bool = False  # GAPM: raise instead of refining on rays
    trace_sink: Optional[Callable[["TraceRecord"], None]] = None

    def effective_parallel(self) -> int:
        cap = os.environ.get("BENDERS_LAB_THREADS")
        k = self.parallel
        if cap is not None:
            try:
                k = min(k, int(cap)) if k else 0
            except ValueError:
                pass
        return max(0, k)


@dataclass(frozen=True)
class TraceRecord:
    elapsed: float
    z_lower: float
    z_upper: float
    partition_size: int
    total_cuts: int


@dataclass(eq=False)
class SolveReport:
    status: SolveStatus
    x: Optional[np.ndarray]
    objective: Optional[float]
    z_lower: float
    z_upper: float
    bounds_trace: list[TraceRecord]
    optimality_cuts: int
    feasibility_cuts: int
    iterations: int
    refinements: int
    partition_sizes: list[int]
    cuts: list[Cut] = field(default_factory=list)
    nodes: int = 0
    method: Optional[str] = None

    @property
    def gap(self) -> float:
        if not np.isfinite(self.z_upper) or not np.isfinite(self.z_lower):
            return float("inf")
        return (self.z_upper - self.z_lower) / (1.0 + abs(self.z_upper))


def optimality_cut(cell: AggregatedScenario, dual: np.ndarray, bound_term: float = 0.0) -> Cut:
    """p^P (h^P - T^P x)'lam <= sum_{s in P} p^s theta^s in master coordinates.

    bound_term carries the constant dual contribution of non-default
    second-stage bounds; it is zero for y >= 0 recourse.
    """
    dual = np.asarray(dual, dtype=float)
    p_cell = cell.probability
    gx = p_cell * (cell.technology.T @ dual)
    rhs = p_cell * (float(cell.rhs @ dual) + bound_term)
    theta = {int(s): float(p) for s, p in zip(cell.cell, cell.member_probabilities)}
    return Cut(CutKind.OPTIMALITY, gx, theta, rhs, tuple(cell.cell))


def feasibility_cut(
    cell: AggregatedScenario,
    ray: np.ndarray,
    at_x: Optional[np.ndarray] = None,
    box_term: float = 0.0,
) -> Cut:
    """(h^P - T^P x)'ray <= box_term, violated at the x that produced the ray."""
    ray = np.asarray(ray, dtype=float)
    norm = np.max(np.abs(ray)) if ray.size else 0.0
    if norm <= 0:
        raise NotViolated("zero Farkas ray")
    ray = ray / norm
    gx = cell.technology.T @ ray
    rhs = float(cell.rhs @ ray) - box_term
    cut = Cut(CutKind.FEASIBILITY, gx, {}, rhs, tuple(cell.cell))
    if at_x is not None:
        margin = rhs - float(gx @ np.asarray(at_x, dtype=float))
        if not margin > TOL_CERT:
            raise NotViolated(f"feasibility cut margin {margin:.3e} at its generating x")
    return cut


def single_cut(
    cells: Sequence[AggregatedScenario],
    duals: Sequence[Optional[np.ndarray]],
    bound_terms: Optional[Sequence[float]] = None,
) -> Cut:
    """One Theta cut aggregating every cell:  sum_P p^P (h^P - T^P x)'lam^P <= Theta."""
    if len(cells) != len(duals):
        raise DimensionMismatch("one dual per cell is required")
    if any(d is None for d in duals):
        raise CellInfeasible("single cut needs an optimal dual for every cell")
    n = cells[0].technology.shape[1]
    gx = np.zeros(n)
    rhs = 0.0
    members: list[int] = []
    for i, (cell, dual) in enumerate(zip(cells, duals)):
        dual = np.asarray(dual, dtype=float)
        gx += cell.probability * (cell.technology.T @ dual)
        extra = bound_terms[i] if bound_terms is not None else 0.0
        rhs += cell.probability * (float(cell.rhs @ dual) + extra)
        members.extend(cell.cell)
    return Cut(CutKind.OPTIMALITY, gx, {THETA: 1.0}, rhs, tuple(sorted(members)))


ThetaValue = Union[float, np.ndarray, dict, None]


def violation(cut: Cut, x: np.ndarray, theta: ThetaValue = None) -> float:
    """Positive iff the cut is violated at (x, theta)."""
    x = np.asarray(x, dtype=float)
    if x.shape != cut.coeff_x.shape:
        raise DimensionMismatch("x length does not match the cut")
    value = cut.rhs_const - float(cut.coeff_x @ x)
    for s, w in cut.coeff_theta.items():
        if s == THETA:
            if not np.isscalar(theta) and not isinstance(theta, (int, float)):
                raise DimensionMismatch("a Theta cut needs a scalar theta value")
            value -= w * float(theta)
        else:
            if theta is None:
                raise DimensionMismatch("cut has theta terms but no theta was given")
            value -= w * float(theta[s])
    return value


# ---------------------------------------------------------------------------
# master problem


class MasterState:
    """First stage plus recourse variables (theta^s or Theta) and the cut pool.

    The LP is  min c.x + sum p^s theta^s  (multi mode) or  min c.x + Theta
    (single mode), over the first-stage polyhedron, theta bounded below by
    theta_lb, and every cut in the pool. Cuts are append-only.
    """

    def __init__(self, problem: TwoStageProblem, single_theta: bool):
        self.problem = problem
        self.single_theta = single_theta
        fs = problem.first_stage
        n = problem.n_first
        self.n_x = n
        self.n_theta = 1 if single_theta else problem.n_scenarios
        probs = problem.probabilities
        self.cost = np.concatenate(
            [problem.first_stage_cost, [1.0] if single_theta else probs]
        )
        self.lower = np.concatenate([fs.lower, np.full(self.n_theta, problem.theta_lb)])
        self.upper = np.concatenate([fs.upper, np.full(self.n_theta, np.inf)])
        self._base_rows = sp.hstack(
            [sp.csr_matrix(fs.rows), sp.csr_matrix((fs.rows.shape[0], self.n_theta))],
            format="csr",
        ) if fs.rows.shape[0] else sp.csr_matrix((0, n + self.n_theta))
        self._base_relations = tuple(fs.relations)
        self._base_rhs = fs.rhs
        self.cuts: list[Cut] = []
        self._cut_indices: list[np.ndarray] = []
        self._cut_values: list[np.ndarray] = []
        self._cut_rhs: list[float] = []

    def add_cut(self, cut: Cut) -> None:
        idx = [j for j in range(self.n_x) if cut.coeff_x[j] != 0.0]
        val = [cut.coeff_x[j] for j in idx]
        for s, w in cut.coeff_theta.items():
            col = self.n_x if s == THETA else self.n_x + s
            if s != THETA and self.single_theta:
                raise DimensionMismatch("per-scenario cut added to a single-Theta master")
            idx.append(col)
            val.append(w)
        self._cut_indices.append(np.asarray(idx, dtype=np.int32))
        self._cut_values.append(np.asarray(val, dtype=float))
        self._cut_rhs.append(cut.rhs_const)
        self.cuts.append(cut)

    def _assemble(self, fixed_bounds: Optional[dict[int, tuple[float, float]]]):
        n_cols = self.n_x + self.n_theta
        if self._cut_indices:
            indptr = np.zeros(len(self._cut_indices) + 1, dtype=np.int64)
            np.cumsum([len(ix) for ix in self._cut_indices], out=indptr[1:])
            cut_block = sp.csr_matrix(
                (np.concatenate(self._cut_values), np.concatenate(self._cut_indices), indptr),
                shape=(len(self._cut_indices), n_cols),
            )
            rows = sp.vstack([self._base_rows, cut_block], format="csr")
        else:
            rows = self._base_rows
        relations = self._base_relations + (GEQ,) * len(self._cut_rhs)
        rhs = np.concatenate([self._base_rhs, np.asarray(self._cut_rhs)])
        lower, upper = self.lower, self.upper
        if fixed_bounds:
            lower = lower.copy()
            upper = upper.copy()
            for j, (lo, hi) in fixed_bounds.items():
                lower[j], upper[j] = lo, hi
        return LinearProgram(self.cost, rows, relations, rhs, lower, upper)

    def solve(self, fixed_bounds: Optional[dict[int, tuple[float, float]]] = None) -> LpOutcome:
        lp = self._assemble(fixed_bounds)
        out = lp_core.solve(lp)
        if out.status is LpStatus.UNBOUNDED:
            raise MasterUnbounded("master problem is unbounded; check theta_lb and bounds")
        return out

    def split(self, primal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return primal[: self.n_x], primal[self.n_x :]

    def theta_for_violation(self, theta_part: np.ndarray) -> ThetaValue:
        return float(theta_part[0]) if self.single_theta else theta_part


# ---------------------------------------------------------------------------
# engine


def _gap_closed(z_lower: float, z_upper: float, tol: float) -> bool:
    return np.isfinite(z_upper) and (z_upper - z_lower) <= tol * (1.0 + abs(z_upper))


class _Engine:
    def __init__(
        self,
        problem: TwoStageProblem,
        method: Method,
        config: SolveConfig,
        initial_partition: Optional[Partition] = None,
    ):
        self.problem = problem
        self.method = method
        self.config = config
        self.single_theta = method in (Method.SINGLE_CUT, Method.ADAPTIVE_SINGLE_CUT)
        self.adaptive = method in (Method.ADAPTIVE_CUT, Method.ADAPTIVE_SINGLE_CUT)
        n_scen = problem.n_scenarios
        if initial_partition is not None:
            if not self.adaptive and any(len(c) != 1 for c in initial_partition.cells):
                # without refinement an aggregated partition would terminate on
                # the aggregated relaxation, below the true optimum
                raise ValueError("non-adaptive methods require the all-singleton partition")
            self.partition = initial_partition
        elif self.adaptive:
            self.partition = (
                trivial_partition(n_scen)
                if config.initial_cells <= 1
                else seeded_partition(n_scen, config.initial_cells)
            )
        else:
            self.partition = singleton_partition(n_scen)
        self.extractor = config.key_extractor or default_key_extractor
        self.master = MasterState(problem, self.single_theta)
        self._agg_cache: dict[tuple[int, ...], AggregatedScenario] = {}
        self.oc_count = 0
        self.fc_count = 0
        self.refinements = 0
        self.iterations = 0
        self.partition_sizes = [len(self.partition)]
        self.trace: list[TraceRecord] = []
        self.z_lower = -np.inf
        self.z_upper = np.inf
        self.best_x: Optional[np.ndarray] = None
        self.start = time.monotonic()

    # -- helpers ----------------------------------------------------------

    def elapsed(self) -> float:
        return time.monotonic() - self.start

    def agg(self, cell: tuple[int, ...]) -> AggregatedScenario:
        got = self._agg_cache.get(cell)
        if got is None:
            got = aggregate_cell(self.problem, cell)
            self._agg_cache[cell] = got
        return got

    def record_trace(self) -> None:
        rec = TraceRecord(
            self.elapsed(),
            self.z_lower,
            self.z_upper,
            len(self.partition),
            self.oc_count + self.fc_count,
        )
        self.trace.append(rec)
        if self.config.trace_sink is not None:
            self.config.trace_sink(rec)

    def add_cut(self, cut: Cut) -> None:
        self.master.add_cut(cut)
        if cut.kind is CutKind.OPTIMALITY:
            self.oc_count += 1
        else:
            self.fc_count += 1

    def out_of_time(self) -> bool:
        return self.elapsed() > self.config.time_limit

    def report(self, status: SolveStatus) -> SolveReport:
        last = self.trace[-1] if self.trace else None
        if last is None or (last.z_lower, last.z_upper) != (self.z_lower, self.z_upper):
            self.record_trace()  # close the trace with the final bounds
        obj = self.z_upper if np.isfinite(self.z_upper) else None
        return SolveReport(
            status=status,
            x=self.best_x,
            objective=obj,
            z_lower=self.z_lower,
            z_upper=self.z_upper,
            bounds_trace=self.trace,
            optimality_cuts=self.oc_count,
            feasibility_cuts=self.fc_count,
            iterations=self.iterations,
            refinements=self.refinements,
            partition_sizes=self.partition_sizes,
            cuts=list(self.master.cuts),
            method=self.method.value,
        )

    # -- separation and refinement ----------------------------------------

    def separate(self, x: np.ndarray, theta_part: np.ndarray) -> tuple[bool, list[LpOutcome]]:
        """Solve every cell subproblem at x and add the violated cuts.

        Optimality cuts are accepted in bulk above the scaled cut_tol
        threshold; when none clears it but some cut is still violated beyond
        certificate tolerance, the single most violated one is added so the
        bound keeps moving until the gap itself closes.
        """
        cfg = self.config
        cells = self.partition.cells
        aggs = [self.agg(c) for c in cells]
        outs = solve_scenario_batch(self.problem, x, aggs, parallel=cfg.effective_parallel())
        theta_val = self.master.theta_for_violation(theta_part)
        added = False
        best_below: Optional[tuple[float, Cut]] = None

        def consider(cut: Cut) -> None:
            nonlocal added, best_below
            value = violation(cut, x, theta_val)
            if value > cfg.cut_tol * (1.0 + abs(cut.rhs_const)):
                self.add_cut(cut)
                added = True
            elif value > TOL_CERT and (best_below is None or value > best_below[0]):
                best_below = (value, cut)

        if self.single_theta:
            feasible_duals: list[Optional[np.ndarray]] = []
            for agg, out in zip(aggs, outs):
                if out.status is LpStatus.OPTIMAL:
                    feasible_duals.append(out.dual)
                else:
                    self.add_cut(feasibility_cut(agg, out.farkas_ray, at_x=x))
                    added = True
            if len(feasible_duals) == len(aggs):
                cut = single_cut(aggs, feasible_duals)
                consider(replace(cut, generation=self.partition.generation))
        else:
            for agg, out in zip(aggs, outs):
                if out.status is LpStatus.OPTIMAL:
                    cut = optimality_cut(agg, out.dual)
                    consider(replace(cut, generation=self.partition.generation))
                else:
                    cut = feasibility_cut(agg, out.farkas_ray, at_x=x)
                    cut = replace(cut, generation=self.partition.generation)
                    self.add_cut(cut)
                    added = True
        if not added and best_below is not None and not _gap_closed(self.z_lower, self.z_upper, cfg.tol_gap):
            self.add_cut(best_below[1])
            added = True
        return added, outs

    def sweep(self, x: np.ndarray, cell_outs: Optional[list[LpOutcome]]) -> list[LpOutcome]:
        """Per-scenario outcomes at x, reusing cell outcomes when cells are singletons."""
        cells = self.partition.cells
        if cell_outs is not None and all(len(c) == 1 for c in cells):
            by_scenario: list[Optional[LpOutcome]] = [None] * self.problem.n_scenarios
            for cell, out in zip(cells, cell_outs):
                by_scenario[cell[0]] = out
            return by_scenario  # type: ignore[return-value]
        return solve_scenario_batch(
            self.problem, x, self.problem.scenarios, parallel=self.config.effective_parallel()
        )

    def update_upper(self, x: np.ndarray, outs: list[LpOutcome]) -> bool:
        if any(o.status is not LpStatus.OPTIMAL for o in outs):
            return False
        probs = self.problem.probabilities
        value = float(self.problem.first_stage_cost @ x)
        value += float(sum(p * o.objective for p, o in zip(probs, outs)))
        if value < self.z_upper:
            self.z_upper = value
            self.best_x = np.array(x)
        return True

    def conditions_met(self, x: np.ndarray, outs: list[LpOutcome]) -> bool:
        duals = [o.dual if o.status is LpStatus.OPTIMAL else None for o in outs]
        for cell in self.partition.cells:
            if len(cell) == 1:
                continue
            if not check_cell_conditions(cell, duals, x, self.problem, self.config.cond_tol):
                return False
        return True

    def refine_partition(self, x: np.ndarray, outs: list[LpOutcome]) -> bool:
        """Refine by dual keys; returns False when the partition cannot split."""
        keys = [self.extractor(i, out) for i, out in enumerate(outs)]
        new = refine(self.partition, keys, self.config.refine_tol)
        if new.cells == self.partition.cells:
            new = refine(self.partition, keys, 0.0)  # escalate to exact grouping
            if new.cells == self.partition.cells:
                return False
        self.partition = new
        self.refinements += 1
        self.partition_sizes.append(len(new))
        # one representative singleton feasibility cut per infeasible ray-group
        infeasible = {i for i, o in enumerate(outs) if o.status is not LpStatus.OPTIMAL}
        if infeasible:
            for cell in new.cells:
                if cell[0] in infeasible:
                    rep = cell[0]
                    self.add_cut(
                        replace(
                            feasibility_cut(self.agg((rep,)), outs[rep].farkas_ray, at_x=x),
                            generation=new.generation,
                        )
                    )
        elif self.method is Method.ADAPTIVE_SINGLE_CUT:
            # classical single cut from the sweep duals, added at every refinement
            singles = [self.agg((i,)) for i in range(self.problem.n_scenarios)]
            cut = single_cut(singles, [o.dual for o in outs])
            self.add_cut(replace(cut, generation=new.generation))
        return True

    # -- main loop ---------------------------------------------------------

    def run(self) -> SolveReport:
        cfg = self.config
        need_solve = True
        x = theta_part = None
        sweep_token = -1
        sweep_outs: Optional[list[LpOutcome]] = None

        while True:
            if self.out_of_time():
                return self.report(SolveStatus.TIME_LIMIT)
            if self.iterations >= cfg.iter_limit:
                return self.report(SolveStatus.ITER_LIMIT)

            if need_solve:
                out = self.master.solve()
                if out.status is LpStatus.INFEASIBLE:
                    if self.iterations == 0:
                        raise MasterInfeasible("first-stage polyhedron is empty")
                    return self.report(SolveStatus.INFEASIBLE)
                self.iterations += 1
                x, theta_part = self.master.split(out.primal)
                self.z_lower = out.objective
                self.record_trace()
                need_solve = False

            if _gap_closed(self.z_lower, self.z_upper, cfg.tol_gap):
                return self.report(SolveStatus.OPTIMAL)

            added, cell_outs = self.separate(x, theta_part)
            if added:
                need_solve = True
                continue

            if sweep_token != self.iterations:
                sweep_outs = self.sweep(x, cell_outs)
                sweep_token = self.iterations
            all_feasible = self.update_upper(x, sweep_outs)

            if _gap_closed(self.z_lower, self.z_upper, cfg.tol_gap):
                return self.report(SolveStatus.OPTIMAL)

            if not self.adaptive:
                # singleton partition: a clean separation pass means no cut is
                # violated and every subproblem is feasible, so x is optimal
                return self.report(SolveStatus.OPTIMAL)

            if all_feasible and self.conditions_met(x, sweep_outs):
                return self.report(SolveStatus.OPTIMAL)

            if not self.refine_partition(x, sweep_outs):
                # keys agree within every cell, so the conditions hold up to
                # the key tolerance; treat as converged
                return self.report(SolveStatus.OPTIMAL)
            # re-separate at the same x against the refined cells


def run(method: Method, problem: TwoStageProblem, config: Optional[SolveConfig] = None,
        initial_partition: Optional[Partition] = None) -> SolveReport:
    """Run one Benders method on a continuous-first-stage problem."""
    if problem.first_stage_binary:
        raise BinaryNotSupportedHere("use solve_binary for binary first stages")
    engine = _Engine(problem, method, config or SolveConfig(), initial_partition)
    return engine.run()
