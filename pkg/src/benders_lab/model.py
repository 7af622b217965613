"""Two-stage stochastic program data model and LP assembly.

A TwoStageProblem is  min c.x + sum_s p^s Q(x, xi^s)  over the first-stage
polyhedron, where Q(x, xi^s) = min { q.y : W y = h^s - T^s x, y in box } has
fixed recourse (W, q shared by all scenarios). Cells of a scenario partition
aggregate to probability-weighted averages (p^P, h^P, T^P), which plug into
the same subproblem template.

Scenario subproblems within one iteration are independent, so the batch
solver stacks them into a single block-diagonal LP, solves once, and slices
the primal/dual vectors back into per-scenario outcomes (identical scenarios
are deduplicated first, which also makes their outcomes bit-identical).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import lp_core
from .errors import (
    BinaryNotSupportedHere,
    DimensionMismatch,
    EmptyCell,
    FirstStageInfeasible,
    MalformedProblem,
    NumericalFailure,
)
from .lp_core import EQ, GEQ, LEQ, LinearProgram, LpOutcome, LpStatus

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Scenario:
    """One realization xi^s = (T^s, h^s) with its probability."""

    probability: float
    technology: np.ndarray  # p x n, applied to the first-stage vector
    rhs: np.ndarray  # length p
    label: str = ""


@dataclass(frozen=True, eq=False)
class AggregatedScenario:
    """Probability-weighted average of the scenarios in one partition cell."""

    cell: tuple[int, ...]
    probability: float  # p^P = sum of member probabilities
    technology: np.ndarray  # T^P
    rhs: np.ndarray  # h^P
    member_probabilities: np.ndarray = None  # p^s aligned with cell order

    def __post_init__(self):
        if self.member_probabilities is None:
            object.__setattr__(self, "member_probabilities", np.array([self.probability]))


@dataclass(frozen=True, eq=False)
class FirstStage:
    """Polyhedron A x (rel) b with variable box bounds."""

    rows: np.ndarray
    relations: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @staticmethod
    def box_only(lower, upper) -> "FirstStage":
        lower = np.asarray(lower, dtype=float)
        n = lower.shape[0]
        return FirstStage(np.zeros((0, n)), (), np.zeros(0), lower, np.asarray(upper, dtype=float))


def default_theta_lb(cost: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> Optional[float]:
    """sum_i min(q_i * lb_i, q_i * ub_i) over the recourse box, None if unbounded.

    A valid lower bound on any recourse value whenever every cost-carrying
    variable has finite bounds on the side its cost pulls toward.
    """
    total = 0.0
    for q, lo, hi in zip(cost, lower, upper):
        if q == 0.0:
            continue
        value = min(q * lo, q * hi)  # -inf propagates when the relevant side is open
        if not np.isfinite(value):
            return None
        total += value
    return total


@dataclass(frozen=True, eq=False)
class TwoStageProblem:
    first_stage_cost: np.ndarray
    first_stage: FirstStage
    recourse_matrix: np.ndarray  # W, p x m
    recourse_cost: np.ndarray  # q, length m
    scenarios: tuple[Scenario, ...]
    theta_lb: Optional[float] = None  # default: the recourse-box bound, if finite
    second_stage_lower: Optional[np.ndarray] = None  # default 0
    second_stage_upper: Optional[np.ndarray] = None  # default +inf
    first_stage_binary: frozenset[int] = frozenset()
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.first_stage_cost, dtype=float)
        W = np.asarray(self.recourse_matrix, dtype=float)
        q = np.asarray(self.recourse_cost, dtype=float)
        object.__setattr__(self, "first_stage_cost", c)
        object.__setattr__(self, "recourse_matrix", W)
        object.__setattr__(self, "recourse_cost", q)
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "first_stage_binary", frozenset(self.first_stage_binary))
        m = q.shape[0]
        p_rows = W.shape[0]
        if W.shape != (p_rows, m):
            raise MalformedProblem("W and q disagree on the number of second-stage variables")
        lo = np.zeros(m) if self.second_stage_lower is None else np.asarray(self.second_stage_lower, dtype=float)
        hi = np.full(m, np.inf) if self.second_stage_upper is None else np.asarray(self.second_stage_upper, dtype=float)
        object.__setattr__(self, "second_stage_lower", lo)
        object.__setattr__(self, "second_stage_upper", hi)
        if lo.shape != (m,) or hi.shape != (m,):
            raise MalformedProblem("second-stage bound vectors must have length m")
        if not self.scenarios:
            raise MalformedProblem("a TwoStageProblem needs at least one scenario")
        total = 0.0
        n = c.shape[0]
        for s in self.scenarios:
            if s.probability <= 0.0:
                raise MalformedProblem("scenario probabilities must be positive")
            total += s.probability
            if s.technology.shape != (p_rows, n):
                raise MalformedProblem(f"scenario technology must be {p_rows} x {n}")
            if s.rhs.shape != (p_rows,):
                raise MalformedProblem(f"scenario rhs must have length {p_rows}")
        if abs(total - 1.0) > PROB_TOL * max(1, len(self.scenarios)):
            raise MalformedProblem(f"scenario probabilities sum to {total!r}, not 1")
        if self.theta_lb is None:
            derived = default_theta_lb(q, lo, hi)
            if derived is None:
                raise MalformedProblem(
                    "theta_lb cannot be derived from unbounded recourse variables; supply it"
                )
            object.__setattr__(self, "theta_lb", derived)
        if not np.isfinite(self.theta_lb):
            raise MalformedProblem("theta_lb must be finite")
        if any(i < 0 or i >= n for i in self.first_stage_binary):
            raise MalformedProblem("binary index out of range")

    @property
    def n_first(self) -> int:
        return self.first_stage_cost.shape[0]

    @property
    def n_second(self) -> int:
        return self.recourse_cost.shape[0]

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    def relax_binary(self) -> "TwoStageProblem":
        """Continuous relaxation: drop binary flags, keep the [0, 1] boxes."""
        return replace(self, first_stage_binary=frozenset())


def aggregate_cell(problem: TwoStageProblem, cell: Iterable[int]) -> AggregatedScenario:
    """Probability-weighted average (p^P, h^P, T^P) of the scenarios in cell."""
    idx = tuple(sorted(set(int(i) for i in cell)))
    if not idx:
        raise EmptyCell("cannot aggregate an empty cell")
    if idx[0] < 0 or idx[-1] >= problem.n_scenarios:
        raise DimensionMismatch(f"cell {idx} outside scenario range")
    if len(idx) == 1:
        s = problem.scenarios[idx[0]]
        return AggregatedScenario(idx, s.probability, s.technology, s.rhs, np.array([s.probability]))
    probs = np.array([problem.scenarios[i].probability for i in idx])
    p_cell = float(probs.sum())
    w = probs / p_cell
    h = np.einsum("s,sp->p", w, np.stack([problem.scenarios[i].rhs for i in idx]))
    techs = [problem.scenarios[i].technology for i in idx]
    if all(t is techs[0] for t in techs):  # shared technology matrix: skip the average
        T = techs[0]
    else:
        T = np.einsum("s,spn->pn", w, np.stack(techs))
    return AggregatedScenario(idx, p_cell, T, h, probs)


SubproblemSource = Union[Scenario, AggregatedScenario]


def subproblem_rhs(source: SubproblemSource, x: np.ndarray) -> np.ndarray:
    return source.rhs - source.technology @ x


def build_subproblem(problem: TwoStageProblem, x: np.ndarray, source: SubproblemSource) -> LinearProgram:
    """The recourse LP  min q.y  s.t.  W y = h - T x  at a fixed first stage."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n_first,):
        raise DimensionMismatch(f"x must have length {problem.n_first}")
    rhs = subproblem_rhs(source, x)
    return LinearProgram(
        cost=problem.recourse_cost,
        rows=problem.recourse_matrix,
        relations=(EQ,) * problem.recourse_matrix.shape[0],
        rhs=rhs,
        lower=problem.second_stage_lower,
        upper=problem.second_stage_upper,
    )


@dataclass(frozen=True)
class DeIndexMap:
    """Recovers x and the per-cell y blocks from the flat DE primal vector."""

    n_first: int
    n_second: int
    cells: tuple[tuple[int, ...], ...]

    def x(self, primal: np.ndarray) -> np.ndarray:
        return primal[: self.n_first]

    def y(self, primal: np.ndarray, cell_index: int) -> np.ndarray:
        start = self.n_first + cell_index * self.n_second
        return primal[start : start + self.n_second]


def _partition_cells(partition) -> tuple[tuple[int, ...], ...]:
    if hasattr(partition, "cells"):
        return tuple(tuple(c) for c in partition.cells)
    return tuple(tuple(c) for c in partition)


def build_deterministic_equivalent(problem: TwoStageProblem, partition) -> tuple[LinearProgram, DeIndexMap]:
    """Stack the first stage with one aggregated subproblem block per cell."""
    if problem.first_stage_binary:
        raise BinaryNotSupportedHere("binary first stages are handled by solve_binary")
    cells = _partition_cells(partition)
    n, m = problem.n_first, problem.n_second
    p_rows = problem.recourse_matrix.shape[0]
    k = len(cells)
    aggs = [aggregate_cell(problem, c) for c in cells]

    W = sp.csc_matrix(problem.recourse_matrix)
    fs = problem.first_stage
    blocks_left = sp.vstack([sp.csc_matrix(agg.technology) for agg in aggs], format="csc") if k else None
    top = sp.hstack([sp.csc_matrix(fs.rows), sp.csc_matrix((fs.rows.shape[0], k * m))], format="csc") if fs.rows.shape[0] else None
    bottom = sp.hstack([blocks_left, sp.block_diag([W] * k, format="csc")], format="csc")
    rows = sp.vstack([b for b in (top, bottom) if b is not None], format="csr")

    relations = tuple(fs.relations) + (EQ,) * (k * p_rows)
    rhs = np.concatenate([fs.rhs] + [agg.rhs for agg in aggs])
    cost = np.concatenate([problem.first_stage_cost] + [agg.probability * problem.recourse_cost for agg in aggs])
    lower = np.concatenate([fs.lower] + [problem.second_stage_lower] * k)
    upper = np.concatenate([fs.upper] + [problem.second_stage_upper] * k)
    lp = LinearProgram(cost, rows, relations, rhs, lower, upper)
    return lp, DeIndexMap(n, m, cells)


@dataclass(frozen=True)
class FirstStageEvaluation:
    upper_bound: Optional[float] = None
    infeasible_scenarios: frozenset[int] = frozenset()

    @property
    def feasible(self) -> bool:
        return self.upper_bound is not None


def check_first_stage_feasible(problem: TwoStageProblem, x: np.ndarray, tol: float = 1e-7) -> None:
    fs = problem.first_stage
    ax = fs.rows @ x if fs.rows.shape[0] else np.zeros(0)
    for i, rel in enumerate(fs.relations):
        resid = ax[i] - fs.rhs[i]
        scale = tol * (1.0 + abs(fs.rhs[i]))
        ok = (rel == EQ and abs(resid) <= scale) or (rel == LEQ and resid <= scale) or (rel == GEQ and resid >= -scale)
        if not ok:
            raise FirstStageInfeasible(f"first-stage row {i} violated by {resid:.3e}")
    scale = tol * (1.0 + np.abs(x))
    if np.any(x < fs.lower - scale) or np.any(x > fs.upper + scale):
        raise FirstStageInfeasible("first-stage bound violated")


def evaluate_first_stage(problem: TwoStageProblem, x: np.ndarray) -> FirstStageEvaluation:
    """Exact c.x + sum_s p^s Q(x, xi^s), or the set of infeasible scenarios."""
    x = np.asarray(x, dtype=float)
    check_first_stage_feasible(problem, x)
    outcomes = solve_scenario_batch(problem, x, problem.scenarios)
    bad = frozenset(i for i, out in enumerate(outcomes) if out.status is not LpStatus.OPTIMAL)
    if bad:
        return FirstStageEvaluation(infeasible_scenarios=bad)
    total = float(problem.first_stage_cost @ x)
    total += sum(s.probability * out.objective for s, out in zip(problem.scenarios, outcomes))
    return FirstStageEvaluation(upper_bound=total)


# ---------------------------------------------------------------------------
# batch subproblem solving


class _BlockCache:
    """Reusable block-diagonal W stacks keyed by block count."""

    def __init__(self, problem: TwoStageProblem):
        self.W = sp.csc_matrix(problem.recourse_matrix)
        self.q = problem.recourse_cost
        self.lower = problem.second_stage_lower
        self.upper = problem.second_stage_upper
        self.p_rows = problem.recourse_matrix.shape[0]
        self.m = problem.n_second
        self._stacks: dict[int, sp.csc_matrix] = {}

    def stack(self, k: int) -> sp.csc_matrix:
        got = self._stacks.get(k)
        if got is None:
            got = sp.block_diag([self.W] * k, format="csc")
            self._stacks[k] = got
        return got


_block_caches: "weakref.WeakKeyDictionary[TwoStageProblem, _BlockCache]" = weakref.WeakKeyDictionary()


def _cache_for(problem: TwoStageProblem) -> _BlockCache:
    cache = _block_caches.get(problem)
    if cache is None:
        cache = _BlockCache(problem)
        _block_caches[problem] = cache
    return cache


def _slice_optimal(out: LpOutcome, cache: _BlockCache, k: int) -> list[LpOutcome]:
    results = []
    for j in range(k):
        y = out.primal[j * cache.m : (j + 1) * cache.m]
        lam = out.dual[j * cache.p_rows : (j + 1) * cache.p_rows]
        results.append(
            LpOutcome(
                status=LpStatus.OPTIMAL,
                primal=y,
                objective=float(cache.q @ y),
                dual=lam,
            )
        )
    return results


def solve_scenario_batch(
    problem: TwoStageProblem,
    x: np.ndarray,
    sources: Sequence[SubproblemSource],
    parallel: int = 0,
) -> list[LpOutcome]:
    """Solve every subproblem at x; one LpOutcome per source, in order.

    Equivalent to [lp_core.solve(build_subproblem(problem, x, s)) for s in
    sources] but solved as one block-diagonal LP (after deduplication), so a
    sweep over thousands of scenarios costs a single backend call when all
    blocks are feasible and two when some are not. With parallel > 1 the
    unique blocks are split into that many chunks solved in worker threads;
    results are merged in input order either way.
    """
    x = np.asarray(x, dtype=float)
    if not sources:
        return []
    cache = _cache_for(problem)

    rhs_list = [subproblem_rhs(s, x) for s in sources]
    unique: dict[bytes, int] = {}
    rep: list[int] = []  # position in the deduplicated batch, per source
    uniq_rhs: list[np.ndarray] = []
    for r in rhs_list:
        key = r.tobytes()
        pos = unique.get(key)
        if pos is None:
            pos = len(uniq_rhs)
            unique[key] = pos
            uniq_rhs.append(r)
        rep.append(pos)
    k = len(uniq_rhs)

    if parallel > 1 and k > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunk_ids = np.array_split(np.arange(k), min(parallel, k))
        with ThreadPoolExecutor(max_workers=len(chunk_ids)) as pool:
            futures = [
                pool.submit(_solve_unique_blocks, cache, [uniq_rhs[j] for j in ids], len(ids))
                for ids in chunk_ids
                if len(ids)
            ]
            parts = [f.result() for f in futures]
        outcomes = [out for part in parts for out in part]
    else:
        outcomes = _solve_unique_blocks(cache, uniq_rhs, k)
    return [outcomes[pos] for pos in rep]


def _solve_unique_blocks(cache: _BlockCache, uniq_rhs: list[np.ndarray], k: int) -> list[LpOutcome]:
    if k == 1:
        lp = LinearProgram(cache.q, cache.W, (EQ,) * cache.p_rows, uniq_rhs[0], cache.lower, cache.upper)
        return [lp_core.solve(lp)]
    big = LinearProgram(
        cost=np.tile(cache.q, k),
        rows=cache.stack(k),
        relations=(EQ,) * (k * cache.p_rows),
        rhs=np.concatenate(uniq_rhs),
        lower=np.tile(cache.lower, k),
        upper=np.tile(cache.upper, k),
    )
    try:
        out = lp_core.solve(big)
    except NumericalFailure:
        # borderline blocks can defeat the whole-batch certificates; decide
        # block by block instead
        return _split_infeasible_blocks(cache, uniq_rhs, k)
    if out.status is LpStatus.OPTIMAL:
        return _slice_optimal(out, cache, k)
    if out.status is LpStatus.UNBOUNDED:
        # the recession cone is shared, so every feasible block is unbounded;
        # classify blocks individually (rare: the TSSP itself is ill-posed)
        return [_solve_one_block(cache, r) for r in uniq_rhs]
    # some block infeasible: find them all with one elastic pass, then
    # re-solve the feasible blocks exactly
    return _split_infeasible_blocks(cache, uniq_rhs, k)


def _solve_one_block(cache: _BlockCache, rhs: np.ndarray) -> LpOutcome:
    lp = LinearProgram(cache.q, cache.W, (EQ,) * cache.p_rows, rhs, cache.lower, cache.upper)
    return lp_core.solve(lp)


def _split_infeasible_blocks(cache: _BlockCache, uniq_rhs: list[np.ndarray], k: int) -> list[LpOutcome]:
    p = cache.p_rows
    elastic_cols = sp.block_diag([sp.hstack([sp.eye(p), -sp.eye(p)], format="csc")] * k, format="csc")
    A = sp.hstack([cache.stack(k), elastic_cols], format="csc")
    n_el = 2 * p * k
    lp = LinearProgram(
        cost=np.concatenate([np.zeros(cache.m * k), np.ones(n_el)]),
        rows=A,
        relations=(EQ,) * (k * p),
        rhs=np.concatenate(uniq_rhs),
        lower=np.concatenate([np.tile(cache.lower, k), np.zeros(n_el)]),
        upper=np.concatenate([np.tile(cache.upper, k), np.full(n_el, np.inf)]),
    )
    elastic = lp_core.solve(lp)
    if elastic.status is not LpStatus.OPTIMAL:
        raise MalformedProblem("elastic feasibility batch failed to solve")
    slack = elastic.primal[cache.m * k :].reshape(k, 2 * p)
    penalties = slack.sum(axis=1)
    feas_tol = lp_core.TOL_CERT * (1.0 + float(np.abs(np.concatenate(uniq_rhs)).max(initial=0.0)))
    if np.all(penalties <= feas_tol):
        raise NumericalFailure("batch flagged infeasible but every block relaxes to feasible")

    outcomes: list[Optional[LpOutcome]] = [None] * k
    feasible_idx = [j for j in range(k) if penalties[j] <= feas_tol]
    for j in range(k):
        if penalties[j] > feas_tol:
            block = LinearProgram(cache.q, cache.W, (EQ,) * p, uniq_rhs[j], cache.lower, cache.upper)
            try:
                ray = lp_core._normalize(elastic.dual[j * p : (j + 1) * p])
                lp_core._verify_farkas(block, ray)
                outcomes[j] = LpOutcome(status=LpStatus.INFEASIBLE, farkas_ray=ray)
            except NumericalFailure:
                outcomes[j] = lp_core.solve(block)  # certified fallback
    if feasible_idx:
        sub = _solve_unique_blocks(cache, [uniq_rhs[j] for j in feasible_idx], len(feasible_idx))
        for j, out in zip(feasible_idx, sub):
            outcomes[j] = out
    return outcomes  # type: ignore[return-value]
