"""Capacity planning: install terminal capacity, then route uncertain demand.

First stage picks capacities x_i >= 0 for the source terminals subject to
resource budgets; the recourse is a bipartite min-cost flow where arc costs
may be negative (profit), demand rows are soft (<= d_j), and flows are capped
by the installed capacity. The recourse is always feasible (zero flow works),
so this family produces optimality cuts only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInstance
from ..lp_core import LEQ, LpStatus
from ..model import FirstStage, Scenario, TwoStageProblem
from ..partition import POINT, RAY, DualKey


@dataclass(frozen=True, eq=False)
class CppInstance:
    capacity_cost: np.ndarray  # c_i, per unit of installed capacity
    resource_usage: np.ndarray  # a_ik, resources k consumed per unit at source i
    resource_limit: np.ndarray  # r_k > 0
    arc_cost: np.ndarray  # e_ij, cost (+) or profit (-) per unit shipped
    demands: np.ndarray  # d^s_j >= 0, one row per scenario
    probabilities: np.ndarray

    def __post_init__(self):
        for name in ("capacity_cost", "resource_usage", "resource_limit", "arc_cost", "demands", "probabilities"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_sources(self) -> int:
        return self.capacity_cost.shape[0]

    @property
    def n_sinks(self) -> int:
        return self.arc_cost.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.demands.shape[0]

    def validate(self) -> None:
        nl, nr = self.n_sources, self.n_sinks
        if self.arc_cost.shape != (nl, nr):
            raise InvalidInstance(f"arc_cost must be {nl} x {nr}")
        k = self.resource_limit.shape[0]
        if self.resource_usage.shape != (k, nl):
            raise InvalidInstance(f"resource_usage must be {k} x {nl}")
        if np.any(self.resource_limit <= 0):
            raise InvalidInstance("resource_limit entries must be positive")
        if self.demands.ndim != 2 or self.demands.shape[1] != nr:
            raise InvalidInstance(f"demands must have {nr} columns")
        if np.any(self.demands < 0):
            raise InvalidInstance("demands must be nonnegative")
        if self.probabilities.shape != (self.n_scenarios,):
            raise InvalidInstance("one probability per scenario is required")
        if np.any(self.probabilities <= 0):
            raise InvalidInstance("probabilities must be positive")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
            raise InvalidInstance("probabilities must sum to 1")


def build_cpp(inst: CppInstance):
    """TwoStageProblem plus the demand-dual key extractor."""
    inst.validate()
    nl, nr, ns = inst.n_sources, inst.n_sinks, inst.n_scenarios
    n_y = nl * nr
    m = n_y + nr + nl  # flows, demand slacks, capacity slacks
    p_rows = nr + nl

    W = np.zeros((p_rows, m))
    for j in range(nr):
        W[j, [i * nr + j for i in range(nl)]] = 1.0  # inflow at sink j
        W[j, n_y + j] = 1.0
    for i in range(nl):
        W[nr + i, i * nr : (i + 1) * nr] = 1.0  # outflow at source i
        W[nr + i, n_y + nr + i] = 1.0

    T = np.zeros((p_rows, nl))
    T[nr:, :] = -np.eye(nl)  # capacity rows read  sum_j y_ij <= x_i

    q = np.concatenate([inst.arc_cost.ravel(), np.zeros(nr + nl)])
    scenarios = tuple(
        Scenario(
            probability=float(inst.probabilities[s]),
            technology=T,
            rhs=np.concatenate([inst.demands[s], np.zeros(nl)]),
            label=f"s{s}",
        )
        for s in range(ns)
    )
    worst = inst.demands.max(axis=0)
    theta_lb = float(np.sum(worst * np.minimum(0.0, inst.arc_cost.min(axis=0))))

    problem = TwoStageProblem(
        first_stage_cost=inst.capacity_cost,
        first_stage=FirstStage(
            rows=inst.resource_usage,
            relations=(LEQ,) * inst.resource_limit.shape[0],
            rhs=inst.resource_limit,
            lower=np.zeros(nl),
            upper=np.full(nl, np.inf),
        ),
        recourse_matrix=W,
        recourse_cost=q,
        scenarios=scenarios,
        theta_lb=theta_lb,
        name="cpp",
    )

    def extractor(scenario: int, outcome) -> DualKey:
        del scenario
        if outcome.status is LpStatus.OPTIMAL:
            return DualKey(POINT, outcome.dual[:nr])
        return DualKey(RAY, outcome.farkas_ray)

    return problem, extractor


def generate_cpp(
    n_sources: int = 5,
    n_sinks: int = 10,
    n_resources: int = 3,
    n_scenarios: int = 10,
    seed: int = 0,
    demand_levels: int = 5,
) -> CppInstance:
    """Seeded instance with discrete-uniform, pairwise-independent demands."""
    if min(n_sources, n_sinks, n_resources, n_scenarios) < 1:
        raise InvalidInstance("all shape parameters must be positive")
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.5, 2.0, n_sources)
    a = rng.uniform(0.2, 1.0, (n_resources, n_sources))
    # budgets sized so installing roughly the mean total demand is feasible
    mean_total = 2.0 * n_sinks
    r = a.mean(axis=1) * mean_total * rng.uniform(0.6, 1.2, n_resources)
    e = rng.uniform(-3.0, 1.0, (n_sources, n_sinks))
    sink_scale = rng.uniform(0.5, 1.5, n_sinks)
    levels = rng.integers(0, demand_levels, (n_scenarios, n_sinks)).astype(float)
    demands = levels * sink_scale
    probs = np.full(n_scenarios, 1.0 / n_scenarios)
    return CppInstance(c, a, r, e, demands, probs)
