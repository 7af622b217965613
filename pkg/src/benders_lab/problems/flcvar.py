"""Capacitated facility location with a CVaR objective over random demand.

Binary first-stage variables open facilities (plus a continuous threshold
variable for the CVaR linearization); each scenario's recourse assigns client
demand to open facilities and pays only the excess of the assignment cost
over the threshold. The cover constraint sum K_i x_i >= max total demand
makes every recourse feasible, so only optimality cuts arise. Refinement
groups scenarios by the client-row dual block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInstance
from ..lp_core import GEQ, LpStatus
from ..model import FirstStage, Scenario, TwoStageProblem
from ..partition import POINT, RAY, DualKey


@dataclass(frozen=True, eq=False)
class FlCvarInstance:
    opening_cost: np.ndarray  # f_i >= 0
    capacity: np.ndarray  # K_i >= 0
    assign_cost: np.ndarray  # c_ij >= 0, facility x client
    demands: np.ndarray  # d^s_j >= 0
    probabilities: np.ndarray
    risk_level: float  # sigma in (0,1); CVaR averages the worst 1-sigma tail

    def __post_init__(self):
        for name in ("opening_cost", "capacity", "assign_cost", "demands", "probabilities"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_facilities(self) -> int:
        return self.opening_cost.shape[0]

    @property
    def n_clients(self) -> int:
        return self.assign_cost.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.demands.shape[0]

    @property
    def max_total_demand(self) -> float:
        return float(self.demands.sum(axis=1).max())

    def validate(self) -> None:
        ni, nj = self.n_facilities, self.n_clients
        if np.any(self.opening_cost < 0):
            raise InvalidInstance("opening_cost must be nonnegative")
        if self.capacity.shape != (ni,):
            raise InvalidInstance(f"capacity must have length {ni}")
        if np.any(self.capacity < 0):
            raise InvalidInstance("capacity must be nonnegative")
        if self.assign_cost.shape != (ni, nj) or np.any(self.assign_cost < 0):
            raise InvalidInstance(f"assign_cost must be a nonnegative {ni} x {nj} matrix")
        if self.demands.ndim != 2 or self.demands.shape[1] != nj:
            raise InvalidInstance(f"demands must have {nj} columns")
        if np.any(self.demands < 0):
            raise InvalidInstance("demands must be nonnegative")
        if not 0.0 < self.risk_level < 1.0:
            raise InvalidInstance("risk_level must lie strictly inside (0, 1)")
        if self.probabilities.shape != (self.n_scenarios,):
            raise InvalidInstance("one probability per scenario is required")
        if np.any(self.probabilities <= 0):
            raise InvalidInstance("probabilities must be positive")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
            raise InvalidInstance("probabilities must sum to 1")
        if float(self.capacity.sum()) < self.max_total_demand - 1e-9:
            raise InvalidInstance("capacity cannot cover the worst-case total demand")


def build_flcvar(inst: FlCvarInstance):
    """TwoStageProblem (x binary, tau continuous) plus the client-dual extractor."""
    inst.validate()
    ni, nj, ns = inst.n_facilities, inst.n_clients, inst.n_scenarios
    sigma = inst.risk_level
    n_y = ni * nj  # y[i*nj + j]
    m = n_y + 2 + nj + ni  # y, z, cost-cap slack, client surpluses, capacity slacks
    p_rows = 1 + nj + ni
    col_z = n_y
    col_s0 = n_y + 1
    col_surplus = n_y + 2
    col_tslack = n_y + 2 + nj

    W = np.zeros((p_rows, m))
    W[0, :n_y] = inst.assign_cost.ravel()  # total assignment cost
    W[0, col_z] = -1.0
    W[0, col_s0] = 1.0
    for j in range(nj):
        W[1 + j, [i * nj + j for i in range(ni)]] = 1.0
        W[1 + j, col_surplus + j] = -1.0  # demand must be met: >= via surplus
    for i in range(ni):
        W[1 + nj + i, i * nj : (i + 1) * nj] = 1.0
        W[1 + nj + i, col_tslack + i] = 1.0

    # first-stage vector is (x_1..x_I, tau); tau couples only the cost-cap row
    T = np.zeros((p_rows, ni + 1))
    T[0, ni] = -1.0
    for i in range(ni):
        T[1 + nj + i, i] = -inst.capacity[i]

    q = np.zeros(m)
    q[col_z] = 1.0 / (1.0 - sigma)

    def scenario_rhs(d: np.ndarray) -> np.ndarray:
        h = np.zeros(p_rows)
        h[1 : 1 + nj] = d
        return h

    scenarios = tuple(
        Scenario(float(inst.probabilities[s]), T, scenario_rhs(inst.demands[s]), label=f"s{s}")
        for s in range(ns)
    )

    cover = np.concatenate([inst.capacity, [0.0]])[None, :]
    problem = TwoStageProblem(
        first_stage_cost=np.concatenate([inst.opening_cost, [1.0]]),
        first_stage=FirstStage(
            rows=cover,
            relations=(GEQ,),
            rhs=np.array([inst.max_total_demand]),
            # tau >= 0 keeps the initial master bounded; with nonnegative
            # assignment costs the optimal threshold is a nonnegative quantile
            lower=np.zeros(ni + 1),
            upper=np.concatenate([np.ones(ni), [np.inf]]),
        ),
        recourse_matrix=W,
        recourse_cost=q,
        scenarios=scenarios,
        theta_lb=0.0,  # the recourse objective z/(1-sigma) is nonnegative
        first_stage_binary=frozenset(range(ni)),
        name="flcvar",
    )

    def extractor(scenario: int, outcome) -> DualKey:
        del scenario
        if outcome.status is LpStatus.OPTIMAL:
            return DualKey(POINT, outcome.dual[1 : 1 + nj])
        return DualKey(RAY, outcome.farkas_ray)

    return problem, extractor


def assignment_costs(inst: FlCvarInstance, x: np.ndarray) -> np.ndarray:
    """Exact per-scenario assignment cost at open-facility vector x.

    Solves the plain transportation subproblem (no CVaR reshaping); used by
    the tail-average oracle and the enumeration tests.
    """
    from .. import lp_core

    ni, nj = inst.n_facilities, inst.n_clients
    x = np.asarray(x, dtype=float)[:ni]
    rows = []
    rhs_template = []
    relations = []
    for j in range(nj):
        row = np.zeros(ni * nj)
        row[[i * nj + j for i in range(ni)]] = 1.0
        rows.append(row)
        relations.append(GEQ)
        rhs_template.append(None)  # per-scenario demand
    for i in range(ni):
        row = np.zeros(ni * nj)
        row[i * nj : (i + 1) * nj] = 1.0
        rows.append(row)
        relations.append("<=")
        rhs_template.append(inst.capacity[i] * x[i])
    rows = np.asarray(rows)
    costs = np.empty(inst.n_scenarios)
    for s in range(inst.n_scenarios):
        rhs = np.array([inst.demands[s, j] for j in range(nj)] + rhs_template[nj:], dtype=float)
        lp = lp_core.LinearProgram(
            inst.assign_cost.ravel(), rows, tuple(relations), rhs,
            np.zeros(ni * nj), np.full(ni * nj, np.inf),
        )
        out = lp_core.solve(lp)
        if out.status is not lp_core.LpStatus.OPTIMAL:
            raise InvalidInstance(f"assignment subproblem infeasible at x for scenario {s}")
        costs[s] = out.objective
    return costs


def cvar_tail_average(costs: np.ndarray, probabilities: np.ndarray, sigma: float) -> float:
    """Quantile-formula CVaR: mean of the worst 1-sigma tail with fractional weights."""
    order = np.argsort(costs)[::-1]
    remaining = 1.0 - sigma
    total = 0.0
    for idx in order:
        take = min(remaining, probabilities[idx])
        total += take * costs[idx]
        remaining -= take
        if remaining <= 1e-15:
            break
    return total / (1.0 - sigma)


def generate_flcvar(
    n_facilities: int = 4,
    n_clients: int = 6,
    n_scenarios: int = 20,
    seed: int = 0,
    risk_level: float = 0.9,
) -> FlCvarInstance:
    """Seeded instance; demands are uniform on [0, base demand] per client."""
    rng = np.random.default_rng(seed)
    f = rng.uniform(5.0, 15.0, n_facilities)
    c = rng.uniform(1.0, 4.0, (n_facilities, n_clients))
    base = rng.uniform(2.0, 6.0, n_clients)
    demands = rng.uniform(0.0, base, (n_scenarios, n_clients))
    cap = rng.uniform(0.35, 0.7, n_facilities) * base.sum()
    worst = float(demands.sum(axis=1).max())
    if cap.sum() < worst:  # keep the cover constraint attainable
        cap *= 1.1 * worst / cap.sum()
    probs = np.full(n_scenarios, 1.0 / n_scenarios)
    return FlCvarInstance(f, cap, c, demands, probs, risk_level)
