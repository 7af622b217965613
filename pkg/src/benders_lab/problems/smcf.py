"""Stochastic multicommodity flow: buy arc capacity, then route demand.

First stage buys a fraction x_ij in [0,1] of each arc's nominal capacity;
the recourse routes every commodity through the purchased network. Cheap
first stages leave some scenarios unroutable, so this family exercises
feasibility cuts. The refinement key is the vector of origin-destination
potential differences, one entry per commodity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..errors import InvalidInstance
from ..lp_core import LpStatus
from ..model import FirstStage, Scenario, TwoStageProblem
from ..partition import POINT, RAY, DualKey


@dataclass(frozen=True, eq=False)
class SmcfInstance:
    n_nodes: int
    arcs: np.ndarray  # (E, 2) int, tail -> head
    commodities: np.ndarray  # (K, 2) int, origin -> destination
    routing_cost: np.ndarray  # c_{arc,k} > 0
    capacity: np.ndarray  # u_{arc} > 0, nominal
    install_cost: np.ndarray  # f_{arc} > 0, per unit of fraction
    demands: np.ndarray  # d^s_k >= 0
    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "arcs", np.asarray(self.arcs, dtype=int))
        object.__setattr__(self, "commodities", np.asarray(self.commodities, dtype=int))
        for name in ("routing_cost", "capacity", "install_cost", "demands", "probabilities"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_arcs(self) -> int:
        return self.arcs.shape[0]

    @property
    def n_commodities(self) -> int:
        return self.commodities.shape[0]

    @property
    def n_scenarios(self) -> int:
        return self.demands.shape[0]

    def validate(self) -> None:
        e, k = self.n_arcs, self.n_commodities
        if self.arcs.shape != (e, 2) or np.any(self.arcs < 0) or np.any(self.arcs >= self.n_nodes):
            raise InvalidInstance("arcs must be pairs of valid node indices")
        if np.any(self.arcs[:, 0] == self.arcs[:, 1]):
            raise InvalidInstance("self-loop arcs are not allowed")
        if self.commodities.shape != (k, 2) or np.any(self.commodities < 0) or np.any(self.commodities >= self.n_nodes):
            raise InvalidInstance("commodities must be pairs of valid node indices")
        if np.any(self.commodities[:, 0] == self.commodities[:, 1]):
            raise InvalidInstance("commodity origin must differ from destination")
        if self.routing_cost.shape != (e, k) or np.any(self.routing_cost <= 0):
            raise InvalidInstance("routing_cost must be positive and arc x commodity shaped")
        if self.capacity.shape != (e,) or np.any(self.capacity <= 0):
            raise InvalidInstance("capacity must be positive per arc")
        if self.install_cost.shape != (e,) or np.any(self.install_cost <= 0):
            raise InvalidInstance("install_cost must be positive per arc")
        if self.demands.ndim != 2 or self.demands.shape[1] != k:
            raise InvalidInstance(f"demands must have {k} columns")
        if np.any(self.demands < 0):
            raise InvalidInstance("demands must be nonnegative")
        if self.probabilities.shape != (self.n_scenarios,):
            raise InvalidInstance("one probability per scenario is required")
        if np.any(self.probabilities <= 0):
            raise InvalidInstance("probabilities must be positive")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
            raise InvalidInstance("probabilities must sum to 1")


def build_smcf(inst: SmcfInstance):
    """TwoStageProblem plus the potential-difference key extractor."""
    inst.validate()
    V, E, K, S = inst.n_nodes, inst.n_arcs, inst.n_commodities, inst.n_scenarios
    n_y = E * K  # y[k*E + e]: flow of commodity k on arc e
    m = n_y + E  # plus one capacity slack per arc
    p_rows = K * V + E

    W = np.zeros((p_rows, m))
    for k in range(K):
        for e, (a, b) in enumerate(inst.arcs):
            W[k * V + a, k * E + e] = 1.0
            W[k * V + b, k * E + e] = -1.0
    for e in range(E):
        W[K * V + e, [k * E + e for k in range(K)]] = 1.0
        W[K * V + e, n_y + e] = 1.0

    T = np.zeros((p_rows, E))
    for e in range(E):
        T[K * V + e, e] = -inst.capacity[e]  # capacity row reads sum_k y <= u_e x_e

    q = np.concatenate([inst.routing_cost.T.ravel(), np.zeros(E)])  # q[k*E+e] = c[e,k]

    def scenario_rhs(d: np.ndarray) -> np.ndarray:
        h = np.zeros(p_rows)
        for k, (o, dd) in enumerate(inst.commodities):
            h[k * V + o] = d[k]
            h[k * V + dd] = -d[k]
        return h

    scenarios = tuple(
        Scenario(float(inst.probabilities[s]), T, scenario_rhs(inst.demands[s]), label=f"s{s}")
        for s in range(S)
    )

    problem = TwoStageProblem(
        first_stage_cost=inst.install_cost,
        first_stage=FirstStage.box_only(np.zeros(E), np.ones(E)),
        recourse_matrix=W,
        recourse_cost=q,
        scenarios=scenarios,
        theta_lb=0.0,  # routing costs are positive
        name="smcf",
    )

    origins = inst.commodities[:, 0]
    destinations = inst.commodities[:, 1]
    rows_o = np.arange(K) * V + origins
    rows_d = np.arange(K) * V + destinations

    def extractor(scenario: int, outcome) -> DualKey:
        del scenario
        if outcome.status is LpStatus.OPTIMAL:
            return DualKey(POINT, outcome.dual[rows_o] - outcome.dual[rows_d])
        return DualKey(RAY, outcome.farkas_ray)

    return problem, extractor


# (f_ij, u_ij) pairs used by the benchmark configurations l1, l3, l5, l7, l9
CONFIG_GRID = ((1.0, 1.0), (10.0, 1.0), (5.0, 2.0), (1.0, 8.0), (10.0, 8.0))


def correlated_uniform(rng: np.random.Generator, n: int, k: int, rho: float) -> np.ndarray:
    """n x k uniforms with pairwise correlation rho via a Gaussian copula."""
    if rho == 0.0:
        return rng.uniform(0.0, 1.0, (n, k))
    cov = np.full((k, k), rho)
    np.fill_diagonal(cov, 1.0)
    z = rng.standard_normal((n, k)) @ np.linalg.cholesky(cov).T
    return ndtr(z)


def generate_smcf(
    n_nodes: int = 6,
    n_arcs: int = 15,
    n_commodities: int = 5,
    n_scenarios: int = 10,
    seed: int = 0,
    correlation: float = 0.0,
    config: tuple[float, float] = CONFIG_GRID[2],
) -> SmcfInstance:
    """Seeded instance on a strongly connected digraph (cycle plus chords).

    Demands are scaled so that buying every arc in full routes any scenario,
    which keeps the instances solvable while cheap first stages still trigger
    feasibility cuts.
    """
    if n_arcs < n_nodes:
        raise InvalidInstance("need at least n_nodes arcs to close the cycle")
    if not 0.0 <= correlation < 1.0:
        raise InvalidInstance("correlation must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    f_level, u_level = config

    arcs = [(i, (i + 1) % n_nodes) for i in range(n_nodes)]
    pool = [(i, j) for i in range(n_nodes) for j in range(n_nodes) if i != j and (i, j) not in arcs]
    extra = rng.choice(len(pool), size=n_arcs - n_nodes, replace=False)
    arcs += [pool[i] for i in sorted(extra)]
    arcs = np.asarray(arcs, dtype=int)

    commodities = []
    while len(commodities) < n_commodities:
        o, d = rng.integers(0, n_nodes, 2)
        if o != d:
            commodities.append((int(o), int(d)))
    commodities = np.asarray(commodities, dtype=int)

    routing_cost = rng.uniform(1.0, 5.0, (n_arcs, n_commodities))
    capacity = np.full(n_arcs, u_level)
    install_cost = np.full(n_arcs, f_level)
    d_max = 0.8 * u_level / n_commodities
    demands = correlated_uniform(rng, n_scenarios, n_commodities, correlation) * d_max
    probs = np.full(n_scenarios, 1.0 / n_scenarios)
    return SmcfInstance(n_nodes, arcs, commodities, routing_cost, capacity, install_cost, demands, probs)
