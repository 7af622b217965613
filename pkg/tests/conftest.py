"""Shared corpus fixtures and independent oracles used across the suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from benders_lab import lp_core
from benders_lab.benders import THETA, Cut, Method, SolveConfig, run
from benders_lab.model import build_deterministic_equivalent, solve_scenario_batch
from benders_lab.partition import singleton_partition
from benders_lab.problems import build_cpp, build_flcvar, build_smcf, generate_cpp, generate_flcvar, generate_smcf

# 10 seeded instances per family; sizes mix the three corpus scenario counts
CORPUS_SIZES = (10, 10, 10, 10, 50, 50, 50, 50, 200, 200)
FAMILIES = ("cpp", "smcf", "flcvar")

GENERATORS = {
    "cpp": lambda size, seed: generate_cpp(n_scenarios=size, seed=seed),
    "smcf": lambda size, seed: generate_smcf(n_scenarios=size, seed=seed),
    "flcvar": lambda size, seed: generate_flcvar(n_scenarios=size, seed=seed),
}
BUILDERS = {"cpp": build_cpp, "smcf": build_smcf, "flcvar": build_flcvar}


def corpus_entries():
    for family in FAMILIES:
        for seed, size in enumerate(CORPUS_SIZES):
            yield family, seed, size


def build_corpus_problem(family: str, seed: int, size: int):
    """(problem, extractor) with binary stages relaxed for the continuous methods."""
    inst = GENERATORS[family](size, seed)
    problem, extractor = BUILDERS[family](inst)
    if problem.first_stage_binary:
        problem = problem.relax_binary()
    return problem, extractor


@pytest.fixture(scope="session")
def corpus():
    """All 30 seeded corpus problems, built once."""
    return {
        (family, seed): build_corpus_problem(family, seed, size)
        for family, seed, size in corpus_entries()
    }


@pytest.fixture(scope="session")
def corpus_runs(corpus):
    """SolveReports of every Benders method plus GAPM/DE objective per instance.

    Shared by the agreement, monotonicity, and cut-validity criteria so the
    expensive runs happen once per session.
    """
    from benders_lab.gapm import run_gapm

    results = {}
    for (family, seed), (problem, extractor) in corpus.items():
        # solve an order tighter than the 1e-6 agreement gate so that two
        # methods each off by their own termination gap still agree
        cfg = SolveConfig(key_extractor=extractor, tol_gap=1e-8)
        per_method = {}
        for method in Method:
            per_method[method.value] = run(method, problem, cfg)
        per_method["gapm"] = run_gapm(problem, cfg)
        de, _ = build_deterministic_equivalent(problem, singleton_partition(problem.n_scenarios))
        de_out = lp_core.solve(de)
        results[(family, seed)] = (per_method, de_out.objective)
    return results


# ---------------------------------------------------------------------------
# oracles


def vertex_optimum(lp: lp_core.LinearProgram, feas_tol: float = 1e-8):
    """Brute-force optimum over basic feasible points of a pointed, bounded LP.

    Enumerates every choice of n active constraints among rows and finite
    bounds, solves the square system, filters by feasibility, and returns the
    minimum objective (None when no candidate vertex is feasible, i.e. the
    LP is infeasible provided the region is bounded with finite lower bounds).
    """
    n = lp.n_vars
    rows = np.asarray(lp.rows, dtype=float) if lp.n_rows else np.zeros((0, n))
    normals = [rows[i] for i in range(lp.n_rows)]
    offsets = [lp.rhs[i] for i in range(lp.n_rows)]
    for j in range(n):
        if np.isfinite(lp.lower[j]):
            e = np.zeros(n)
            e[j] = 1.0
            normals.append(e)
            offsets.append(lp.lower[j])
        if np.isfinite(lp.upper[j]):
            e = np.zeros(n)
            e[j] = 1.0
            normals.append(e)
            offsets.append(lp.upper[j])
    normals = np.asarray(normals)
    offsets = np.asarray(offsets)
    combos = np.asarray(list(itertools.combinations(range(len(normals)), n)))
    if combos.size == 0:
        return None
    a_stack = normals[combos]
    dets = np.abs(np.linalg.det(a_stack))
    keep = dets > 1e-10
    if not np.any(keep):
        return None
    points = np.linalg.solve(a_stack[keep], offsets[combos][keep][..., None])[..., 0]

    best = None
    slack = feas_tol * (1.0 + np.abs(lp.rhs)) if lp.n_rows else np.zeros(0)
    for x in points:
        if np.any(x < lp.lower - feas_tol * (1 + np.abs(x))):
            continue
        if np.any(x > lp.upper + feas_tol * (1 + np.abs(x))):
            continue
        ok = True
        if lp.n_rows:
            resid = rows @ x - lp.rhs
            for i, rel in enumerate(lp.relations):
                if rel == lp_core.EQ and abs(resid[i]) > slack[i]:
                    ok = False
                elif rel == lp_core.LEQ and resid[i] > slack[i]:
                    ok = False
                elif rel == lp_core.GEQ and resid[i] < -slack[i]:
                    ok = False
        if not ok:
            continue
        value = float(lp.cost @ x)
        if best is None or value < best:
            best = value
    return best


def exact_theta(problem, x):
    """Per-scenario recourse values Q(x, xi^s); the theta* of formulation (6)."""
    outs = solve_scenario_batch(problem, x, problem.scenarios)
    if any(o.status is not lp_core.LpStatus.OPTIMAL for o in outs):
        return None
    return np.array([o.objective for o in outs])


def cut_violation_at(cut: Cut, x, theta_scenarios, probabilities) -> float:
    """Violation of any cut at a multi-cut optimum, mapping Theta = sum p theta."""
    from benders_lab.benders import violation

    if THETA in cut.coeff_theta:
        theta_total = float(np.asarray(probabilities) @ np.asarray(theta_scenarios))
        return violation(cut, x, theta_total)
    return violation(cut, x, theta_scenarios)
