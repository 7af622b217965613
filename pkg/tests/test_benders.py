"""Cut construction and the four drivers: examples, agreement, monotonicity."""

import numpy as np
import pytest

from benders_lab import lp_core
from benders_lab.benders import (
    THETA,
    CutKind,
    Method,
    SolveConfig,
    SolveStatus,
    feasibility_cut,
    optimality_cut,
    run,
    single_cut,
    violation,
)
from benders_lab.errors import BinaryNotSupportedHere, CellInfeasible, MasterInfeasible, NotViolated
from benders_lab.lp_core import GEQ, LEQ
from benders_lab.model import FirstStage, Scenario, TwoStageProblem, aggregate_cell, build_deterministic_equivalent
from benders_lab.partition import singleton_partition
from benders_lab.problems import build_cpp, build_smcf, generate_cpp, generate_smcf
from conftest import cut_violation_at, exact_theta

from test_model import two_scenario_problem


@pytest.fixture(scope="module")
def cpp_toy():
    inst = generate_cpp(n_sources=3, n_sinks=4, n_resources=2, n_scenarios=10, seed=21)
    return build_cpp(inst)


class TestOptimalityCut:
    def test_singleton_cell_reduces_to_multi_cut(self):
        prob = two_scenario_problem([2.0, 4.0], probs=(0.3, 0.7))
        agg = aggregate_cell(prob, [1])
        lam = np.array([1.5])
        cut = optimality_cut(agg, lam)
        # p^s (h - Tx)'lam <= p^s theta^s with p = 0.7, h = 4, T = [[1]]
        assert cut.rhs_const == pytest.approx(0.7 * 4.0 * 1.5)
        np.testing.assert_allclose(cut.coeff_x, [0.7 * 1.5])
        assert cut.coeff_theta == {1: pytest.approx(0.7)}

    def test_zero_dual_gives_zero_cut(self):
        prob = two_scenario_problem([2.0, 4.0])
        agg = aggregate_cell(prob, [0, 1])
        cut = optimality_cut(agg, np.zeros(1))
        assert cut.rhs_const == 0.0
        np.testing.assert_array_equal(cut.coeff_x, [0.0])

    def test_equal_duals_aggregate_to_weighted_sum_of_singletons(self):
        prob = two_scenario_problem([2.0, 4.0])
        lam = np.array([0.8])
        merged = optimality_cut(aggregate_cell(prob, [0, 1]), lam)
        s0 = optimality_cut(aggregate_cell(prob, [0]), lam)
        s1 = optimality_cut(aggregate_cell(prob, [1]), lam)
        assert merged.rhs_const == pytest.approx(s0.rhs_const + s1.rhs_const, abs=1e-12)
        np.testing.assert_allclose(merged.coeff_x, s0.coeff_x + s1.coeff_x, atol=1e-12)
        assert merged.coeff_theta == {**s0.coeff_theta, **s1.coeff_theta}


class TestFeasibilityCut:
    def test_rejects_unviolated_certificate(self):
        prob = two_scenario_problem([2.0, 4.0])
        agg = aggregate_cell(prob, [0])
        with pytest.raises(NotViolated):
            feasibility_cut(agg, np.array([-1.0]), at_x=np.array([0.0]))  # x=0 is fine

    def test_violated_at_generating_x(self):
        prob = two_scenario_problem([2.0, 4.0])
        agg = aggregate_cell(prob, [0])
        x_bad = np.array([5.0])
        out = lp_core.solve(
            lp_core.LinearProgram(
                prob.recourse_cost, prob.recourse_matrix, ("=",),
                agg.rhs - agg.technology @ x_bad, np.zeros(1), np.full(1, np.inf),
            )
        )
        cut = feasibility_cut(agg, out.farkas_ray, at_x=x_bad)
        assert cut.kind is CutKind.FEASIBILITY
        assert violation(cut, x_bad) > 1e-9
        assert violation(cut, np.array([0.0])) <= 0  # feasible x satisfies it

    def test_scaling_invariance(self):
        prob = two_scenario_problem([2.0, 4.0])
        agg = aggregate_cell(prob, [0])
        ray = np.array([0.5])
        a = feasibility_cut(agg, ray)
        b = feasibility_cut(agg, 2.0 * ray)
        assert a.rhs_const == pytest.approx(b.rhs_const, abs=1e-15)
        np.testing.assert_allclose(a.coeff_x, b.coeff_x, atol=1e-15)


class TestSingleCut:
    def test_one_cell_matches_optimality_cut_with_theta(self):
        prob = two_scenario_problem([2.0, 4.0])
        agg = aggregate_cell(prob, [0, 1])
        lam = np.array([1.2])
        multi = optimality_cut(agg, lam)
        single = single_cut([agg], [lam])
        assert single.coeff_theta == {THETA: 1.0}
        assert single.rhs_const == pytest.approx(multi.rhs_const)
        np.testing.assert_allclose(single.coeff_x, multi.coeff_x)

    def test_two_cells_sum_coefficients(self):
        prob = two_scenario_problem([2.0, 4.0])
        a0, a1 = aggregate_cell(prob, [0]), aggregate_cell(prob, [1])
        lams = [np.array([1.0]), np.array([2.0])]
        cut = single_cut([a0, a1], lams)
        c0 = optimality_cut(a0, lams[0])
        c1 = optimality_cut(a1, lams[1])
        np.testing.assert_allclose(cut.coeff_x, c0.coeff_x + c1.coeff_x, atol=1e-14)
        assert cut.rhs_const == pytest.approx(c0.rhs_const + c1.rhs_const)

    def test_missing_dual_raises(self):
        prob = two_scenario_problem([2.0, 4.0])
        with pytest.raises(CellInfeasible):
            single_cut([aggregate_cell(prob, [0, 1])], [None])


class TestViolation:
    def test_point_on_hyperplane(self):
        prob = two_scenario_problem([2.0, 4.0])
        cut = optimality_cut(aggregate_cell(prob, [0]), np.array([1.0]))
        # cut: 0.5*2 - 0.5 x <= 0.5 theta_0, tight at x = 0, theta = 2
        assert violation(cut, np.zeros(1), np.array([2.0, 0.0])) == pytest.approx(0.0, abs=1e-12)

    def test_hand_built_cut(self):
        from benders_lab.benders import Cut

        # 2 x1 <= theta_1 at (x1, theta1) = (1, 1): violated by 1
        cut = Cut(CutKind.OPTIMALITY, np.array([-2.0]), {0: 1.0}, 0.0, (0,))
        assert violation(cut, np.array([1.0]), np.array([1.0])) == pytest.approx(1.0)


class TestRunExamples:
    def test_single_scenario_all_methods_match_de(self):
        prob = two_scenario_problem([3.0], probs=(1.0,))
        de, _ = build_deterministic_equivalent(prob, singleton_partition(1))
        reference = lp_core.solve(de).objective
        for method in Method:
            rep = run(method, prob)
            assert rep.status is SolveStatus.OPTIMAL
            assert rep.objective == pytest.approx(reference, abs=1e-8)

    def test_cpp_toy_all_methods_match_de(self, cpp_toy):
        prob, extractor = cpp_toy
        de, _ = build_deterministic_equivalent(prob, singleton_partition(prob.n_scenarios))
        reference = lp_core.solve(de).objective
        for method in Method:
            rep = run(method, prob, SolveConfig(key_extractor=extractor))
            assert rep.status is SolveStatus.OPTIMAL
            assert rep.objective == pytest.approx(reference, rel=1e-6)

    def test_duplicated_scenarios_stay_in_one_cell(self):
        h = [2.5] * 10
        prob = two_scenario_problem(h, probs=(0.1,) * 10)
        rep = run(Method.ADAPTIVE_CUT, prob)
        assert rep.status is SolveStatus.OPTIMAL
        assert rep.partition_sizes[-1] == 1

    def test_binary_first_stage_rejected(self):
        from dataclasses import replace

        prob = two_scenario_problem([2.0, 4.0])
        binary = replace(prob, first_stage_binary=frozenset({0}))
        with pytest.raises(BinaryNotSupportedHere):
            run(Method.MULTI_CUT, binary)

    def test_empty_first_stage_raises_master_infeasible(self):
        prob = two_scenario_problem([2.0, 4.0])
        bad_fs = FirstStage(
            rows=np.array([[1.0]]), relations=(GEQ,), rhs=np.array([20.0]),
            lower=np.zeros(1), upper=np.full(1, 10.0),
        )
        from dataclasses import replace

        with pytest.raises(MasterInfeasible):
            run(Method.MULTI_CUT, replace(prob, first_stage=bad_fs))

    def test_iteration_limit_reported(self, cpp_toy):
        prob, extractor = cpp_toy
        rep = run(Method.MULTI_CUT, prob, SolveConfig(key_extractor=extractor, iter_limit=2))
        assert rep.status is SolveStatus.ITER_LIMIT
        assert rep.iterations <= 2


class TestInvariants:
    def test_cut_validity_against_singleton_multicut_optimum(self, cpp_toy):
        prob, extractor = cpp_toy
        multi = run(Method.MULTI_CUT, prob, SolveConfig(key_extractor=extractor))
        theta_star = exact_theta(prob, multi.x)
        probs = prob.probabilities
        for method in (Method.ADAPTIVE_CUT, Method.ADAPTIVE_SINGLE_CUT, Method.SINGLE_CUT):
            rep = run(method, prob, SolveConfig(key_extractor=extractor))
            for cut in rep.cuts:
                assert cut_violation_at(cut, multi.x, theta_star, probs) <= 1e-7

    def test_lower_bound_monotone_within_and_across_partitions(self, cpp_toy):
        prob, extractor = cpp_toy
        for method in Method:
            rep = run(method, prob, SolveConfig(key_extractor=extractor))
            lows = [rec.z_lower for rec in rep.bounds_trace]
            assert all(b - a >= -1e-8 * (1 + abs(b)) for a, b in zip(lows, lows[1:]))
            ups = [rec.z_upper for rec in rep.bounds_trace]
            assert all(b <= a + 1e-12 or not np.isfinite(a) for a, b in zip(ups, ups[1:]))

    def test_bound_sandwich_on_optimal(self, cpp_toy):
        prob, extractor = cpp_toy
        for method in Method:
            rep = run(method, prob, SolveConfig(key_extractor=extractor))
            assert rep.status is SolveStatus.OPTIMAL
            assert abs(rep.z_upper - rep.z_lower) <= 1e-6 * (1 + abs(rep.z_upper))

    def test_adaptive_from_singletons_reproduces_multicut(self, cpp_toy):
        prob, extractor = cpp_toy
        cfg = SolveConfig(key_extractor=extractor)
        multi = run(Method.MULTI_CUT, prob, cfg)
        adaptive = run(
            Method.ADAPTIVE_CUT, prob, cfg, initial_partition=singleton_partition(prob.n_scenarios)
        )
        assert adaptive.objective == pytest.approx(multi.objective, abs=1e-12)
        assert len(adaptive.cuts) == len(multi.cuts)
        for a, b in zip(adaptive.cuts, multi.cuts):
            assert a.kind == b.kind
            assert a.origin_cell == b.origin_cell
            np.testing.assert_array_equal(a.coeff_x, b.coeff_x)
            assert a.rhs_const == b.rhs_const

    def test_smcf_feasibility_cuts_flow(self):
        inst = generate_smcf(n_scenarios=10, seed=1)
        prob, extractor = build_smcf(inst)
        rep = run(Method.ADAPTIVE_CUT, prob, SolveConfig(key_extractor=extractor))
        assert rep.status is SolveStatus.OPTIMAL
        assert rep.feasibility_cuts > 0
        de, _ = build_deterministic_equivalent(prob, singleton_partition(10))
        assert rep.objective == pytest.approx(lp_core.solve(de).objective, rel=1e-6)
