"""Family builders, dual-key extractors, seeded generators."""

import itertools

import numpy as np
import pytest

from benders_lab import lp_core
from benders_lab.benders import Method, SolveConfig, SolveStatus, run
from benders_lab.errors import InvalidInstance
from benders_lab.lp_core import LpStatus
from benders_lab.model import build_subproblem, evaluate_first_stage, solve_scenario_batch
from benders_lab.partition import POINT, RAY, check_cell_conditions
from benders_lab.problems import (
    CONFIG_GRID,
    CppInstance,
    FlCvarInstance,
    SmcfInstance,
    assignment_costs,
    build_cpp,
    build_flcvar,
    build_smcf,
    cvar_tail_average,
    generate_cpp,
    generate_flcvar,
    generate_smcf,
)
from benders_lab.mip import solve_binary


class TestCpp:
    def test_zero_demand_zero_plan(self):
        inst = CppInstance(
            capacity_cost=[1.0, 2.0],
            resource_usage=[[1.0, 1.0]],
            resource_limit=[10.0],
            arc_cost=[[-1.0, 0.5], [0.2, -0.3]],
            demands=np.zeros((3, 2)),
            probabilities=[1 / 3] * 3,
        )
        prob, ext = build_cpp(inst)
        rep = run(Method.MULTI_CUT, prob, SolveConfig(key_extractor=ext))
        assert rep.objective == pytest.approx(0.0, abs=1e-8)
        np.testing.assert_allclose(rep.x, 0.0, atol=1e-8)

    def test_single_arc_closed_form(self):
        # e = -2, c = 1, d = 3: install x = 3, objective 3*1 - 3*2 = -3
        inst = CppInstance(
            capacity_cost=[1.0],
            resource_usage=[[1.0]],
            resource_limit=[100.0],
            arc_cost=[[-2.0]],
            demands=[[3.0]],
            probabilities=[1.0],
        )
        prob, ext = build_cpp(inst)
        rep = run(Method.MULTI_CUT, prob, SolveConfig(key_extractor=ext))
        assert rep.objective == pytest.approx(-3.0, abs=1e-8)
        np.testing.assert_allclose(rep.x, [3.0], atol=1e-7)

    def test_recourse_always_feasible_on_random_x(self):
        inst = generate_cpp(n_scenarios=8, seed=14)
        prob, _ = build_cpp(inst)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.uniform(0.0, 2.0, prob.n_first)
            outs = solve_scenario_batch(prob, x, prob.scenarios)
            assert all(o.status is LpStatus.OPTIMAL for o in outs)

    def test_extractor_returns_demand_dual_block(self):
        inst = generate_cpp(n_scenarios=4, seed=1)
        prob, ext = build_cpp(inst)
        outs = solve_scenario_batch(prob, np.ones(prob.n_first), prob.scenarios)
        key = ext(0, outs[0])
        assert key.kind == POINT
        assert key.values.shape == (inst.n_sinks,)

    def test_generator_determinism(self):
        a = generate_cpp(n_scenarios=7, seed=42)
        b = generate_cpp(n_scenarios=7, seed=42)
        np.testing.assert_array_equal(a.demands, b.demands)
        np.testing.assert_array_equal(a.arc_cost, b.arc_cost)

    def test_generator_has_profitable_arcs(self):
        inst = generate_cpp(n_scenarios=5, seed=0)
        assert inst.arc_cost.min() < 0  # all-positive e makes x = 0 trivially optimal

    def test_single_scenario_probability_one(self):
        inst = generate_cpp(n_scenarios=1, seed=3)
        np.testing.assert_array_equal(inst.probabilities, [1.0])

    def test_invalid_probabilities_rejected(self):
        inst = generate_cpp(n_scenarios=4, seed=0)
        broken = CppInstance(
            inst.capacity_cost, inst.resource_usage, inst.resource_limit,
            inst.arc_cost, inst.demands, inst.probabilities * 0.9,
        )
        with pytest.raises(InvalidInstance, match="sum to 1"):
            broken.validate()


class TestSmcf:
    def test_two_node_single_arc_routing_cost(self):
        inst = SmcfInstance(
            n_nodes=2,
            arcs=[[0, 1]],
            commodities=[[0, 1]],
            routing_cost=[[2.5]],
            capacity=[10.0],
            install_cost=[1.0],
            demands=[[3.0]],
            probabilities=[1.0],
        )
        prob, _ = build_smcf(inst)
        sub = build_subproblem(prob, np.array([1.0]), prob.scenarios[0])
        out = lp_core.solve(sub)
        assert out.status is LpStatus.OPTIMAL
        assert out.objective == pytest.approx(2.5 * 3.0, abs=1e-9)

    def test_zero_capacity_infeasible_and_cut_forces_purchase(self):
        from benders_lab.benders import feasibility_cut, violation
        from benders_lab.model import aggregate_cell

        inst = generate_smcf(n_scenarios=3, seed=2)
        prob, _ = build_smcf(inst)
        x0 = np.zeros(prob.n_first)
        outs = solve_scenario_batch(prob, x0, prob.scenarios)
        assert all(o.status is LpStatus.INFEASIBLE for o in outs)
        cut = feasibility_cut(aggregate_cell(prob, [0]), outs[0].farkas_ray, at_x=x0)
        assert violation(cut, x0) > 1e-9
        assert cut.rhs_const > 0  # demand side
        assert np.any(cut.coeff_x > 1e-12)  # satisfied only by buying capacity

    def test_equal_keys_imply_cell_condition(self):
        base = generate_smcf(n_scenarios=15, seed=6)
        demands = np.vstack([base.demands, base.demands[:5]])  # guarantee equal keys
        n = demands.shape[0]
        inst = SmcfInstance(
            base.n_nodes, base.arcs, base.commodities, base.routing_cost,
            base.capacity, base.install_cost, demands, np.full(n, 1.0 / n),
        )
        prob, ext = build_smcf(inst)
        x = np.ones(prob.n_first)
        outs = solve_scenario_batch(prob, x, prob.scenarios)
        keys = [ext(i, o) for i, o in enumerate(outs)]
        duals = [o.dual for o in outs]
        pairs_checked = 0
        for i, j in itertools.combinations(range(n), 2):
            if keys[i].kind == keys[j].kind == POINT and keys[i].matches(keys[j], 1e-8):
                assert check_cell_conditions([i, j], duals, x, prob, tol=1e-8)
                pairs_checked += 1
        assert pairs_checked >= 5  # the duplicated scenarios at minimum

    def test_extractor_length_is_commodity_count(self):
        inst = generate_smcf(n_scenarios=3, seed=0)
        prob, ext = build_smcf(inst)
        outs = solve_scenario_batch(prob, np.ones(prob.n_first), prob.scenarios)
        key = ext(0, outs[0])
        assert key.kind == POINT
        assert key.values.shape == (inst.n_commodities,)
        outs0 = solve_scenario_batch(prob, np.zeros(prob.n_first), prob.scenarios)
        assert ext(0, outs0[0]).kind == RAY

    def test_config_grid_matches_benchmark_levels(self):
        assert CONFIG_GRID == ((1.0, 1.0), (10.0, 1.0), (5.0, 2.0), (1.0, 8.0), (10.0, 8.0))

    def test_generator_determinism_and_connectivity(self):
        a = generate_smcf(n_scenarios=5, seed=11)
        b = generate_smcf(n_scenarios=5, seed=11)
        np.testing.assert_array_equal(a.demands, b.demands)
        np.testing.assert_array_equal(a.arcs, b.arcs)
        # the first n_nodes arcs close a directed cycle
        for i in range(a.n_nodes):
            assert tuple(a.arcs[i]) == (i, (i + 1) % a.n_nodes)

    def test_uncorrelated_demands(self):
        inst = generate_smcf(n_scenarios=2000, seed=5, correlation=0.0)
        corr = np.corrcoef(inst.demands, rowvar=False)
        off = corr[~np.eye(inst.n_commodities, dtype=bool)]
        assert np.all(np.abs(off) < 0.1)

    def test_correlated_demands(self):
        inst = generate_smcf(n_scenarios=3000, seed=5, correlation=0.6)
        corr = np.corrcoef(inst.demands, rowvar=False)
        off = corr[~np.eye(inst.n_commodities, dtype=bool)]
        assert np.all(np.abs(off - 0.6) < 0.1)

    def test_full_installation_routes_every_scenario(self):
        inst = generate_smcf(n_scenarios=25, seed=9)
        prob, _ = build_smcf(inst)
        ev = evaluate_first_stage(prob, np.ones(prob.n_first))
        assert ev.feasible


class TestFlCvar:
    def test_degenerate_distribution_cvar_is_the_constant(self):
        inst = FlCvarInstance(
            opening_cost=[4.0],
            capacity=[10.0],
            assign_cost=[[1.5]],
            demands=[[3.0]],
            probabilities=[1.0],
            risk_level=0.9,
        )
        prob, ext = build_flcvar(inst)
        rep = solve_binary(prob, Method.MULTI_CUT, SolveConfig(key_extractor=ext))
        assert rep.status is SolveStatus.OPTIMAL
        # open the facility, tau* = c*d, no excess: objective f + c*d
        assert rep.objective == pytest.approx(4.0 + 1.5 * 3.0, abs=1e-7)
        assert rep.x[1] == pytest.approx(1.5 * 3.0, abs=1e-6)  # tau

    def test_model_cvar_equals_tail_average(self):
        inst = generate_flcvar(n_scenarios=20, seed=13)
        prob, ext = build_flcvar(inst)
        rep = solve_binary(prob, Method.MULTI_CUT, SolveConfig(key_extractor=ext))
        x_star = np.round(rep.x[: inst.n_facilities])
        model_cvar = rep.objective - float(inst.opening_cost @ x_star)
        oracle = cvar_tail_average(
            assignment_costs(inst, x_star), inst.probabilities, inst.risk_level
        )
        assert model_cvar == pytest.approx(oracle, rel=1e-6)

    def test_every_cover_is_recourse_feasible(self):
        inst = generate_flcvar(n_facilities=3, n_clients=4, n_scenarios=10, seed=4)
        prob, _ = build_flcvar(inst)
        tau = 0.0
        for bits in itertools.product((0, 1), repeat=3):
            x = np.asarray(bits, dtype=float)
            if float(inst.capacity @ x) < inst.max_total_demand - 1e-9:
                continue
            outs = solve_scenario_batch(prob, np.concatenate([x, [tau]]), prob.scenarios)
            assert all(o.status is LpStatus.OPTIMAL for o in outs)

    def test_extractor_returns_client_block(self):
        inst = generate_flcvar(n_scenarios=6, seed=2)
        prob, ext = build_flcvar(inst)
        x = np.concatenate([np.ones(inst.n_facilities), [0.0]])
        outs = solve_scenario_batch(prob, x, prob.scenarios)
        key = ext(0, outs[0])
        assert key.kind == POINT
        assert key.values.shape == (inst.n_clients,)

    def test_demands_within_sampling_box(self):
        inst = generate_flcvar(n_scenarios=50, seed=21)
        assert np.all(inst.demands >= 0)
        # uniform on [0, base]: the per-client maximum stays below some base
        assert np.all(inst.demands.max(axis=0) <= inst.demands.max() + 1e-12)

    def test_negative_capacity_names_field(self):
        inst = generate_flcvar(n_scenarios=4, seed=3)
        broken = FlCvarInstance(
            inst.opening_cost, -inst.capacity, inst.assign_cost,
            inst.demands, inst.probabilities, inst.risk_level,
        )
        with pytest.raises(InvalidInstance, match="capacity"):
            broken.validate()

    def test_sigma_outside_unit_interval_rejected(self):
        inst = generate_flcvar(n_scenarios=4, seed=3)
        broken = FlCvarInstance(
            inst.opening_cost, inst.capacity, inst.assign_cost,
            inst.demands, inst.probabilities, 1.0,
        )
        with pytest.raises(InvalidInstance, match="risk_level"):
            broken.validate()
