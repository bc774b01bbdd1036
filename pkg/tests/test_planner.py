import numpy as np
import pytest

from conftest import make_chain

from depthforge import (
    BudgetSpec,
    CostTables,
    InfeasibleBudgetError,
    MergePlan,
    Segment,
    brute_force_knapsack,
    brute_force_plan,
    build_importance_table,
    RawPerfMeasurement,
    run_recurrence,
    solve,
    solve_layer_only,
    validate_plan,
)
from depthforge.synth import random_network, random_tables
from depthforge.tables import discretize, iter_table_keys


def singleton_latency_sum(tables, net):
    return sum(
        tables.latency[(l.index - 1, l.index, l.kernel_size, l.is_depthwise)]
        for l in net.layers
    )


def random_instance(rng, span_prob=0.3):
    L = int(rng.integers(3, 9))
    spans = 1 if rng.random() < span_prob else 0
    net = random_network(rng, L, span_count=spans)
    tables = random_tables(rng, net)
    units = int(rng.integers(10, 51))
    total = singleton_latency_sum(tables, net)
    budget = BudgetSpec(
        budget_ms=float(rng.uniform(0.25, 1.15)) * total,
        units=units,
        sense="strict" if rng.random() < 0.7 else "inclusive",
    )
    return net, tables, budget


class TestSolve:
    def test_single_layer_network(self):
        net = make_chain([{"k": 3}])
        tables = random_tables(np.random.default_rng(40), net)
        budget = BudgetSpec(budget_ms=10 * max(tables.latency.values()), units=50)
        plan = solve(tables, budget, net)
        assert plan.kept_activations == ()
        assert len(plan.segments) == 1
        assert plan.segments[0].start == 0 and plan.segments[0].end == 1

    def test_matches_brute_force(self):
        rng = np.random.default_rng(41)
        feasible = infeasible = 0
        for _ in range(60):
            net, tables, budget = random_instance(rng)
            ref = brute_force_plan(tables, budget, net)
            try:
                plan = solve(tables, budget, net)
                got = plan.objective
                feasible += 1
            except InfeasibleBudgetError:
                got = None
                infeasible += 1
            assert got == ref.objective
        assert feasible > 10  # the sweep must actually exercise both paths

    def test_generous_budget_keeps_everything(self):
        # importance built so every extra boundary strictly helps, budget loose
        rng = np.random.default_rng(42)
        net = random_network(rng, 6, barrier_prob=0.0)
        latency = {key: 1.0 for key in iter_table_keys(net)}
        rows = [
            RawPerfMeasurement(i, j, k, dw, 0.8 - 0.2 * (j - i) + 0.01 * k, 0.8)
            for (i, j, k, dw) in latency
        ]
        tables = CostTables.assemble(net, latency, build_importance_table(rows))
        budget = BudgetSpec(budget_ms=float(net.layer_count + 1), units=100)
        plan = solve(tables, budget, net)
        assert plan.kept_activations == tuple(range(1, net.layer_count))
        assert plan.kept_convs == tuple(range(1, net.layer_count + 1))
        ref = brute_force_plan(tables, budget, net)
        assert plan.objective == ref.objective

    def test_infeasible_budget_reports_minimum(self):
        net = make_chain([{"k": 3}])
        latency = {key: 5.0 for key in iter_table_keys(net)}
        rows = [RawPerfMeasurement(i, j, k, dw, 0.8, 0.8) for (i, j, k, dw) in latency]
        tables = CostTables.assemble(net, latency, build_importance_table(rows))
        budget = BudgetSpec(budget_ms=1.0, units=10)
        with pytest.raises(InfeasibleBudgetError) as err:
            solve(tables, budget, net)
        assert err.value.min_units == 50

    def test_emitted_plans_validate_and_respect_budget(self):
        rng = np.random.default_rng(43)
        for _ in range(40):
            net, tables, budget = random_instance(rng)
            try:
                plan = solve(tables, budget, net)
            except InfeasibleBudgetError:
                continue
            report = validate_plan(plan, tables, budget, net)
            assert report.passed, report.violations
            assert plan.latency_units <= budget.usable_units

    def test_value_table_monotone_in_budget(self):
        rng = np.random.default_rng(44)
        for _ in range(15):
            net, tables, budget = random_instance(rng)
            int_latency, _ = discretize(tables.latency, budget.budget_ms, budget.units)
            state = run_recurrence(net, int_latency, tables.importance, budget.units)
            assert np.all(state.m[:, :-1] <= state.m[:, 1:])
            assert np.all(state.m[0] == 0.0)

    def test_strict_vs_inclusive_boundary(self):
        net = make_chain([{"k": 3}])
        latency = {key: (10.0 if key[2] == 3 else 2.0) for key in iter_table_keys(net)}
        rows = [
            RawPerfMeasurement(i, j, k, dw, 0.9 if k == 3 else 0.1, 0.0)
            for (i, j, k, dw) in latency
        ]
        tables = CostTables.assemble(net, latency, build_importance_table(rows))
        # keeping the conv costs exactly the whole budget
        strict = solve(tables, BudgetSpec(10.0, 10, "strict"), net)
        inclusive = solve(tables, BudgetSpec(10.0, 10, "inclusive"), net)
        assert strict.segments[0].kernel_size == 1
        assert inclusive.segments[0].kernel_size == 3

    def test_deterministic_plans(self):
        rng = np.random.default_rng(45)
        net, tables, budget = random_instance(rng, span_prob=1.0)
        plans = set()
        for _ in range(3):
            try:
                plans.add(repr(solve(tables, budget, net).to_doc()))
            except InfeasibleBudgetError:
                plans.add("infeasible")
        assert len(plans) == 1

    def test_segments_avoid_spans_and_barriers(self):
        rng = np.random.default_rng(46)
        for _ in range(30):
            net, tables, budget = random_instance(rng, span_prob=1.0)
            try:
                plan = solve(tables, budget, net)
            except InfeasibleBudgetError:
                continue
            for s in plan.segments:
                assert net.segment_allowed(s.start, s.end)
                assert net.segment_within_spans(s.start, s.end)


class TestLayerOnly:
    def test_all_forced_fits_or_infeasible(self):
        net = make_chain([{"k": 3, "in_c": 4, "out_c": 8}, {"k": 3, "out_c": 16, "act": False}])
        assert net.irreducible == {1, 2}
        imp = {1: 1.0, 2: 1.0}
        lat = {1: 2.0, 2: 2.0}
        plan = solve_layer_only(imp, lat, BudgetSpec(5.0, 50), net)
        assert plan.kept_convs == (1, 2)
        with pytest.raises(InfeasibleBudgetError):
            solve_layer_only(imp, lat, BudgetSpec(3.0, 30), net)

    def test_derived_example_value_seven(self):
        # discretized costs [2,1,3,2]; a unit-sum of 5 must be admissible for
        # the known optimum {1, 3}, so the strict budget is six units
        net = make_chain([{"k": 3}] * 4)
        imp = {1: 3.0, 2: 1.0, 3: 4.0, 4: 2.0}
        lat = {1: 2.0, 2: 1.0, 3: 3.0, 4: 2.0}
        plan = solve_layer_only(imp, lat, BudgetSpec(6.0, 6, "strict"), net)
        assert plan.kept_convs == (1, 3)
        assert plan.objective == 7.0
        ref = brute_force_knapsack([3, 1, 4, 2], [2, 1, 3, 2], 5)
        assert ref.objective == 7.0 and ref.witness == (1, 3)

    def test_equal_importance_maximizes_cardinality(self):
        rng = np.random.default_rng(47)
        for _ in range(30):
            L = int(rng.integers(2, 10))
            net = random_network(rng, L, reducible_prob=1.0)
            imp = {l: 1.0 for l in range(1, L + 1)}
            lat = {l: float(np.round(rng.uniform(0.5, 3.0), 3)) for l in range(1, L + 1)}
            budget = BudgetSpec(float(np.round(rng.uniform(1, 9), 3)), 40)
            costs = [
                int(np.floor(np.round(lat[l] * 40 / budget.budget_ms, 9)))
                for l in range(1, L + 1)
            ]
            ref = brute_force_knapsack(
                [1.0] * L, costs, budget.usable_units, forced=net.irreducible
            )
            try:
                plan = solve_layer_only(imp, lat, budget, net)
                assert len(plan.kept_convs) == int(ref.objective)
            except InfeasibleBudgetError:
                assert ref.objective is None

    def test_oracle_parity_random(self):
        rng = np.random.default_rng(48)
        for _ in range(60):
            L = int(rng.integers(1, 13))
            net = random_network(rng, L)
            imp = {l: float(np.round(rng.uniform(0.05, 4), 4)) for l in range(1, L + 1)}
            lat = {l: float(np.round(rng.uniform(0.1, 2), 4)) for l in range(1, L + 1)}
            budget = BudgetSpec(float(np.round(rng.uniform(0.5, L), 4)), int(rng.integers(8, 40)))
            from fractions import Fraction

            costs = [
                int(Fraction(lat[l]) * budget.units / Fraction(budget.budget_ms))
                for l in range(1, L + 1)
            ]
            forced = {
                l for l in range(1, L + 1)
                if l in net.irreducible or not net.layer(l).identity_substitutable()
            }
            ref = brute_force_knapsack(
                [imp[l] for l in range(1, L + 1)], costs, budget.usable_units, forced=forced
            )
            try:
                plan = solve_layer_only(imp, lat, budget, net)
                got = plan.objective
            except InfeasibleBudgetError:
                got = None
            assert got == ref.objective

    def test_plan_document_shape(self):
        net = make_chain([{"k": 3}, {"k": 3}, {"k": 3}])
        imp = {1: 2.0, 2: 0.5, 3: 1.0}
        lat = {1: 1.0, 2: 1.0, 3: 1.0}
        plan = solve_layer_only(imp, lat, BudgetSpec(2.5, 25), net)
        assert plan.mode == "layer-only"
        assert plan.kept_convs == (1, 3)
        # dropped conv 2 also loses its activation boundary
        assert plan.kept_activations == (1,)
        assert [(s.start, s.end, s.kernel_size) for s in plan.segments] == [
            (0, 1, 3),
            (1, 3, 3),
        ]
        report = validate_plan(plan, None, BudgetSpec(2.5, 25), net, layer_tables=(imp, lat))
        assert report.passed, report.violations


class TestValidatePlan:
    def _setup(self):
        rng = np.random.default_rng(49)
        net = random_network(rng, 6, barrier_prob=0.3, span_count=1)
        tables = random_tables(rng, net)
        budget = BudgetSpec(singleton_latency_sum(tables, net), 30)
        plan = solve(tables, budget, net)
        return net, tables, budget, plan

    def test_solver_output_passes(self):
        net, tables, budget, plan = self._setup()
        assert validate_plan(plan, tables, budget, net).passed

    def test_barrier_violation_named(self):
        net = make_chain([{"k": 3, "l1": 1.0}] * 3, barriers=[2])
        tables = random_tables(np.random.default_rng(50), net)
        budget = BudgetSpec(100.0, 100)
        bad = MergePlan(
            kept_activations=(1,),
            kept_convs=(1, 2, 3),
            segments=(Segment(0, 1, 3, False), Segment(1, 3, 5, False)),
            objective=1.0,
            latency_units=1,
            budget_units=100,
        )
        report = validate_plan(bad, tables, budget, net)
        assert not report.passed
        assert any("barrier 2" in v for v in report.violations)

    def test_missing_irreducible_named(self):
        net = make_chain([{"k": 3, "out_c": 16}, {"k": 3}])
        tables = random_tables(np.random.default_rng(51), net)
        budget = BudgetSpec(100.0, 100)
        bad = MergePlan(
            kept_activations=(),
            kept_convs=(2,),
            segments=(Segment(0, 2, 3, False),),
            objective=1.0,
            latency_units=1,
            budget_units=100,
        )
        report = validate_plan(bad, tables, budget, net)
        assert any("irreducible layer 1" in v for v in report.violations)

    def test_kernel_size_mismatch_caught(self):
        net, tables, budget, plan = self._setup()
        seg = plan.segments[0]
        tampered = MergePlan(
            kept_activations=plan.kept_activations,
            kept_convs=plan.kept_convs,
            segments=(Segment(seg.start, seg.end, seg.kernel_size + 2, seg.depthwise),)
            + plan.segments[1:],
            objective=plan.objective,
            latency_units=plan.latency_units,
            budget_units=plan.budget_units,
        )
        report = validate_plan(tampered, tables, budget, net)
        assert not report.passed
