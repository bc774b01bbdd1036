import numpy as np
import pytest

from conftest import make_chain

from depthforge import (
    KeepSetError,
    brute_force_keep_set,
    enumerate_kernel_sizes,
    extend_sets,
    solve_keep_set,
)
from depthforge.synth import random_network


def triple_net(norms=(1.0, 2.0, 3.0)):
    return make_chain([{"k": 3, "l1": n} for n in norms])


class TestExamples:
    def test_three_3x3_target_5(self):
        net = triple_net()
        sol = solve_keep_set(0, 3, 5, net)
        assert sol.keep == {2, 3}
        assert sol.total_l1 == 5.0
        assert sol.achieved_k == 5

    def test_k1_empty_keep(self):
        net = triple_net()
        sol = solve_keep_set(0, 3, 1, net)
        assert sol.keep == frozenset()
        assert sol.total_l1 == 0.0
        assert sol.depthwise_result  # an all-identity segment is depthwise

    def test_k1_keeps_width_free_pointwise_layers(self):
        # 1x1 layers add no width, so the norm maximizer keeps them at k=1:
        # the forced channel changer and the free 16->16 projection alike
        net = make_chain([{"k": 1, "in_c": 8, "out_c": 16}, {"k": 1}])
        sol = solve_keep_set(0, 2, 1, net)
        assert sol.keep == {1, 2}
        assert sol.total_l1 == 2.0

    def test_full_size_keeps_all(self):
        net = triple_net()
        sol = solve_keep_set(0, 3, 7, net)
        assert sol.keep == {1, 2, 3}
        assert sol.total_l1 == 6.0

    def test_infeasible_size_rejected(self):
        net = triple_net()
        with pytest.raises(KeepSetError):
            solve_keep_set(0, 3, 4, net)

    def test_missing_norms_rejected(self):
        net = make_chain([{"k": 3, "l1": None}, {"k": 3}])
        with pytest.raises(Exception, match="l1_norm"):
            solve_keep_set(0, 2, 3, net)


class TestTieBreaking:
    def test_lexicographically_smallest_on_ties(self):
        net = triple_net(norms=(2.0, 2.0, 2.0))
        sol = solve_keep_set(0, 3, 5, net)
        assert sol.keep == {1, 2}
        assert solve_keep_set(0, 3, 5, net).keep == sol.keep

    def test_deterministic_repeats(self):
        rng = np.random.default_rng(30)
        net = random_network(rng, 8, barrier_prob=0.0)
        for k in enumerate_kernel_sizes(0, 8, net):
            first = solve_keep_set(0, 8, k, net)
            for _ in range(3):
                again = solve_keep_set(0, 8, k, net)
                assert again.keep == first.keep
                assert again.total_l1 == first.total_l1


class TestOracleParity:
    def test_random_spans(self):
        rng = np.random.default_rng(31)
        for _ in range(120):
            L = int(rng.integers(1, 13))
            net = random_network(rng, L, barrier_prob=0.0)
            for k in enumerate_kernel_sizes(0, L, net):
                sol = solve_keep_set(0, L, k, net)
                ref = brute_force_keep_set(0, L, k, net)
                assert sol.total_l1 == ref.objective
                assert tuple(sorted(sol.keep)) == ref.witness

    def test_flag_constrained_parity(self):
        rng = np.random.default_rng(32)
        for _ in range(60):
            L = int(rng.integers(2, 9))
            net = random_network(rng, L, depthwise_prob=0.5, barrier_prob=0.0)
            for k in enumerate_kernel_sizes(0, L, net):
                for dw in (True, False):
                    ref = brute_force_keep_set(0, L, k, net, depthwise=dw)
                    try:
                        got = solve_keep_set(0, L, k, net, depthwise=dw)
                        value = got.total_l1
                        assert got.depthwise_result == dw
                    except KeepSetError:
                        value = None
                    assert value == ref.objective


class TestFeasibilityTripleCheck:
    def test_solution_invariants(self):
        rng = np.random.default_rng(33)
        for _ in range(60):
            L = int(rng.integers(1, 10))
            net = random_network(rng, L, barrier_prob=0.0)
            forced = {
                l for l in range(1, L + 1)
                if l in net.irreducible or not net.layer(l).identity_substitutable()
            }
            for k in enumerate_kernel_sizes(0, L, net):
                sol = solve_keep_set(0, L, k, net)
                achieved = 1 + sum(net.layer(l).kernel_size - 1 for l in sol.keep)
                assert achieved == k == sol.achieved_k
                assert forced <= sol.keep
                for l in set(range(1, L + 1)) - sol.keep:
                    assert net.layer(l).identity_substitutable()
                assert sol.depthwise_result == all(
                    net.layer(l).is_depthwise for l in sol.keep
                )


class TestExtendSets:
    def test_whole_network_segment(self):
        net = triple_net()
        sol = solve_keep_set(0, 3, 5, net)
        conv, act = extend_sets(0, 3, sol, 3)
        assert conv == (2, 3)
        assert act == ()

    def test_interior_segment(self):
        net = make_chain([{"k": 3, "l1": float(n)} for n in range(1, 7)])
        sol = solve_keep_set(2, 4, 3, net)
        assert sol.keep == {4}
        conv, act = extend_sets(2, 4, sol, 6)
        assert conv == (1, 2, 4, 5, 6)
        assert act == (1, 2, 4, 5)

    def test_activation_set_cardinality(self):
        net = make_chain([{"k": 3}] * 6)
        L = net.layer_count
        for i in range(L):
            for j in range(i + 1, L + 1):
                sol = solve_keep_set(i, j, enumerate_kernel_sizes(i, j, net)[0], net)
                _, act = extend_sets(i, j, sol, L)
                assert len(act) == i + (L - j)
