import numpy as np
import pytest

from routelab import lineargraph as LG
from routelab import policies as P
from routelab.belief import TransitionMatrix
from routelab.model import (
    ArrivalModel,
    HazardModel,
    NetworkConfig,
    ObservationModel,
    PathSpec,
    PriorDistribution,
    VarianceCostModel,
)


def subnetwork_config(ell0=12.0, ell1=10.0, belief=0.5):
    return NetworkConfig(
        arrivals=ArrivalModel(5, 5, 5, "constant"),
        hazard=HazardModel(1.2, 0.3, 0.5, PriorDistribution.point(0.5)),
        observation=ObservationModel.constant(0.8, 0.2),
        variance=VarianceCostModel.capped_reciprocal(10.0, 20.0),
        paths=(PathSpec.safe(ell0), PathSpec.stochastic(ell1, belief, 2.0)),
        rho=0.95,
    )


class TestLinearReductions:
    def test_single_hop_myopic_identical_to_parallel(self):
        cfg = subnetwork_config()
        graph = LG.LinearGraphConfig((cfg,))
        state = cfg.initial_state()
        linear = LG.myopic_linear_allocation([state], graph)
        parallel = P.myopic_allocation(state, cfg.variance)
        assert linear[0].counts == parallel.counts

    def test_single_hop_hiding_identical(self):
        cfg = subnetwork_config()
        graph = LG.LinearGraphConfig((cfg,))
        linear = LG.hiding_linear_allocation(cfg.hazard.xbar_prior, [5], graph)
        parallel = P.hiding_allocation(cfg.hazard.xbar_prior, 5, cfg)
        assert linear[0].counts == parallel.counts

    def test_single_hop_char_identical(self):
        cfg = subnetwork_config()
        graph = LG.LinearGraphConfig((cfg,))
        params = P.CharParams(0.5, 0.6, 0.2, cfg.hazard.xbar_prior.cdf(0.5))
        state = cfg.initial_state()
        linear = LG.char_linear([state], params, [None], graph)
        n_hide, alloc = P.char_optimize_hiding_count(state, None, params, cfg)
        assert linear[0][0] == n_hide
        assert linear[0][1].counts == alloc.counts

    def test_identical_subnetworks_identical_allocations(self):
        cfg = subnetwork_config()
        graph = LG.LinearGraphConfig((cfg, cfg))
        states = [cfg.initial_state(), cfg.initial_state()]
        allocs = LG.myopic_linear_allocation(states, graph)
        assert allocs[0].counts == allocs[1].counts

    def test_worstcase_regime_all_safe(self):
        # fresh stochastic path costs as much as the fully loaded safe path
        cfg = subnetwork_config(ell0=10.0, ell1=35.0)
        graph = LG.LinearGraphConfig((cfg, cfg))
        states = [cfg.initial_state(), cfg.initial_state()]
        allocs = LG.myopic_linear_allocation(states, graph)
        for alloc in allocs:
            assert alloc.counts[1] == 0.0

    def test_hiding_hop_formula(self):
        cfg = NetworkConfig(
            arrivals=ArrivalModel(10, 10, 10, "constant"),
            hazard=HazardModel(1.2, 0.3, 0.5, PriorDistribution.point(0.5)),
            observation=ObservationModel.constant(0.8, 0.2),
            variance=VarianceCostModel.zero(),
            paths=(
                PathSpec.safe(20.0),
                PathSpec.stochastic(10.0, 0.5, 1.0),
                PathSpec.stochastic(10.0, 0.5, 1.0),
            ),
            rho=0.9,
        )
        graph = LG.LinearGraphConfig((cfg,))
        allocs = LG.hiding_linear_allocation(
            cfg.hazard.xbar_prior, [10], graph
        )
        expected = P.hiding_allocation(
            cfg.hazard.xbar_prior, 10, cfg, expected_stochastic_cost=14.0
        )
        got = P.hiding_allocation(cfg.hazard.xbar_prior, 10, cfg, expected_stochastic_cost=14.0)
        assert got.counts[1] == pytest.approx(5.0)
        assert allocs[0].counts[0] >= 0.0


class TestTransitionEstimation:
    def test_count_mle(self):
        tm, steady = LG.estimate_transition_matrix(list("HHLH"))
        assert tm.q_hh == pytest.approx(0.5)
        assert tm.q_lh == pytest.approx(1.0)
        assert steady == pytest.approx(2.0 / 3.0)

    def test_degenerate_sequence(self):
        with pytest.raises(LG.UndefinedRowError) as err:
            LG.estimate_transition_matrix(list("HHHH"))
        assert err.value.partial["q_hh"] == pytest.approx(1.0)

    def test_recovers_known_chain(self):
        rng = np.random.default_rng(3)
        tm_true = TransitionMatrix(0.755, 0.155)
        seq = []
        state = "H"
        for _ in range(40_000):
            seq.append(state)
            p = tm_true.q_hh if state == "H" else tm_true.q_lh
            state = "H" if rng.random() < p else "L"
        tm, steady = LG.estimate_transition_matrix(seq)
        assert tm.q_hh == pytest.approx(0.755, abs=0.05)
        assert tm.q_lh == pytest.approx(0.155, abs=0.05)
        assert steady == pytest.approx(tm_true.steady_state, abs=0.05)


def two_route_shared_config():
    # routes: [A, C] and [B, C]; C is shared
    segments = (
        LG.SegmentSpec("a", "safe", 5.0),
        LG.SegmentSpec("b", "safe", 3.0),
        LG.SegmentSpec("c", "safe", 2.0),
    )
    return LG.HybridConfig(
        segments=segments,
        routes=((0, 2), (1, 2)),
        arrivals=ArrivalModel(7, 7, 7, "constant"),
        alpha_high=1.2,
        alpha_low=0.3,
        observation=ObservationModel.constant(0.8, 0.2),
        variance=VarianceCostModel.zero(),
        prior=PriorDistribution.uniform(0.1, 0.4),
        rho=0.9,
    )


class TestHybridCosts:
    def test_shared_segment_aggregates(self):
        cfg = two_route_shared_config()
        state = cfg.initial_state(7)
        costs, social = LG.hybrid_costs(cfg, state, [3.0, 4.0])
        assert costs[0] == pytest.approx((5 + 3) + (2 + 7))
        assert costs[1] == pytest.approx((3 + 4) + (2 + 7))
        assert social == pytest.approx(3 * costs[0] + 4 * costs[1])

    def test_zero_flow_base_costs(self):
        cfg = two_route_shared_config()
        state = cfg.initial_state(7)
        costs, social = LG.hybrid_costs(cfg, state, [0.0, 0.0])
        assert costs[0] == pytest.approx(7.0)
        assert costs[1] == pytest.approx(5.0)
        assert social == 0.0

    def test_disjoint_routes_reduce_to_parallel(self):
        segments = (
            LG.SegmentSpec("a", "safe", 5.0),
            LG.SegmentSpec("b", "safe", 3.0),
        )
        cfg = LG.HybridConfig(
            segments=segments,
            routes=((0,), (1,)),
            arrivals=ArrivalModel(6, 6, 6, "constant"),
            alpha_high=1.2,
            alpha_low=0.3,
            observation=ObservationModel.constant(0.8, 0.2),
            variance=VarianceCostModel.zero(),
            prior=PriorDistribution.uniform(0.1, 0.4),
            rho=0.9,
        )
        state = cfg.initial_state(6)
        costs, _ = LG.hybrid_costs(cfg, state, [2.0, 4.0])
        assert costs[0] == pytest.approx(5 + 2)
        assert costs[1] == pytest.approx(3 + 4)

    def test_equilibrium_equalizes_route_costs(self):
        cfg = two_route_shared_config()
        state = cfg.initial_state(7)
        flows = LG.hybrid_equilibrium_flows(cfg, state, 7.0, slope=1.0)
        costs, _ = LG.hybrid_costs(cfg, state, flows)
        assert costs[0] == pytest.approx(costs[1], abs=1e-7)
        assert flows.sum() == pytest.approx(7.0)


class TestHybridSim:
    def test_episode_reproducible_and_audited(self):
        cfg = LG.beijing_hybrid_config()
        policy = LG.HybridMyopicPolicy(cfg)
        a = LG.run_hybrid_episode(policy, cfg, 8, 0.98, seed=5)
        b = LG.run_hybrid_episode(policy, cfg, 8, 0.98, seed=5)
        assert a.discounted_cost == b.discounted_cost
        assert a.discounted_cost == pytest.approx(a.recompute_discounted(), abs=1e-9)

    def test_bundled_network_loads(self):
        cfg = LG.beijing_hybrid_config()
        assert len(cfg.segments) == 9
        assert len(cfg.routes) == 3
        stoch = [cfg.segments[i].name for i in cfg.stochastic_indices]
        assert stoch == ["donghuamen", "beiheyuan", "beichizi", "jianxiang"]
        steadies = [
            cfg.segments[i].transition.steady_state for i in cfg.stochastic_indices
        ]
        assert steadies == pytest.approx([0.388, 0.106, 0.192, 0.936], abs=1e-3)


class TestHybridConfigValidation:
    def test_unknown_segment_field_rejected(self):
        import json

        from routelab.experiments import hybrid_beijing_raw
        from routelab.model import ConfigError

        doc = json.loads(json.dumps(hybrid_beijing_raw()))
        doc["segments"][0]["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            LG.parse_hybrid_config(doc)

    def test_route_with_unknown_segment_rejected(self):
        import json

        from routelab.experiments import hybrid_beijing_raw
        from routelab.model import ConfigError

        doc = json.loads(json.dumps(hybrid_beijing_raw()))
        doc["routes"][0] = [0, 99]
        with pytest.raises(ConfigError, match="unknown segment"):
            LG.parse_hybrid_config(doc)

    def test_per_segment_cap_overrides_network_cap(self):
        import json

        from routelab.experiments import hybrid_beijing_raw

        doc = json.loads(json.dumps(hybrid_beijing_raw()))
        doc["segments"][0]["cap"] = 123.0
        cfg = LG.parse_hybrid_config(doc)
        assert cfg.seg_caps[0] == 123.0
        assert cfg.seg_caps[8] == cfg.latency_cap


class TestLinearDecomposition:
    def test_total_cost_sums_over_hops(self):
        from routelab.model import Allocation, immediate_costs

        cfg_a = subnetwork_config(ell0=12.0, ell1=10.0)
        cfg_b = subnetwork_config(ell0=15.0, ell1=8.0)
        graph = LG.LinearGraphConfig((cfg_a, cfg_b))
        states = [cfg_a.initial_state(), cfg_b.initial_state()]
        allocs = LG.myopic_linear_allocation(states, graph)
        per_hop = [
            immediate_costs(state, alloc, sub.variance)[1]
            for state, alloc, sub in zip(states, allocs, graph.subnetworks)
        ]
        total = sum(per_hop)
        # the chain's cost is exactly the sum of independently computed hops
        assert total == pytest.approx(per_hop[0] + per_hop[1], abs=1e-12)
        assert all(c > 0 for c in per_hop)
