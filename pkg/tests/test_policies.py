import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routelab import policies as P
from routelab.model import (
    Allocation,
    ArrivalModel,
    HazardModel,
    NetworkConfig,
    NetworkState,
    ObservationModel,
    PathBeliefState,
    PathSpec,
    PriorDistribution,
    VarianceCostModel,
    immediate_costs,
)


def tiny_config(**overrides):
    base = dict(
        arrivals=ArrivalModel(2, 2, 2, "constant"),
        hazard=HazardModel(1.5, 0.2, 0.5, PriorDistribution.point(0.5)),
        observation=ObservationModel.constant(0.8, 0.3),
        variance=VarianceCostModel.capped_reciprocal(4.0, 6.0),
        paths=(PathSpec.safe(10.0), PathSpec.stochastic(12.0, 0.6, 1.0)),
        rho=0.9,
    )
    base.update(overrides)
    return NetworkConfig(**base)


def state_of(ell0, specs, arrivals):
    return NetworkState(
        tuple(PathBeliefState(*s) for s in specs), ell0, arrivals
    )


class TestMyopicAllocation:
    def test_interior_split_equalizes_costs(self):
        v = VarianceCostModel.table([0, 100], [1.0, 1.0])
        state = state_of(10.0, [(5.0, 0.5, 10.0)], 10)
        alloc = P.myopic_allocation(state, v)
        assert alloc.counts == pytest.approx((3.0, 7.0))
        costs, _ = immediate_costs(state, alloc, v)
        assert costs[0] == pytest.approx(costs[1], abs=1e-9)

    def test_all_safe_when_stochastic_expensive(self):
        v = VarianceCostModel.zero()
        state = state_of(10.0, [(30.0, 0.5, 1.0)], 5)
        alloc = P.myopic_allocation(state, v)
        assert alloc.counts == pytest.approx((5.0, 0.0))

    def test_all_stochastic_when_safe_expensive(self):
        v = VarianceCostModel.zero()
        state = state_of(50.0, [(10.0, 0.5, 1.0)], 5)
        alloc = P.myopic_allocation(state, v)
        assert alloc.counts == pytest.approx((0.0, 5.0))

    def test_integer_mode(self):
        v = VarianceCostModel.zero()
        state = state_of(10.0, [(6.0, 0.5, 1.0)], 5)
        alloc = P.myopic_allocation(state, v, mode="integer")
        assert alloc.mode == "integer"
        assert sum(alloc.counts) == 5

    @given(
        ell0=st.floats(1, 60),
        ells=st.lists(st.floats(0, 80), min_size=1, max_size=4),
        n=st.integers(1, 40),
    )
    @settings(max_examples=120, deadline=None)
    def test_equilibrium_certificate(self, ell0, ells, n):
        v = VarianceCostModel.zero()
        state = state_of(ell0, [(e, 0.5, 1.0) for e in ells], n)
        alloc = P.myopic_allocation(state, v)
        costs, _ = immediate_costs(state, alloc, v)
        used = [c for c, f in zip(costs, alloc.counts) if f > 1e-9]
        level = min(costs)
        for c in used:
            assert c == pytest.approx(level, abs=1e-9)
        # priced-out paths would cost at least the common level at zero flow
        for c, f in zip(costs, alloc.counts):
            if f <= 1e-9:
                assert c >= level - 1e-9


class TestOneShotSocial:
    def test_marginal_fill_beats_selfish_on_social_cost(self):
        v = VarianceCostModel.zero()
        state = state_of(10.0, [(2.0, 0.5, 1.0)], 10)
        selfish = P.myopic_allocation(state, v)
        social = P.one_shot_social_allocation(state, v)
        _, c_selfish = immediate_costs(state, selfish, v)
        _, c_social = immediate_costs(state, social, v)
        assert c_social <= c_selfish + 1e-9


class TestSocialMdp:
    def test_rho_zero_equals_one_shot(self):
        cfg = tiny_config(rho=0.0)
        mdp = P.MdpConfig(rho=0.0, belief_points=5, max_iterations=5, tolerance=1e-12)
        vf = P.solve_social_mdp(
            cfg,
            mdp,
            ell_grid=np.array([0.0, 6.0, 12.0, 24.0]),
            x_grid=np.array([0.0, 0.5, 0.6, 1.0]),
            prev_grid=np.array([0.0, 1.0, 2.0]),
        )
        state = cfg.initial_state()
        one_shot = min(
            immediate_costs(state, Allocation((float(2 - n), float(n))), cfg.variance)[1]
            for n in range(3)
        )
        assert vf.value([12.0], [0.6], [1.0], 2) == pytest.approx(one_shot, abs=1e-9)

    def test_no_uncertainty_reduces_to_repeated_one_shot(self):
        # zero belief is absorbing and the low state wipes latency, so the
        # dynamic optimum is the one-shot social minimizer every slot
        cfg = tiny_config(
            hazard=HazardModel(1.5, 0.0, 0.5, PriorDistribution.point(0.5)),
            variance=VarianceCostModel.zero(),
            paths=(PathSpec.safe(10.0), PathSpec.stochastic(8.0, 0.0, 0.0)),
            rho=0.9,
        )
        mdp = P.MdpConfig(rho=0.9, max_iterations=300, tolerance=1e-10)
        vf = P.solve_social_mdp(
            cfg,
            mdp,
            ell_grid=np.array([0.0, 4.0, 8.0, 16.0]),
            x_grid=np.array([0.0, 0.5, 1.0]),
            prev_grid=np.array([0.0, 1.0, 2.0]),
        )
        state = cfg.initial_state()
        chosen = P.socially_optimal_allocation(state, vf, cfg)
        costs = [
            immediate_costs(state, Allocation((float(2 - n), float(n))), cfg.variance)[1]
            for n in range(3)
        ]
        assert costs[int(chosen.counts[1])] == pytest.approx(min(costs), abs=1e-9)

    def test_symmetric_paths_get_symmetric_allocation(self):
        cfg = tiny_config(
            arrivals=ArrivalModel(4, 4, 4, "constant"),
            paths=(
                PathSpec.safe(50.0),
                PathSpec.stochastic(5.0, 0.5, 1.0),
                PathSpec.stochastic(5.0, 0.5, 1.0),
            ),
            rho=0.0,
        )
        state = cfg.initial_state()
        alloc = P.socially_optimal_allocation(state, None, cfg, rho=0.0)
        assert abs(alloc.counts[1] - alloc.counts[2]) <= 1.0
        again = P.socially_optimal_allocation(state, None, cfg, rho=0.0)
        assert alloc.counts == again.counts  # deterministic tie-break

    def test_value_monotone_in_latency_and_belief(self, fig3_vf):
        cfg, vf = fig3_vf
        values_lat = [vf.value([l], [0.4], [2.0], 5) for l in (5.0, 15.0, 30.0, 45.0)]
        assert all(b >= a - 1e-6 for a, b in zip(values_lat, values_lat[1:]))
        values_bel = [vf.value([20.0], [x], [2.0], 5) for x in (0.1, 0.3, 0.6, 0.9)]
        assert all(b >= a - 1e-6 for a, b in zip(values_bel, values_bel[1:]))

    def test_exploration_monotone_in_belief(self, fig3_vf):
        from routelab.analysis import threshold_sweep_state

        cfg, vf = fig3_vf
        xs = np.arange(0.0, 0.85, 0.05)
        n_m, n_s = [], []
        for x in xs:
            state = threshold_sweep_state(cfg, float(x))
            n_m.append(P.myopic_allocation(state, cfg.variance).counts[1])
            n_s.append(P.socially_optimal_allocation(state, vf, cfg).counts[1])
        assert all(b <= a + 1e-9 for a, b in zip(n_m, n_m[1:]))
        assert all(b <= a + 1.0 + 1e-9 for a, b in zip(n_s, n_s[1:]))
        diffs = [s - m for m, s in zip(n_m, n_s)]
        assert all(b >= a - 1.0 - 1e-9 for a, b in zip(diffs, diffs[1:]))


class TestHiding:
    def config_for(self, ell0, n_mean):
        return tiny_config(
            arrivals=ArrivalModel(int(n_mean), int(n_mean), n_mean, "constant"),
            paths=(
                PathSpec.safe(ell0),
                PathSpec.stochastic(10.0, 0.5, 1.0),
                PathSpec.stochastic(10.0, 0.5, 1.0),
            ),
        )

    def test_interior_formula(self):
        cfg = self.config_for(20.0, 10)
        alloc = P.hiding_allocation(
            cfg.hazard.xbar_prior, 10, cfg, expected_stochastic_cost=14.0
        )
        assert alloc.counts[1] == pytest.approx(5.0)
        assert alloc.counts[2] == pytest.approx(5.0)
        assert alloc.counts[0] == pytest.approx(0.0)

    def test_nonpositive_numerator_clamps(self):
        cfg = self.config_for(20.0, 10)
        alloc = P.hiding_allocation(
            cfg.hazard.xbar_prior, 10, cfg, expected_stochastic_cost=35.0
        )
        assert alloc.counts[1] == 0.0
        assert alloc.counts[0] == 10.0

    def test_equal_split_bounded_by_capacity(self):
        cfg = self.config_for(200.0, 10)
        alloc = P.hiding_allocation(
            cfg.hazard.xbar_prior, 10, cfg, expected_stochastic_cost=5.0
        )
        assert alloc.counts[1] == pytest.approx(10 / 2)

    def test_deterministic_recommendation_matches_hiding(self):
        cfg = tiny_config(
            arrivals=ArrivalModel(121, 121, 121, "constant"),
            paths=(PathSpec.safe(30.0), PathSpec.stochastic(10.0, 0.5, 10.0)),
        )
        prior = cfg.hazard.xbar_prior
        a = P.hiding_allocation(prior, 121, cfg)
        b = P.deterministic_recommendation_allocation(prior, 121, cfg)
        assert a.counts == b.counts


class TestCharMechanism:
    def test_single_path_recommendation_frequencies(self):
        params = P.CharParams(0.5, 0.6, 0.2, 0.5)
        state = state_of(10.0, [(5.0, 0.2, 1.0)], 5)
        rng = np.random.default_rng(0)
        recs = P.char_recommend(state, params, 20_000, rng)
        freq1 = np.mean([r.path == 1 for r in recs])
        assert freq1 == pytest.approx(0.6, abs=0.01)

    def test_two_bad_paths_residual(self):
        params = P.CharParams(0.5, 0.6, 0.1, 0.5)
        state = state_of(10.0, [(5.0, 0.9, 1.0), (5.0, 0.8, 1.0)], 5)
        probs = P.recommendation_probabilities(state, params)
        assert probs[0] == pytest.approx(0.8)

    def test_infeasible_residual_raises(self):
        params = P.CharParams(0.5, 0.9, 0.1, 0.5)
        state = state_of(10.0, [(5.0, 0.2, 1.0), (5.0, 0.1, 1.0)], 5)
        with pytest.raises(P.InfeasibleParamsError):
            P.char_recommend(state, params, 10, np.random.default_rng(0))

    def test_expected_blend(self):
        params = P.CharParams(0.5, 0.6, 0.1, 0.5)
        state = state_of(10.0, [(5.0, 0.9, 1.0)], 10)
        hiding = Allocation((5.0, 5.0))
        alloc = P.char_expected_allocation(state, params, 4, hiding)
        assert alloc.counts[1] == pytest.approx(4 * 0.5 + 6 * 0.1)

    def test_blend_degenerate_when_probs_match_shares(self):
        params = P.CharParams(0.5, 0.5, 0.5, 0.5)
        state = state_of(10.0, [(5.0, 0.2, 1.0)], 10)
        hiding = Allocation((5.0, 5.0))
        a0 = P.char_expected_allocation(state, params, 0, hiding)
        a10 = P.char_expected_allocation(state, params, 10, hiding)
        assert a0.counts == pytest.approx(a10.counts)

    def test_posterior_check_examples(self):
        good, bad, ic = P.char_posterior_check(P.CharParams(0.5, 0.6, 0.2, 0.5))
        assert (good, bad, ic) == (pytest.approx(0.75), pytest.approx(0.25), True)
        good, bad, ic = P.char_posterior_check(P.CharParams(0.5, 0.4, 0.4, 0.5))
        assert (good, bad, ic) == (pytest.approx(0.5), pytest.approx(0.5), True)
        good, bad, ic = P.char_posterior_check(P.CharParams(0.5, 0.5, 0.5, 0.3))
        assert good == pytest.approx(0.3)
        assert bad == pytest.approx(0.7)
        assert not ic

    def test_posterior_check_degenerate(self):
        with pytest.raises(P.UndefinedPosteriorError):
            P.char_posterior_check(P.CharParams(0.5, 0.0, 0.0, 0.5))

    def test_optimize_hiding_count_tracks_planner(self, fig3_vf):
        cfg, vf = fig3_vf
        state = cfg.initial_state()
        params = P.default_char_params(cfg, x_th=0.3, n_star_bad=3.0)
        n_hide, alloc = P.char_optimize_hiding_count(state, vf, params, cfg)
        assert 0 <= n_hide <= state.arrivals
        n_star = P.socially_optimal_allocation(state, vf, cfg).counts[1]
        blend_options = [
            P.char_expected_allocation(
                state, params, k,
                P.hiding_allocation(cfg.hazard.xbar_prior, state.arrivals, cfg),
            ).counts[1]
            for k in range(state.arrivals + 1)
        ]
        best_reachable = min(abs(b - n_star) for b in blend_options)
        assert abs(alloc.counts[1] - n_star) <= best_reachable + 1.0


class TestValueFunctionPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        cfg = tiny_config()
        mdp = P.MdpConfig(rho=0.9, belief_points=4, max_iterations=40, tolerance=1e-10)
        vf = P.solve_social_mdp(
            cfg,
            mdp,
            ell_grid=np.array([0.0, 6.0, 12.0, 24.0]),
            x_grid=np.array([0.0, 0.5, 0.6, 1.0]),
            prev_grid=np.array([0.0, 1.0, 2.0]),
        )
        path = tmp_path / "vf.npz"
        vf.save(path)
        loaded = P.ValueFunction.load(path)
        assert loaded.fingerprint == vf.fingerprint
        assert np.array_equal(loaded.values, vf.values)
        probe = ([10.0], [0.55], [1.0], 2)
        assert loaded.value(*probe) == pytest.approx(vf.value(*probe))

    def test_fingerprint_tracks_config(self):
        cfg = tiny_config()
        mdp = P.MdpConfig(rho=0.9)
        base = P.config_fingerprint(cfg, mdp)
        assert P.config_fingerprint(cfg, mdp) == base
        changed = cfg.with_overrides(rho=0.8)
        assert P.config_fingerprint(changed, P.MdpConfig(rho=0.8)) != base

    def test_off_grid_lookups_are_counted(self):
        cfg = tiny_config()
        vf = P.solve_social_mdp(
            cfg,
            P.MdpConfig(rho=0.9, max_iterations=5, tolerance=1e-10),
            ell_grid=np.array([0.0, 10.0, 20.0]),
            x_grid=np.array([0.0, 0.5, 1.0]),
            prev_grid=np.array([0.0, 1.0, 2.0]),
        )
        before = vf.clamp_events
        vf.value([500.0], [0.5], [1.0], 2)
        assert vf.clamp_events > before


class TestDefaultCharParams:
    def test_feasible_by_construction(self):
        cfg = tiny_config(
            hazard=HazardModel(1.5, 0.2, 0.5, PriorDistribution.uniform(0.2, 0.7)),
        )
        params = P.default_char_params(cfg, x_th=0.45, n_star_bad=1.5)
        assert params.is_feasible
        _, _, ic = P.char_posterior_check(params)
        assert ic
