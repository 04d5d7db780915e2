"""Acceptance suite: one test per exit criterion, each printing a PASS line
with its measured numbers (run with -s to watch)."""

import math

import numpy as np
import pytest

from routelab import analysis as A
from routelab import lineargraph as LG
from routelab import policies as P
from routelab import sim
from routelab.model import (
    Allocation,
    ArrivalModel,
    HazardModel,
    NetworkConfig,
    NetworkState,
    ObservationModel,
    PathSpec,
    PriorDistribution,
    VarianceCostModel,
    immediate_costs,
)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")


class TestThresholdReproduction:
    def test_fig3_threshold(self, fig3_vf):
        cfg, vf = fig3_vf
        rep = A.find_threshold_xth(cfg, vf, grid_step=0.05, x_lo=0.0, x_hi=0.8)
        ok = 0.2 <= rep.x_th <= 0.4 and rep.sign_change_verified
        report(
            "threshold-fig3",
            ok,
            f"x_th={rep.x_th:.3f}, sign structure verified={rep.sign_change_verified}",
        )
        assert 0.2 <= rep.x_th <= 0.4
        assert rep.sign_change_verified
        assert rep.monotone_verified


class TestConvergence:
    def test_fig5_convergence(self, fig5_vf):
        cfg, vf = fig5_vf
        runs, horizon = 400, 30
        myopic = sim.monte_carlo(
            P.MyopicPolicy(cfg), cfg, runs, horizon, cfg.rho, base_seed=1
        )
        social = sim.monte_carlo(
            P.SocialValuePolicy(cfg, vf), cfg, runs, horizon, cfg.rho, base_seed=1
        )
        social_rep = A.convergence_diagnostics(social, cfg.hazard.xbar_true, 0.05)
        # zero exploration every slot: each episode's belief stays bit-exact
        exact = True
        for seed in sim.episode_seeds(1, 8):
            ledger = sim.run_episode(P.MyopicPolicy(cfg), cfg, horizon, cfg.rho, seed)
            exact &= all(rec.allocation.counts[1] == 0.0 for rec in ledger.records)
            exact &= all(rec.beliefs_after[0] == 0.66 for rec in ledger.records)
        myopic_final = float(myopic.mean_belief_trace[-1, 0])
        ok = social_rep.converged and exact
        report(
            "convergence-fig5",
            ok,
            f"social x(30)={social_rep.final_mean_belief:.4f} (target 0.45±0.05), "
            f"myopic belief 0.66 exactly with zero exploration={exact}",
        )
        assert social_rep.converged
        assert exact
        assert abs(myopic_final - 0.66) < 1e-12
        myopic_rep = A.convergence_diagnostics(myopic, cfg.hazard.xbar_true, 0.05)
        assert not myopic_rep.converged


class TestMyopicWorstCase:
    def test_ratio_meets_bound(self):
        sc = A.build_scenario("theorem1_worst", alpha_high=1.5, ell_0=100.0, n_users=5, rho=0.99)
        policy, reference = A.scenario_policies(sc)
        rep = A.empirical_poa(policy, reference, sc, runs=3, horizon=300, rho=0.99, base_seed=11)
        ok = rep.empirical_ratio >= 0.9 * sc.bound
        report(
            "myopic-poa-bound",
            ok,
            f"empirical={rep.empirical_ratio:.3f} >= 0.9*bound={0.9 * sc.bound:.3f} "
            f"(psi={sc.psi:.3f})",
        )
        assert rep.empirical_ratio >= 0.9 * sc.bound

    def test_ratio_exceeds_1_8_towards_undiscounted(self):
        sc = A.build_scenario("theorem1_worst", alpha_high=1.5, ell_0=2000.0, n_users=5, rho=0.999)
        policy, reference = A.scenario_policies(sc)
        rep = A.empirical_poa(policy, reference, sc, runs=2, horizon=1200, rho=0.999, base_seed=11)
        ok = rep.empirical_ratio > 1.8
        report(
            "myopic-poa-limit",
            ok,
            f"rho=0.999 scaled: empirical={rep.empirical_ratio:.2f} > 1.8 "
            f"(bound={sc.bound:.3f})",
        )
        assert rep.empirical_ratio > 1.8


class TestHidingDivergence:
    def test_doubling_multiplies_ratio(self):
        ratios = []
        for scale in (256.0, 512.0, 1024.0, 2048.0):
            sc = A.build_scenario("hiding_over", latency_scale=scale)
            policy, reference = A.scenario_policies(sc)
            rep = A.empirical_poa(policy, reference, sc, runs=1, horizon=300, rho=0.99, base_seed=5)
            ratios.append(rep.empirical_ratio)
        mults = [b / a for a, b in zip(ratios, ratios[1:])]
        ok = all(m >= 1.8 for m in mults)
        report(
            "hiding-divergence",
            ok,
            "multipliers=" + ",".join(f"{m:.3f}" for m in mults) + " (each >= 1.8)",
        )
        assert all(m >= 1.8 for m in mults)


class TestCharWorstCase:
    def test_single_path_ratio(self):
        sc = A.build_scenario("char_worst", m_paths=1, n_mean=10.0, v=VarianceCostModel.zero())
        policy, reference = A.scenario_policies(sc)
        rep = A.empirical_poa(policy, reference, sc, runs=1, horizon=400, rho=0.99, base_seed=3)
        ok = abs(rep.empirical_ratio - 1.25) / 1.25 <= 0.05
        report(
            "char-poa-m1",
            ok,
            f"empirical={rep.empirical_ratio:.4f} vs 1.25 "
            f"({100 * abs(rep.empirical_ratio - 1.25) / 1.25:.2f}% off)",
        )
        assert rep.empirical_ratio == pytest.approx(1.25, rel=0.05)

    def test_two_path_ratio(self):
        v = VarianceCostModel.capped_reciprocal(100.0, 200.0)
        target = A.poa_char(2, 10.0, v)
        sc = A.build_scenario("char_worst", m_paths=2, n_mean=10.0, v=v)
        policy, reference = A.scenario_policies(sc)
        rep = A.empirical_poa(policy, reference, sc, runs=1, horizon=400, rho=0.99, base_seed=3)
        ok = abs(rep.empirical_ratio - target) / target <= 0.05
        report(
            "char-poa-m2",
            ok,
            f"empirical={rep.empirical_ratio:.4f} vs {target:.4f} "
            f"({100 * abs(rep.empirical_ratio - target) / target:.2f}% off)",
        )
        assert rep.empirical_ratio == pytest.approx(target, rel=0.05)

    def test_steady_state_algebra_grid(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(100):
            m = int(rng.integers(1, 5))
            nbar = float(rng.uniform(2, 150))
            v = VarianceCostModel.capped_reciprocal(
                float(rng.uniform(0, 250)), float(rng.uniform(0, 250))
            )
            s = A.steady_state_exploration(m, nbar, nbar / m, v)
            worst = max(worst, abs(s.ratio - A.poa_char(m, nbar, v)))
        report("char-steady-state-algebra", worst <= 1e-9, f"max |ratio-closed form|={worst:.2e}")
        assert worst <= 1e-9


class TestCharIncentiveCompatibility:
    def test_feasible_and_infeasible_params(self):
        rng = np.random.default_rng(23)
        ok_feasible = 0
        for _ in range(1000):
            mass = float(rng.uniform(0.05, 0.95))
            p_high = float(rng.uniform(0.0, 1.0))
            lower = p_high * (1 - mass) / mass
            if lower >= 1.0:
                p_high = p_high * mass / (1 - mass) * 0.9
                lower = p_high * (1 - mass) / mass
            p_low = float(rng.uniform(min(lower, 1.0), 1.0))
            params = P.CharParams(0.5, p_low, p_high, mass)
            if p_low + p_high == 0:
                continue
            _, _, ic = P.char_posterior_check(params)
            ok_feasible += int(ic)
        ok_infeasible = 0
        n_infeasible = 0
        for _ in range(1000):
            mass = float(rng.uniform(0.05, 0.95))
            p_high = float(rng.uniform(0.05, 1.0))
            upper = p_high * (1 - mass) / mass
            if upper <= 1e-6:
                continue
            p_low = float(rng.uniform(0.0, min(upper, 1.0) * 0.999))
            if p_low + p_high == 0:
                continue
            params = P.CharParams(0.5, p_low, p_high, mass)
            assert not params.is_feasible
            n_infeasible += 1
            _, _, ic = P.char_posterior_check(params)
            ok_infeasible += int(not ic)
        ok = ok_feasible == 1000 and ok_infeasible == n_infeasible
        report(
            "char-incentive-compatibility",
            ok,
            f"feasible ic=true {ok_feasible}/1000, infeasible ic=false "
            f"{ok_infeasible}/{n_infeasible}",
        )
        assert ok_feasible == 1000
        assert ok_infeasible == n_infeasible


def oracle_config():
    return NetworkConfig(
        arrivals=ArrivalModel(2, 2, 2, "constant"),
        hazard=HazardModel(1.5, 0.2, 0.5, PriorDistribution.point(0.5)),
        observation=ObservationModel.constant(0.8, 0.3),
        variance=VarianceCostModel.capped_reciprocal(4.0, 6.0),
        paths=(PathSpec.safe(10.0), PathSpec.stochastic(12.0, 0.6, 1.0)),
        rho=0.9,
    )


class TestMdpOracle:
    def test_two_step_value_matches_brute_force(self):
        cfg = oracle_config()
        root = cfg.initial_state()
        ells, xs = {root.paths[0].expected_latency}, {root.paths[0].belief}
        for n in range(3):
            for _, paths in P.branch_outcomes(root, (2 - n, n), cfg):
                ells.add(paths[0].expected_latency)
                xs.add(paths[0].belief)
        ell_grid = np.array(sorted(ells))
        x_grid = np.array(sorted(xs))
        prev_grid = np.array([0.0, 1.0, 2.0])

        vf = P.solve_social_mdp(
            cfg,
            P.MdpConfig(rho=0.9, max_iterations=1, tolerance=1e-15),
            ell_grid=ell_grid,
            x_grid=x_grid,
            prev_grid=prev_grid,
        )
        got = vf.value([12.0], [0.6], [1.0], 2)

        def one_shot(state):
            return min(
                immediate_costs(
                    state, Allocation((float(2 - n), float(n))), cfg.variance
                )[1]
                for n in range(3)
            )

        def brute(state, depth):
            if depth == 0:
                return one_shot(state)
            best = math.inf
            for n in range(3):
                alloc = Allocation((float(2 - n), float(n)))
                _, c = immediate_costs(state, alloc, cfg.variance)
                cont = sum(
                    p * brute(NetworkState(paths, state.safe_latency, 2), depth - 1)
                    for p, paths in P.branch_outcomes(state, alloc.counts, cfg)
                )
                best = min(best, c + 0.9 * cont)
            return best

        expect = brute(root, 1)
        ok = abs(got - expect) <= 1e-9
        report("mdp-oracle", ok, f"value-iteration={got:.12f} brute-force={expect:.12f}")
        assert got == pytest.approx(expect, abs=1e-9)

    def test_contraction_every_iteration(self):
        cfg = oracle_config()
        root = cfg.initial_state()
        ells, xs = {root.paths[0].expected_latency}, {root.paths[0].belief}
        for n in range(3):
            for _, paths in P.branch_outcomes(root, (2 - n, n), cfg):
                ells.add(paths[0].expected_latency)
                xs.add(paths[0].belief)
        vf = P.solve_social_mdp(
            cfg,
            P.MdpConfig(rho=0.9, max_iterations=60, tolerance=1e-15),
            ell_grid=np.array(sorted(ells)),
            x_grid=np.array(sorted(xs)),
            prev_grid=np.array([0.0, 1.0, 2.0]),
        )
        gaps = vf.gap_history
        ratios = [b / a for a, b in zip(gaps, gaps[1:]) if a > 1e-13]
        ok = all(r <= 0.9 + 1e-9 for r in ratios)
        report(
            "mdp-contraction",
            ok,
            f"max successive-gap ratio={max(ratios):.6f} <= rho=0.9 over {len(ratios)} sweeps",
        )
        assert all(r <= 0.9 + 1e-9 for r in ratios)


class TestBeliefMartingale:
    def test_ten_thousand_random_updates(self):
        from routelab.belief import Observation, hazard_prob, posterior_update

        rng = np.random.default_rng(29)
        worst = 0.0
        for _ in range(10_000):
            x = float(rng.uniform(0.001, 0.999))
            n = int(rng.integers(1, 50))
            qh = float(rng.uniform(0.0, 1.0))
            ql = float(rng.uniform(0.0, qh)) if qh > 0 else 0.0
            obs = ObservationModel.constant(qh, ql)
            p1 = hazard_prob(x, n, obs)
            up = posterior_update(x, n, Observation.HAZARD, obs)
            down = posterior_update(x, n, Observation.CLEAR, obs)
            worst = max(worst, abs(p1 * up + (1 - p1) * down - x))
        report("belief-martingale", worst <= 1e-12, f"max drift={worst:.2e} over 1e4 draws")
        assert worst <= 1e-12


class TestHybridReproduction:
    @pytest.fixture(scope="class")
    def hybrid_costs(self):
        cfg = LG.beijing_hybrid_config()
        pols = LG.hybrid_policy_set(cfg)
        out = {}
        for name, policy in pols.items():
            s = LG.hybrid_monte_carlo(policy, cfg, runs=50, horizon=30, rho=0.98, base_seed=2024)
            out[name] = s.mean_discounted_cost
        return out

    def test_cost_ordering(self, hybrid_costs):
        c = hybrid_costs
        ok = c["social"] <= c["char"] <= c["myopic"] <= c["hiding"]
        report(
            "hybrid-ordering",
            ok,
            "social={social:.0f} <= char={char:.0f} <= myopic={myopic:.0f} "
            "<= hiding={hiding:.0f}".format(**c),
        )
        assert c["social"] <= c["char"] <= c["myopic"] <= c["hiding"]

    def test_char_excess_within_ten_percent(self, hybrid_costs):
        c = hybrid_costs
        excess = c["char"] / c["social"] - 1
        report("hybrid-char-excess", excess <= 0.10, f"char excess={100 * excess:.1f}% <= 10%")
        assert excess <= 0.10

    def test_myopic_excess_at_least_fifty_percent(self, hybrid_costs):
        c = hybrid_costs
        excess = c["myopic"] / c["social"] - 1
        report(
            "hybrid-myopic-excess",
            excess >= 0.50,
            f"myopic excess={100 * excess:.1f}% (criterion >= 50%)",
        )
        assert excess >= 0.50

    def test_hiding_excess_at_least_eighty_percent(self, hybrid_costs):
        c = hybrid_costs
        excess = c["hiding"] / c["social"] - 1
        report(
            "hybrid-hiding-excess",
            excess >= 0.80,
            f"hiding excess={100 * excess:.1f}% >= 80%",
        )
        assert excess >= 0.80

    def test_discount_sweep_ratios(self):
        from dataclasses import replace

        cfg = replace(LG.beijing_hybrid_config(), rho=0.999)
        pols = LG.hybrid_policy_set(cfg)
        means = {}
        for name in ("social", "char", "myopic"):
            s = LG.hybrid_monte_carlo(pols[name], cfg, runs=24, horizon=30, rho=0.999, base_seed=77)
            means[name] = s.mean_discounted_cost
        ir_char = means["char"] / means["social"]
        ir_myopic = means["myopic"] / means["social"]
        ok = ir_char < 1.15 and ir_myopic > 1.5
        report(
            "hybrid-discount-sweep",
            ok,
            f"rho->1: IR_char={ir_char:.3f} (<1.15), IR_myopic={ir_myopic:.3f} (criterion >1.5)",
        )
        assert ir_char < 1.15
        assert ir_myopic > 1.5


class TestLinearGraphInvariance:
    def test_zero_hop_reductions_bit_identical(self):
        cfg = NetworkConfig(
            arrivals=ArrivalModel(5, 5, 5, "constant"),
            hazard=HazardModel(1.2, 0.3, 0.5, PriorDistribution.point(0.5)),
            observation=ObservationModel.constant(0.8, 0.2),
            variance=VarianceCostModel.capped_reciprocal(10.0, 20.0),
            paths=(PathSpec.safe(12.0), PathSpec.stochastic(10.0, 0.5, 2.0)),
            rho=0.95,
        )
        graph = LG.LinearGraphConfig((cfg,))
        state = cfg.initial_state()
        myo = LG.myopic_linear_allocation([state], graph)[0]
        assert myo.counts == P.myopic_allocation(state, cfg.variance).counts
        hid = LG.hiding_linear_allocation(cfg.hazard.xbar_prior, [5], graph)[0]
        assert hid.counts == P.hiding_allocation(cfg.hazard.xbar_prior, 5, cfg).counts
        params = P.CharParams(0.5, 0.6, 0.2, cfg.hazard.xbar_prior.cdf(0.5))
        lin = LG.char_linear([state], params, [None], graph)[0]
        par = P.char_optimize_hiding_count(state, None, params, cfg)
        ok = lin[0] == par[0] and lin[1].counts == par[1].counts
        report("linear-zero-hop", ok, "myopic/hiding/char reductions bit-identical")
        assert ok

    def test_per_subnetwork_worstcase_ratios_match(self):
        sub = A.build_scenario("theorem1_worst", alpha_high=1.5, ell_0=100.0, n_users=5, rho=0.99)
        graph = LG.LinearGraphConfig((sub.config, sub.config))
        ratios = []
        for j in range(len(graph.subnetworks)):
            policy, reference = A.scenario_policies(sub)
            rep = A.empirical_poa(
                policy, reference, sub, runs=4, horizon=250, rho=0.99, base_seed=100 + j
            )
            ratios.append(rep.empirical_ratio)
        spread = abs(ratios[0] - ratios[1]) / ratios[0]
        report(
            "linear-subnetwork-ratios",
            spread <= 0.05,
            f"ratios={ratios[0]:.3f},{ratios[1]:.3f} spread={100 * spread:.2f}% <= 5%",
        )
        assert spread <= 0.05

    def test_per_subnetwork_char_ratio(self):
        sc = A.build_scenario("char_worst", m_paths=1, n_mean=10.0, v=VarianceCostModel.zero())
        graph = LG.LinearGraphConfig((sc.config, sc.config))
        for j in range(len(graph.subnetworks)):
            policy, reference = A.scenario_policies(sc)
            rep = A.empirical_poa(policy, reference, sc, runs=1, horizon=400, rho=0.99, base_seed=7 + j)
            ok = rep.empirical_ratio <= 1.25 * 1.05
            report(
                "linear-subnetwork-char",
                ok,
                f"subnetwork {j}: ratio={rep.empirical_ratio:.4f} <= 1.3125",
            )
            assert rep.empirical_ratio <= 1.25 * 1.05
