"""Efficiency bounds, threshold search, worst-case constructions, and
convergence diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import (
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
from .policies import (
    ContinuationValue,
    Policy,
    ValueFunction,
    myopic_allocation,
    socially_optimal_allocation,
    steady_latency,
)
from .sim import MonteCarloSummary, monte_carlo


class ConstructionInfeasibleError(ValueError):
    """Scenario parameters cannot satisfy the construction's preconditions."""


class DegenerateRatioError(ZeroDivisionError):
    """Reference cost is (numerically) zero; the ratio is undefined."""


# ---------------------------------------------------------------------------
# closed-form bounds


def exploration_recovery_exponent(
    rho: float,
    alpha_high: float,
    m_paths: int,
    ell_0: float,
    n_min: float,
    n_max: float,
    v: VarianceCostModel,
) -> float:
    """Slots for a cleared stochastic path's cost to climb back to the safe
    path's under worst-case reports; the exponent in the myopic lower bound."""
    if alpha_high <= 1.0:
        raise ConstructionInfeasibleError("needs alpha_high > 1")
    per_path = n_min / m_paths
    headroom = ell_0 - per_path - float(v.value(per_path))
    if headroom <= 0:
        raise ConstructionInfeasibleError(
            "needs ell_0 > N_min/M + V(N_min/M) for the recovery bound"
        )
    arg = m_paths * headroom * (alpha_high - 1.0) / (alpha_high * n_max) + 1.0
    if arg <= 0:
        raise ConstructionInfeasibleError("recovery-bound log argument <= 0")
    return 1.0 + math.log(arg, alpha_high)


def poa_bound_myopic(
    rho: float,
    alpha_high: float,
    m_paths: int,
    ell_0: float,
    n_min: float,
    n_max: float,
    v: VarianceCostModel,
) -> tuple[float, float]:
    """Closed-form lower bound on the myopic-policy cost ratio, with its
    recovery exponent. Approaches 2 as rho -> 1 with a large exponent."""
    psi = exploration_recovery_exponent(rho, alpha_high, m_paths, ell_0, n_min, n_max, v)
    if rho == 0.0:
        return psi, 1.0
    rp = rho**psi
    return psi, 2.0 * (1.0 - rp) / (2.0 - rho - rp)


def poa_char(m_paths: int, n_mean: float, v: VarianceCostModel) -> float:
    """Worst-case cost ratio of the combined hiding/recommendation mechanism;
    always below 5/4 and approaching 1 as paths multiply."""
    if m_paths < 1 or n_mean <= 0:
        raise ConstructionInfeasibleError("needs m_paths >= 1 and n_mean > 0")
    n_star = n_mean * (2 * m_paths + 1) / (2 * m_paths * (m_paths + 1))
    damp = 1.0 + (m_paths / n_mean) * float(v.value(n_star))
    return 1.0 + 1.0 / (2.0 * (m_paths + 1) * damp)


@dataclass(frozen=True)
class SteadyStateSplit:
    n_char: float
    n_star_path: float
    n_star_safe: float
    cost_char: float
    cost_star: float

    @property
    def ratio(self) -> float:
        return self.cost_char / self.cost_star


def steady_state_exploration(
    m_paths: int,
    n_mean: float,
    c0_minus_ci: float,
    v: VarianceCostModel,
) -> SteadyStateSplit:
    """Steady splits and costs in the mechanism's worst case, where the
    zero-flow cost gap equals Nbar/M and every user over-explores.

    The stochastic paths' zero-flow steady cost is the optimal steady
    exploration plus its variance term, which is exactly the level at which
    the cost ratio collapses to the closed form in poa_char."""
    delta = c0_minus_ci
    n_char = n_mean / m_paths
    n_star_path = n_mean / (m_paths + 1) + delta / (2 * (m_paths + 1))
    n_star_safe = n_mean / (2 * (m_paths + 1))
    base = n_star_path + float(v.value(n_star_path))
    cost_star = n_mean * (base + delta / (2 * (m_paths + 1)))
    cost_char = n_mean * (base + delta / (m_paths + 1))
    return SteadyStateSplit(n_char, n_star_path, n_star_safe, cost_char, cost_star)


# ---------------------------------------------------------------------------
# exploration threshold search


@dataclass
class ThresholdReport:
    x_th: float
    grid: list[tuple[float, float, float]]  # (x, n_myopic, n_social)
    sign_change_verified: bool
    monotone_verified: bool = True


def threshold_sweep_state(
    config: NetworkConfig, x: float, arrivals: int | None = None
) -> NetworkState:
    """State at belief x with the current latency carried over from the
    configured last-slot latency and flow."""
    spec = config.stochastic_paths[0]
    hz = config.hazard
    alpha = x * hz.alpha_high + (1.0 - x) * hz.alpha_low
    ell_now = alpha * (spec.latency + spec.prev_count)
    n = arrivals if arrivals is not None else int(config.arrivals.mean)
    return NetworkState(
        (PathBeliefState(ell_now, x, spec.prev_count),),
        config.safe_latency,
        n,
    )


def find_threshold_xth(
    config: NetworkConfig,
    vf: ContinuationValue,
    grid_step: float = 0.05,
    x_lo: float = 0.0,
    x_hi: float = 0.8,
    slack: float = 1.0 + 1e-9,
) -> ThresholdReport:
    """Sweep the hazard belief, compare myopic and planner explorations, and
    locate where the planner starts out-exploring the crowd."""
    if config.num_stochastic != 1:
        raise ConstructionInfeasibleError("threshold sweep is a one-path analysis")
    xs = np.arange(x_lo, x_hi + grid_step / 2, grid_step)
    grid: list[tuple[float, float, float]] = []
    for x in xs:
        state = threshold_sweep_state(config, float(x))
        n_m = myopic_allocation(state, config.variance).counts[1]
        n_s = socially_optimal_allocation(state, vf, config).counts[1]
        grid.append((float(x), float(n_m), float(n_s)))

    tol = 1e-9
    diffs = [n_s - n_m for _, n_m, n_s in grid]
    monotone = all(diffs[i + 1] >= diffs[i] - slack for i in range(len(diffs) - 1))
    cross = None
    for i in range(1, len(diffs)):
        if diffs[i] > tol and diffs[i - 1] <= tol:
            cross = i
            break
    if cross is None:
        return ThresholdReport(float("nan"), grid, False, monotone)
    x_th = 0.5 * (grid[cross - 1][0] + grid[cross][0])
    verified = all(d <= tol for d in diffs[:cross]) and all(
        d > tol for d in diffs[cross:]
    )
    return ThresholdReport(x_th, grid, verified, monotone)


# ---------------------------------------------------------------------------
# scenario constructions


@dataclass
class ScenarioSpec:
    kind: str
    config: object  # NetworkConfig or lineargraph.HybridConfig
    defaults: dict = field(default_factory=dict)  # runs/horizon/rho suggestions
    bound: float | None = None
    psi: float | None = None
    target_ratio: float | None = None
    description: str = ""


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConstructionInfeasibleError(message)


def build_scenario(kind: str, base: NetworkConfig | None = None, **overrides) -> ScenarioSpec:
    builders = {
        "theorem1_worst": _build_myopic_worst,
        "hiding_over": _build_hiding_over,
        "hiding_under": _build_hiding_under,
        "char_worst": _build_char_worst,
        "fig3": _build_fig3,
        "fig5": _build_fig5,
    }
    if kind in ("fig7", "fig8"):
        from .lineargraph import build_hybrid_scenario

        return build_hybrid_scenario(kind, **overrides)
    if kind not in builders:
        raise ConstructionInfeasibleError(f"unknown scenario kind {kind!r}")
    return builders[kind](base, **overrides)


def _build_myopic_worst(
    base: NetworkConfig | None,
    alpha_high: float = 1.5,
    ell_0: float = 100.0,
    n_users: int = 5,
    rho: float = 0.99,
    xbar_true: float = 0.02,
) -> ScenarioSpec:
    """Zero-exploration trap: the crowd's expected carryover is exactly 1 and
    a fresh stochastic path costs as much as a fully loaded safe path, so
    selfish routing never learns that the true hazard rate is tiny."""
    x0 = 1.0 / alpha_high
    _check(alpha_high > 1.0, "needs alpha_high > 1")
    v = VarianceCostModel.zero()
    ell_1 = ell_0 + n_users - float(v.value(0))
    cfg = NetworkConfig(
        arrivals=ArrivalModel(n_users, n_users, n_users, "constant"),
        hazard=HazardModel(
            alpha_high, 0.0, xbar_true, PriorDistribution.uniform(0.05, 0.6)
        ),
        # effectively perfect reports: one scout party resolves the state, so
        # the cleared path's belief collapses and stays learned
        observation=ObservationModel.gaussian_cdf(0.5, 0.01),
        variance=v,
        paths=(PathSpec.safe(ell_0), PathSpec.stochastic(ell_1, x0, 0.0)),
        rho=rho,
    )
    state = cfg.initial_state()
    ealpha = x0 * alpha_high
    _check(abs(ealpha - 1.0) < 1e-12, "expected carryover at the start must be 1")
    c1_zero = state.paths[0].expected_latency + float(v.value(0))
    c0_full = ell_0 + n_users
    _check(abs(c1_zero - c0_full) < 1e-9, "fresh stochastic cost must equal loaded safe cost")
    psi, bound = poa_bound_myopic(rho, alpha_high, 1, ell_0, n_users, n_users, v)
    return ScenarioSpec(
        kind="theorem1_worst",
        config=cfg,
        defaults={"runs": 5, "horizon": 400, "rho": rho},
        bound=bound,
        psi=psi,
        description="myopic zero-exploration worst case",
    )


def _build_hiding_over(
    base: NetworkConfig | None,
    latency_scale: float = 256.0,
    ell_0: float = 20.0,
    n_users: int = 5,
    rho: float = 0.99,
) -> ScenarioSpec:
    """Hiding-mechanism blowup: the prior says stochastic paths are cheap, so
    hidden-information users pile onto one that is currently terrible.

    Reports carry no information here, so the trajectory is deterministic and
    the unbounded-growth check scales cleanly with the initial latency."""
    hazard = HazardModel(
        1.0, 0.05, 0.68, PriorDistribution.uniform(0.05, 0.25)
    )
    v = VarianceCostModel.capped_reciprocal(10.0, 20.0)
    cfg = NetworkConfig(
        arrivals=ArrivalModel(n_users, n_users, n_users, "constant"),
        hazard=hazard,
        observation=ObservationModel.constant(0.5, 0.5),
        variance=v,
        paths=(
            PathSpec.safe(ell_0),
            PathSpec.stochastic(latency_scale * ell_0, 0.68, float(n_users)),
        ),
        rho=rho,
    )
    from .policies import prior_expected_stochastic_cost

    expect_cheap = prior_expected_stochastic_cost(hazard.xbar_prior, cfg)
    _check(
        expect_cheap + n_users <= ell_0 + 1e-9,
        "prior-expected stochastic cost plus full load must not exceed the safe latency",
    )
    _check(
        latency_scale * ell_0 > 4 * ell_0,
        "true initial latency must dwarf the safe latency",
    )
    return ScenarioSpec(
        kind="hiding_over",
        config=cfg,
        defaults={"runs": 1, "horizon": 300, "rho": rho},
        description="information hiding over-exploration blowup",
    )


def _build_hiding_under(
    base: NetworkConfig | None,
    ell_0: float = 200.0,
    n_users: int = 5,
    rho: float = 0.99,
) -> ScenarioSpec:
    """Mirror case: a pessimistic prior keeps hidden-information users off a
    stochastic path that is actually nearly free."""
    hazard = HazardModel(
        1.6, 0.10, 0.05, PriorDistribution.uniform(0.80, 0.95)
    )
    v = VarianceCostModel.capped_reciprocal(10.0, 20.0)
    cfg = NetworkConfig(
        arrivals=ArrivalModel(n_users, n_users, n_users, "constant"),
        hazard=hazard,
        observation=ObservationModel.constant(0.7, 0.3),
        variance=v,
        paths=(PathSpec.safe(ell_0), PathSpec.stochastic(1.0, 0.05, float(n_users))),
        rho=rho,
    )
    from .policies import prior_expected_stochastic_cost

    expect = prior_expected_stochastic_cost(hazard.xbar_prior, cfg)
    _check(
        expect > ell_0 + n_users,
        "prior-expected stochastic cost must exceed the loaded safe cost",
    )
    return ScenarioSpec(
        kind="hiding_under",
        config=cfg,
        defaults={"runs": 3, "horizon": 300, "rho": rho},
        description="information hiding under-exploration case",
    )


def char_worst_steady_costs(
    beta: float, m_paths: int, n_mean: float, v: VarianceCostModel
) -> tuple[float, float, float]:
    """(mechanism steady cost, planner steady cost, planner safe flow) per
    slot when latencies settle at carryover-amplification beta."""
    per_path = n_mean / m_paths
    ell_0 = beta * per_path + float(v.value(per_path))
    cost_char = n_mean * ell_0

    def social_cost(n0: float) -> float:
        n = (n_mean - n0) / m_paths
        return (
            n0 * (ell_0 + n0)
            + m_paths * n * (beta * n + float(v.value(n)))
        )

    res = minimize_scalar(social_cost, bounds=(0.0, n_mean), method="bounded",
                          options={"xatol": 1e-10})
    return cost_char, float(res.fun), float(res.x)


def solve_char_worst_beta(
    m_paths: int, n_mean: float, v: VarianceCostModel
) -> float:
    """Carryover amplification at which the honest steady-state cost ratio
    equals the closed-form mechanism bound."""
    target = poa_char(m_paths, n_mean, v)

    def gap(beta: float) -> float:
        c_char, c_star, _ = char_worst_steady_costs(beta, m_paths, n_mean, v)
        return c_char / c_star - target

    lo, hi = 1.1, 400.0
    grid = np.geomspace(lo, hi, 200)
    prev = gap(float(grid[0]))
    for b in grid[1:]:
        cur = gap(float(b))
        if prev <= 0 <= cur or prev >= 0 >= cur:
            return float(brentq(gap, float(grid[grid < b][-1]), float(b), xtol=1e-12))
        prev = cur
    raise ConstructionInfeasibleError(
        "no carryover amplification reproduces the mechanism bound here"
    )


def _build_char_worst(
    base: NetworkConfig | None,
    m_paths: int = 1,
    n_mean: float = 10.0,
    v: VarianceCostModel | None = None,
    rho: float = 0.99,
) -> ScenarioSpec:
    """Over-exploration regime where nothing the platform says can keep users
    off the stochastic paths; tuned so the steady cost ratio realizes the
    closed-form mechanism bound."""
    v = VarianceCostModel.zero() if v is None else v
    beta = solve_char_worst_beta(m_paths, n_mean, v)
    alpha_eff = (beta - 1.0) / beta
    xbar = 0.5
    alpha_low = 2.0 * alpha_eff - 1.0
    _check(0.0 <= alpha_low < 1.0, "carryover mix needs alpha_low in [0, 1)")
    per_path = n_mean / m_paths
    ell_ss = (beta - 1.0) * per_path
    ell_0 = beta * per_path + float(v.value(per_path))
    cfg = NetworkConfig(
        arrivals=ArrivalModel(int(n_mean), int(n_mean), n_mean, "constant"),
        hazard=HazardModel(1.0, alpha_low, xbar, PriorDistribution.point(xbar)),
        observation=ObservationModel.constant(0.5, 0.5),
        variance=v,
        paths=(PathSpec.safe(ell_0),)
        + tuple(
            PathSpec.stochastic(ell_ss, xbar, per_path) for _ in range(m_paths)
        ),
        rho=rho,
    )
    state = cfg.initial_state()
    loaded = state.paths[0].expected_latency + per_path + float(v.value(per_path))
    _check(loaded <= ell_0 + 1e-9, "a fully loaded stochastic path must stay competitive")
    target = poa_char(m_paths, n_mean, v)
    return ScenarioSpec(
        kind="char_worst",
        config=cfg,
        defaults={"runs": 1, "horizon": 400, "rho": rho},
        target_ratio=target,
        description="mechanism over-exploration worst case",
    )


def _build_fig3(base: NetworkConfig | None, **overrides) -> ScenarioSpec:
    from .experiments import fig3_config

    return ScenarioSpec(
        kind="fig3",
        config=fig3_config() if base is None else base,
        defaults={"rho": 0.99},
        description="exploration versus hazard belief sweep",
    )


def _build_fig5(base: NetworkConfig | None, **overrides) -> ScenarioSpec:
    from .experiments import fig5_config

    return ScenarioSpec(
        kind="fig5",
        config=fig5_config() if base is None else base,
        defaults={"runs": 50, "horizon": 30, "rho": 0.99},
        description="belief learning convergence comparison",
    )


# ---------------------------------------------------------------------------
# empirical ratios and convergence reports


@dataclass
class PoAReport:
    psi: float | None
    closed_form_bound: float | None
    empirical_ratio: float
    scenario: str
    runs: int
    horizon: int = 0
    rho: float = 0.0
    mean_cost_policy: float = 0.0
    mean_cost_reference: float = 0.0

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "psi": self.psi,
            "bound": self.closed_form_bound,
            "empirical_ratio": self.empirical_ratio,
            "runs": self.runs,
            "horizon": self.horizon,
            "rho": self.rho,
        }


def empirical_poa(
    policy_a: Policy,
    policy_reference: Policy,
    scenario: ScenarioSpec,
    runs: int | None = None,
    horizon: int | None = None,
    rho: float | None = None,
    base_seed: int = 0,
) -> PoAReport:
    """Ratio of mean discounted costs (policy_a over the reference) on the
    scenario, with the matching closed-form bound attached when one exists."""
    runs = runs if runs is not None else scenario.defaults.get("runs", 10)
    horizon = horizon if horizon is not None else scenario.defaults.get("horizon", 100)
    rho = rho if rho is not None else scenario.defaults.get("rho", 0.99)
    a = monte_carlo(policy_a, scenario.config, runs, horizon, rho, base_seed)
    b = monte_carlo(policy_reference, scenario.config, runs, horizon, rho, base_seed)
    if abs(b.mean_discounted_cost) < 1e-9:
        raise DegenerateRatioError("reference policy cost is zero")
    closed_form = scenario.bound if scenario.bound is not None else scenario.target_ratio
    return PoAReport(
        psi=scenario.psi,
        closed_form_bound=closed_form,
        empirical_ratio=a.mean_discounted_cost / b.mean_discounted_cost,
        scenario=scenario.kind,
        runs=runs,
        horizon=horizon,
        rho=rho,
        mean_cost_policy=a.mean_discounted_cost,
        mean_cost_reference=b.mean_discounted_cost,
    )


@dataclass
class ConvergenceReport:
    final_mean_belief: float
    target_xbar: float
    converged: bool
    trace: np.ndarray


def convergence_diagnostics(
    summary: MonteCarloSummary,
    xbar_true: float,
    tolerance: float,
    path: int = 0,
) -> ConvergenceReport:
    trace = summary.mean_belief_trace[:, path]
    final = float(trace[-1])
    return ConvergenceReport(
        final_mean_belief=final,
        target_xbar=xbar_true,
        converged=abs(final - xbar_true) <= tolerance,
        trace=trace,
    )


def write_poa_reports_csv(reports: Sequence[PoAReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "psi", "bound", "empirical_ratio", "runs", "horizon", "rho"]
        )
        for r in reports:
            writer.writerow(
                [
                    r.scenario,
                    "" if r.psi is None else format(r.psi, ".10g"),
                    "" if r.closed_form_bound is None else format(r.closed_form_bound, ".10g"),
                    format(r.empirical_ratio, ".10g"),
                    str(r.runs),
                    str(r.horizon),
                    format(r.rho, ".10g"),
                ]
            )


def scenario_policies(scenario: ScenarioSpec):
    """The (evaluated, reference) policy pair each construction compares."""
    from . import policies as P

    cfg = scenario.config
    kind = scenario.kind
    if kind == "theorem1_worst":
        return P.MyopicPolicy(cfg), P.RecedingHorizonPolicy(cfg, depth=2)
    if kind in ("hiding_over", "hiding_under"):
        return P.HidingPolicy(cfg), P.RecedingHorizonPolicy(cfg, depth=2)
    if kind == "char_worst":
        params = P.CharParams(0.5, 0.6, 0.2, cfg.hazard.xbar_prior.cdf(0.5))
        return P.CharPolicy(cfg, params), P.BestConstantPolicy(cfg)
    raise ConstructionInfeasibleError(f"no policy pairing for scenario {kind!r}")
