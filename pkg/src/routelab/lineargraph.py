"""Chained subnetworks (linear path graphs) and shared-segment hybrid
networks, with per-subnetwork policies and transition estimation."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .belief import Observation, TransitionMatrix, belief_transition, posterior_update
from .model import (
    Allocation,
    ArrivalModel,
    ConfigError,
    InvalidInputError,
    NetworkConfig,
    NetworkState,
    ObservationModel,
    PathBeliefState,
    PriorDistribution,
    VarianceCostModel,
    largest_remainder_round,
)
from .policies import (
    CharParams,
    ContinuationValue,
    char_optimize_hiding_count,
    char_recommend,
    hiding_allocation,
    myopic_allocation,
    prior_expected_stochastic_cost,
    steady_latency,
)
from .sim import EpisodeLedger, MonteCarloSummary, StepRecord, episode_seeds

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# linear path graphs: an ordered chain of parallel subnetworks


@dataclass(frozen=True)
class LinearGraphConfig:
    """k+1 parallel subnetworks in series, sharing hazard/observation/variance
    models; each entry is a full parallel-network config for one hop."""

    subnetworks: tuple[NetworkConfig, ...]

    def __post_init__(self) -> None:
        if not self.subnetworks:
            raise ConfigError("linear graph needs at least one subnetwork")
        m = {c.num_stochastic for c in self.subnetworks}
        if len(m) != 1:
            raise ConfigError("all subnetworks must have the same path count")

    @property
    def k(self) -> int:
        return len(self.subnetworks) - 1


def downstream_worstcase_holds(
    states: Sequence[NetworkState], j: int
) -> bool:
    """True when every later subnetwork's loaded safe path undercuts a fresh
    stochastic path, making the onward cost choice-independent."""
    for state in states[j + 1 :]:
        c0_full = state.safe_latency + state.arrivals
        for p in state.paths:
            if c0_full > p.expected_latency + 1e-9:
                return False
    return True


def myopic_linear_allocation(
    states: Sequence[NetworkState],
    config: LinearGraphConfig,
) -> list[Allocation]:
    """Per-subnetwork selfish equilibrium. Outside the regime where onward
    costs are choice-independent this is an approximation, flagged once."""
    allocations = []
    for j, (state, sub) in enumerate(zip(states, config.subnetworks)):
        if not downstream_worstcase_holds(states, j):
            log.warning(
                "subnetwork %d: onward costs are not provably choice-independent; "
                "using the per-subnetwork equilibrium as an approximation", j,
            )
        allocations.append(myopic_allocation(state, sub.variance))
    return allocations


def hiding_linear_allocation(
    prior: PriorDistribution,
    arrivals: Sequence[int],
    config: LinearGraphConfig,
) -> list[Allocation]:
    """Constant hidden-information split applied hop by hop."""
    return [
        hiding_allocation(prior, n_j, sub)
        for n_j, sub in zip(arrivals, config.subnetworks)
    ]


def char_linear(
    states: Sequence[NetworkState],
    params: CharParams,
    evaluators: Sequence[ContinuationValue | None],
    config: LinearGraphConfig,
) -> list[tuple[int, Allocation]]:
    """The mechanism applied independently inside each subnetwork."""
    out = []
    for state, evaluator, sub in zip(states, evaluators, config.subnetworks):
        out.append(char_optimize_hiding_count(state, evaluator, params, sub))
    return out


# ---------------------------------------------------------------------------
# transition estimation from discretized status sequences


class UndefinedRowError(ValueError):
    """A state never occurred, so its transition row is unidentified."""

    def __init__(self, message: str, partial: dict):
        super().__init__(message)
        self.partial = partial


def estimate_transition_matrix(
    state_sequence: Sequence[str],
) -> tuple[TransitionMatrix, float]:
    """Count-based maximum likelihood fit of the two-state chain; returns the
    matrix and its long-run high-state probability."""
    seq = [s.upper() for s in state_sequence]
    if len(seq) < 2:
        raise InvalidInputError("need at least two observations")
    if set(seq) - {"H", "L"}:
        raise InvalidInputError("states must be 'H' or 'L'")
    counts = {"H": [0, 0], "L": [0, 0]}  # [stays/goes-to-H, total]
    for a, b in zip(seq, seq[1:]):
        counts[a][1] += 1
        if b == "H":
            counts[a][0] += 1
    partial = {}
    for key, (to_h, total) in counts.items():
        if total:
            partial[f"q_{key.lower()}h"] = to_h / total
    missing = [k for k, (_, total) in counts.items() if total == 0]
    if missing:
        raise UndefinedRowError(
            f"no transitions out of state(s) {missing}; row undefined", partial
        )
    tm = TransitionMatrix(q_hh=partial["q_hh"], q_lh=partial["q_lh"])
    return tm, tm.steady_state


# ---------------------------------------------------------------------------
# hybrid networks: routes over shared road segments


@dataclass(frozen=True)
class SegmentSpec:
    name: str
    kind: str  # safe | stochastic
    latency: float
    belief: float = 0.0
    prev_flow: float = 0.0
    xbar: float = 0.0
    transition: TransitionMatrix | None = None
    cap: float | None = None  # per-segment jam ceiling; None -> network cap

    def __post_init__(self) -> None:
        if self.kind not in ("safe", "stochastic"):
            raise ConfigError(f"segment kind {self.kind!r} unknown")
        if self.latency < 0:
            raise ConfigError("segment latency must be >= 0")
        if self.kind == "stochastic" and not (0.0 <= self.belief <= 1.0):
            raise ConfigError("segment belief must be a probability")


@dataclass(frozen=True)
class HybridConfig:
    """Routes composed of road segments; distinct routes may share segments,
    and congestion on a shared segment aggregates across routes."""

    segments: tuple[SegmentSpec, ...]
    routes: tuple[tuple[int, ...], ...]
    arrivals: ArrivalModel
    alpha_high: float
    alpha_low: float
    observation: ObservationModel
    variance: VarianceCostModel
    prior: PriorDistribution
    rho: float
    latency_cap: float = math.inf  # physical jam ceiling per segment
    char: CharParams | None = None

    def __post_init__(self) -> None:
        for r, route in enumerate(self.routes):
            for s in route:
                if not (0 <= s < len(self.segments)):
                    raise ConfigError(f"route {r} references unknown segment {s}")
        if not self.routes:
            raise ConfigError("need at least one route")
        if not (1.0 <= self.alpha_high) or not (0.0 <= self.alpha_low < 1.0):
            raise ConfigError("need alpha_high >= 1 > alpha_low >= 0")

    @property
    def stochastic_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, s in enumerate(self.segments) if s.kind == "stochastic"
        )

    @property
    def incidence(self) -> np.ndarray:
        """routes x segments 0/1 matrix (cached)."""
        cached = self.__dict__.get("_incidence")
        if cached is None:
            A = np.zeros((len(self.routes), len(self.segments)))
            for r, route in enumerate(self.routes):
                for s in route:
                    A[r, s] = 1.0
            object.__setattr__(self, "_incidence", A)
            cached = A
        return cached

    @property
    def seg_caps(self) -> np.ndarray:
        cached = self.__dict__.get("_seg_caps")
        if cached is None:
            cached = np.array(
                [
                    s.cap if s.cap is not None else self.latency_cap
                    for s in self.segments
                ]
            )
            object.__setattr__(self, "_seg_caps", cached)
        return cached

    @property
    def stoch_mask(self) -> np.ndarray:
        cached = self.__dict__.get("_stoch_mask")
        if cached is None:
            cached = np.array([s.kind == "stochastic" for s in self.segments])
            object.__setattr__(self, "_stoch_mask", cached)
        return cached

    def expected_alpha(self, belief: float) -> float:
        return belief * self.alpha_high + (1.0 - belief) * self.alpha_low

    def initial_state(self, arrivals: int | None = None) -> "HybridState":
        n = int(self.arrivals.mean) if arrivals is None else arrivals
        return HybridState(
            latencies=tuple(s.latency for s in self.segments),
            beliefs=tuple(s.belief for s in self.segments),
            prev_flows=tuple(s.prev_flow for s in self.segments),
            arrivals=n,
        )


@dataclass(frozen=True)
class HybridState:
    """Platform-visible hybrid state; safe segments keep their fixed latency
    and a placeholder belief."""

    latencies: tuple[float, ...]
    beliefs: tuple[float, ...]
    prev_flows: tuple[float, ...]
    arrivals: int


def segment_flows(config: HybridConfig, route_flows: Sequence[float]) -> np.ndarray:
    return config.incidence.T @ np.asarray(route_flows, dtype=float)


def hybrid_costs(
    config: HybridConfig, state: HybridState, route_flows: Sequence[float]
) -> tuple[np.ndarray, float]:
    """Per-user route costs (summing each segment's latency, aggregated
    congestion, and variance term) and the slot's social cost."""
    if len(route_flows) != len(config.routes):
        raise InvalidInputError("one flow per route required")
    if any(f < -1e-9 for f in route_flows):
        raise InvalidInputError("route flows must be >= 0")
    flows = segment_flows(config, route_flows)
    seg_cost = np.asarray(state.latencies, dtype=float) + flows
    mask = config.stoch_mask
    seg_cost[mask] += config.variance.value(np.asarray(state.prev_flows)[mask])
    route_cost = config.incidence @ seg_cost
    social = float(np.dot(route_flows, route_cost))
    return route_cost, social


class SupportSolver:
    """Route-split solver with pre-factored linear systems for every support
    set. slope=1 equalizes per-user costs (selfish split); slope=2 equalizes
    marginal costs (one-shot social split)."""

    def __init__(self, gram: np.ndarray, slope: float):
        self.gram = gram
        self.slope = slope
        R = len(gram)
        self.R = R
        self._supports: list[tuple[list[int], np.ndarray]] = []
        for r_count in range(1, R + 1):
            for support in itertools.combinations(range(R), r_count):
                S = list(support)
                G = slope * gram[np.ix_(S, S)]
                A = np.block(
                    [
                        [G, -np.ones((r_count, 1))],
                        [np.ones((1, r_count)), np.zeros((1, 1))],
                    ]
                )
                try:
                    inv = np.linalg.inv(A)
                except np.linalg.LinAlgError:
                    continue
                self._supports.append((S, inv))

    def solve(self, base: np.ndarray, total: float) -> np.ndarray:
        if total == 0:
            return np.zeros(self.R)
        for S, inv in self._supports:
            rhs = np.concatenate([-base[S], [total]])
            sol = inv @ rhs
            f_s, lam = sol[:-1], sol[-1]
            if np.any(f_s < -1e-9):
                continue
            flows = np.zeros(self.R)
            flows[S] = np.clip(f_s, 0.0, None)
            if len(S) < self.R:
                rest_cost = base + self.slope * (self.gram @ flows)
                if any(
                    rest_cost[r] < lam - 1e-7 for r in range(self.R) if r not in S
                ):
                    continue
            return flows
        raise InvalidInputError("no equilibrium support found")


def _equilibrium_support_solve(
    base: np.ndarray, gram: np.ndarray, total: float, slope: float
) -> np.ndarray:
    return SupportSolver(gram, slope).solve(np.asarray(base, dtype=float), total)


def hybrid_base_costs(config: HybridConfig, state: HybridState) -> np.ndarray:
    """Per-route zero-flow costs at the current latencies."""
    costs, _ = hybrid_costs(config, state, [0.0] * len(config.routes))
    return np.asarray(costs)


def hybrid_equilibrium_flows(
    config: HybridConfig, state: HybridState, total: float, slope: float = 1.0
) -> np.ndarray:
    """Wardrop-style route split (slope 1) or one-shot social split (slope 2)
    on the current segment latencies."""
    gram = config.incidence @ config.incidence.T
    if total == 0:
        return np.zeros(len(config.routes))
    return _equilibrium_support_solve(hybrid_base_costs(config, state), gram, total, slope)


def hybrid_next_state(
    config: HybridConfig,
    state: HybridState,
    route_flows: Sequence[float],
    posteriors: Sequence[float],
    next_arrivals: int,
) -> HybridState:
    """Advance latencies and adopt the given post-report beliefs. A traveled
    segment's belief is then propagated one step through its hazard chain;
    beliefs of untraveled segments stay frozen (no report, no propagation)."""
    flows = segment_flows(config, route_flows)
    rounded = largest_remainder_round(tuple(flows))
    lat, bel = list(state.latencies), list(state.beliefs)
    for i, seg in enumerate(config.segments):
        if seg.kind != "stochastic":
            continue
        x_post = posteriors[i]
        alpha = config.expected_alpha(x_post)
        lat[i] = min(alpha * (state.latencies[i] + flows[i]), float(config.seg_caps[i]))
        if seg.transition is not None and rounded[i] >= 1:
            bel[i] = belief_transition(x_post, seg.transition)
        else:
            bel[i] = x_post
    return HybridState(tuple(lat), tuple(bel), tuple(flows), next_arrivals)


@dataclass(frozen=True)
class HybridTruth:
    high_flags: tuple[bool, ...]  # per segment; False for safe segments

    @classmethod
    def sample_initial(
        cls, config: HybridConfig, rng: np.random.Generator
    ) -> "HybridTruth":
        flags = []
        for seg in config.segments:
            flags.append(
                seg.kind == "stochastic" and bool(rng.random() < seg.xbar)
            )
        return cls(tuple(flags))

    def advance(self, config: HybridConfig, rng: np.random.Generator) -> "HybridTruth":
        flags = []
        for i, seg in enumerate(config.segments):
            if seg.kind != "stochastic":
                flags.append(False)
            elif seg.transition is None:
                flags.append(bool(rng.random() < seg.xbar))
            else:
                tm = seg.transition
                p = tm.q_hh if self.high_flags[i] else tm.q_lh
                flags.append(bool(rng.random() < p))
        return HybridTruth(tuple(flags))


@dataclass(frozen=True)
class HybridWorldPath:
    """Pre-drawn world randomness (per-segment hazard chains, report-noise
    uniforms, arrivals) so all policies face identical conditions."""

    high_flags: np.ndarray  # (T, S) bool
    obs_uniform: np.ndarray  # (T, S)
    arrivals: np.ndarray  # (T + 1,)

    @classmethod
    def draw(cls, config: HybridConfig, horizon: int, seed: int) -> "HybridWorldPath":
        rng = np.random.default_rng(seed)
        S = len(config.segments)
        flags = np.zeros((horizon, S), dtype=bool)
        # the platform's published beliefs are calibrated at t=0, so the
        # initial hidden states are drawn from them
        state = np.array(
            [
                seg.kind == "stochastic" and rng.random() < seg.belief
                for seg in config.segments
            ]
        )
        for t in range(horizon):
            flags[t] = state
            nxt = []
            for i, seg in enumerate(config.segments):
                if seg.kind != "stochastic":
                    nxt.append(False)
                elif seg.transition is None:
                    nxt.append(rng.random() < seg.xbar)
                else:
                    p = seg.transition.q_hh if state[i] else seg.transition.q_lh
                    nxt.append(rng.random() < p)
            state = np.array(nxt)
        obs_u = rng.random((horizon, S))
        arrivals = np.array([config.arrivals.sample(rng) for _ in range(horizon + 1)])
        return cls(flags, obs_u, arrivals)


def hybrid_apply_step(
    config: HybridConfig,
    state: HybridState,
    route_flows: Sequence[float],
    high_flags: np.ndarray,
    obs_uniform: np.ndarray,
    next_arrivals: int,
) -> tuple[HybridState, StepRecord]:
    """Deterministic hybrid slot transition given pre-drawn randomness."""
    route_cost, social = hybrid_costs(config, state, route_flows)
    flows = segment_flows(config, route_flows)
    rounded = largest_remainder_round(tuple(flows))
    posteriors = list(state.beliefs)
    observations = []
    for i, seg in enumerate(config.segments):
        if seg.kind != "stochastic":
            continue
        n_obs = rounded[i]
        if n_obs < 1:
            observations.append(Observation.NONE)
            continue
        q = (
            config.observation.q_high(n_obs)
            if high_flags[i]
            else config.observation.q_low(n_obs)
        )
        y = Observation.from_flag(int(obs_uniform[i] < float(q)))
        observations.append(y)
        posteriors[i] = posterior_update(
            state.beliefs[i], n_obs, y, config.observation
        )
    next_state = hybrid_next_state(config, state, route_flows, posteriors, next_arrivals)
    stoch = config.stochastic_indices
    record = StepRecord(
        time=0,
        arrivals=state.arrivals,
        allocation=Allocation(tuple(float(f) for f in route_flows)),
        observations=tuple(observations),
        per_path_cost=tuple(float(c) for c in route_cost),
        social_cost=social,
        beliefs_after=tuple(next_state.beliefs[i] for i in stoch),
        latencies_after=tuple(next_state.latencies[i] for i in stoch),
    )
    return next_state, record


def hybrid_step(
    config: HybridConfig,
    state: HybridState,
    truth: HybridTruth,
    route_flows: Sequence[float],
    rng: np.random.Generator,
) -> tuple[HybridState, HybridTruth, StepRecord]:
    """One slot of the hybrid world: costs, per-segment reports, updates."""
    flags = np.array(truth.high_flags)
    obs_u = rng.random(len(config.segments))
    next_truth = truth.advance(config, rng)
    next_arrivals = config.arrivals.sample(rng)
    next_state, record = hybrid_apply_step(
        config, state, route_flows, flags, obs_u, next_arrivals
    )
    return next_state, next_truth, record


def run_hybrid_episode(
    policy,
    config: HybridConfig,
    horizon: int,
    rho: float,
    seed: int,
) -> EpisodeLedger:
    world = HybridWorldPath.draw(config, horizon, seed)
    policy_rng = np.random.default_rng([seed, 0x9E3779B9])
    state = config.initial_state()
    records = []
    discounted = 0.0
    for t in range(horizon):
        flows = policy.route_flows(state, policy_rng)
        if abs(sum(flows) - state.arrivals) > 1e-6 or any(f < -1e-9 for f in flows):
            raise InvalidInputError(
                f"policy {policy.name!r} returned invalid flows at t={t}"
            )
        state, record = hybrid_apply_step(
            config, state, flows, world.high_flags[t], world.obs_uniform[t],
            int(world.arrivals[t + 1]),
        )
        record = replace(record, time=t)
        records.append(record)
        discounted += rho**t * record.social_cost
    return EpisodeLedger(records, discounted, rho, seed)


def hybrid_monte_carlo(
    policy,
    config: HybridConfig,
    runs: int,
    horizon: int,
    rho: float,
    base_seed: int,
) -> MonteCarloSummary:
    costs = np.empty(runs)
    n_stoch = len(config.stochastic_indices)
    traces = np.empty((runs, horizon, n_stoch))
    for r, seed in enumerate(episode_seeds(base_seed, runs)):
        ledger = run_hybrid_episode(policy, config, horizon, rho, seed)
        costs[r] = ledger.discounted_cost
        traces[r] = [rec.beliefs_after for rec in ledger.records]
    return MonteCarloSummary(
        runs=runs,
        mean_discounted_cost=float(costs.mean()),
        std=float(costs.std(ddof=0)),
        mean_belief_trace=traces.mean(axis=0),
        policy_name=policy.name,
        discounted_costs=costs,
    )


# ---------------------------------------------------------------------------
# hybrid policies


@dataclass
class HybridMyopicPolicy:
    config: HybridConfig
    name: str = "myopic"

    def __post_init__(self) -> None:
        gram = self.config.incidence @ self.config.incidence.T
        self._solver = SupportSolver(gram, slope=1.0)

    def route_flows(self, state: HybridState, rng) -> np.ndarray:
        return self._solver.solve(
            hybrid_base_costs(self.config, state), float(state.arrivals)
        )


@dataclass
class HybridHidingPolicy:
    """Constant route shares from the prior-expected steady costs; users see
    nothing, so the split never reacts to the actual state."""

    config: HybridConfig
    name: str = "hiding"

    def __post_init__(self) -> None:
        cfg = self.config
        ref_total = cfg.arrivals.mean / len(cfg.routes)
        share_flow = cfg.incidence.T @ np.full(len(cfg.routes), ref_total)
        base = np.zeros(len(cfg.segments))
        for i, seg in enumerate(cfg.segments):
            if seg.kind == "safe":
                base[i] = seg.latency
            else:
                def steady_cost(xbar: float, i=i) -> float:
                    a_eff = cfg.expected_alpha(xbar)
                    return steady_latency(a_eff, float(share_flow[i]))
                base[i] = cfg.prior.expect(steady_cost) + float(
                    cfg.variance.value(share_flow[i])
                )
        route_base = cfg.incidence @ base
        gram = cfg.incidence @ cfg.incidence.T
        flows = _equilibrium_support_solve(
            route_base, gram, cfg.arrivals.mean, slope=1.0
        )
        self._shares = flows / flows.sum()

    def route_flows(self, state: HybridState, rng) -> np.ndarray:
        return self._shares * float(state.arrivals)


@dataclass
class HybridSocialPolicy:
    """Carryover-priced marginal-cost routing.

    Flow pushed through a stochastic segment echoes into future latencies at
    rate alpha per slot; with discounting, one unit of flow today costs about
    1/(1 - rho*alpha) units of tomorrow's latency. The planner therefore
    splits flow so per-route marginal costs (with each segment's congestion
    slope scaled by that factor) equalize, and keeps a trickle of users on
    every non-explosive route so reports keep arriving and the unexplored
    variance cap never binds."""

    config: HybridConfig
    trickle: float = 3.0
    lambda_cap: float = 25.0
    risk_horizon: int = 3
    name: str = "social"

    def __post_init__(self) -> None:
        cfg = self.config
        self._A = cfg.incidence
        self._mask = cfg.stoch_mask
        self._qhh = np.array(
            [
                s.transition.q_hh if s.transition is not None else 1.0
                for s in cfg.segments
            ]
        )
        self._qlh = np.array(
            [
                s.transition.q_lh if s.transition is not None else 0.0
                for s in cfg.segments
            ]
        )
        # a route is a dead end (no exploration trickle) when some segment's
        # long-run hazard rate makes its discounted carryover diverge
        doomed = []
        for route in cfg.routes:
            flag = False
            for s in route:
                seg = cfg.segments[s]
                if seg.kind != "stochastic":
                    continue
                steady = (
                    seg.transition.steady_state
                    if seg.transition is not None
                    else seg.belief
                )
                if cfg.rho * cfg.expected_alpha(steady) >= 1.0:
                    flag = True
            doomed.append(flag)
        self._doomed_route = np.array(doomed)

    def _lambdas(self, beliefs: np.ndarray) -> np.ndarray:
        """Discounted carryover weight per segment, priced at beliefs drifted
        a few slots through each chain so quiet spells still carry their
        long-run hazard risk."""
        cfg = self.config
        bel = np.asarray(beliefs, dtype=float)
        for _ in range(self.risk_horizon):
            bel = bel * self._qhh + (1.0 - bel) * self._qlh
        alpha = cfg.alpha_low + (cfg.alpha_high - cfg.alpha_low) * bel
        discounted = cfg.rho * alpha
        lam = np.where(
            discounted < 1.0,
            np.minimum(discounted / np.maximum(1.0 - discounted, 1e-12), self.lambda_cap),
            self.lambda_cap,
        )
        return np.where(self._mask, lam, 0.0)

    def _base(self, state: HybridState) -> np.ndarray:
        lat = np.asarray(state.latencies, dtype=float)
        vterm = np.where(
            self._mask, self.config.variance.value(np.asarray(state.prev_flows)), 0.0
        )
        return self._A @ (lat + vterm)

    def augmented_cost(self, state: HybridState, flows: np.ndarray) -> float:
        """Immediate social cost plus the carryover-priced congestion echo;
        the scalar objective whose marginal the split equalizes."""
        lam = self._lambdas(np.asarray(state.beliefs))
        segf = self._A.T @ np.asarray(flows, dtype=float)
        base = self._base(state)
        return float(flows @ base + np.sum((1.0 + lam / 2.0) * segf * segf))

    def route_flows(self, state: HybridState, rng) -> np.ndarray:
        total = float(state.arrivals)
        if total == 0:
            return np.zeros(len(self.config.routes))
        lam = self._lambdas(np.asarray(state.beliefs))
        gram = self._A @ np.diag(2.0 + lam) @ self._A.T
        solver = SupportSolver(gram, slope=1.0)
        flows = solver.solve(self._base(state), total)
        tr = min(self.trickle, total / (2 * len(flows)))
        for r in range(len(flows)):
            if flows[r] < tr and not self._doomed_route[r]:
                k = int(np.argmax(flows))
                give = min(tr - flows[r], flows[k] - tr)
                if give > 0:
                    flows = flows.copy()
                    flows[r] += give
                    flows[k] -= give
        return flows

@dataclass
class HybridCharPolicy:
    """Mechanism play on routes: hiding shares for one group, randomized
    route suggestions for the other, hiding-group size chosen against the
    planner's carryover-priced objective. A route counts as hazardous when
    its worst stochastic segment belief crosses the threshold."""

    config: HybridConfig
    params: CharParams
    planner: HybridSocialPolicy | None = None
    name: str = "char"

    def __post_init__(self) -> None:
        if self.planner is None:
            self.planner = HybridSocialPolicy(self.config, name="char-planner")
        self._hiding = HybridHidingPolicy(self.config, name="char-hiding")

    def _route_scores(self, state: HybridState) -> np.ndarray:
        scores = []
        for route in self.config.routes:
            beliefs = [
                state.beliefs[s]
                for s in route
                if self.config.segments[s].kind == "stochastic"
            ]
            scores.append(max(beliefs) if beliefs else 0.0)
        return np.array(scores)

    def _rec_probs(self, state: HybridState) -> np.ndarray:
        scores = self._route_scores(state)
        p = np.where(scores < self.params.x_th, self.params.p_low, self.params.p_high)
        total = p.sum()
        if total > 1.0 + 1e-9:
            p = p / total
        return p

    def route_flows(self, state: HybridState, rng) -> np.ndarray:
        N = state.arrivals
        shares = self._hiding._shares
        probs = self._rec_probs(state)
        # with no dedicated safe route, leftover suggestion mass goes to the
        # route that currently looks least hazardous
        residual = max(0.0, 1.0 - probs.sum())
        probs_full = probs.copy()
        probs_full[int(np.argmin(self._route_scores(state)))] += residual
        if probs_full.sum() <= 0:
            probs_full = shares.copy()
        probs_full = probs_full / probs_full.sum()
        best_n, best_q = 0, math.inf
        for n_hide in sorted({int(round(f * N)) for f in np.linspace(0.0, 1.0, 17)}):
            flows = n_hide * shares + (N - n_hide) * probs_full
            scale = flows.sum()
            if scale <= 0:
                continue
            flows = flows * (N / scale)
            q = self.planner.augmented_cost(state, flows)
            if q < best_q - 1e-12:
                best_n, best_q = n_hide, q
        n_rec = N - best_n
        flows = best_n * shares
        if n_rec > 0:
            draw_p = probs_full / probs_full.sum()
            draws = rng.choice(len(draw_p), size=n_rec, p=draw_p)
            flows = flows + np.bincount(draws, minlength=len(draw_p)).astype(float)
        return flows * (N / flows.sum())



# ---------------------------------------------------------------------------
# bundled hybrid network description


_HYBRID_TOP_KEYS = {
    "arrivals", "alpha_high", "alpha_low", "observation", "variance",
    "prior", "rho", "latency_cap", "segments", "routes", "char",
}
_SEGMENT_KEYS = {"name", "kind", "latency", "belief", "xbar", "prev_flow", "transition", "cap"}


def parse_hybrid_config(data: dict) -> HybridConfig:
    """Build a validated HybridConfig from a parsed network description."""
    from .model import _check_keys, parse_config

    _check_keys(data, _HYBRID_TOP_KEYS, "hybrid config")
    carrier = parse_config(
        {
            "arrivals": data["arrivals"],
            "hazard": {
                "alpha_high": data["alpha_high"],
                "alpha_low": data["alpha_low"],
                "xbar_true": 0.5,
                "prior": data["prior"],
            },
            "observation": data["observation"],
            "variance": data["variance"],
            "paths": [
                {"kind": "safe", "latency": 1.0},
                {"kind": "stochastic", "latency": 1.0, "belief": 0.5},
            ],
            "rho": data["rho"],
        }
    )
    segments = []
    for i, seg in enumerate(data["segments"]):
        _check_keys(seg, _SEGMENT_KEYS, f"segments[{i}]")
        tm = None
        if "transition" in seg:
            tm = TransitionMatrix(seg["transition"]["q_hh"], seg["transition"]["q_lh"])
        segments.append(
            SegmentSpec(
                name=seg["name"],
                kind=seg["kind"],
                latency=seg["latency"],
                belief=seg.get("belief", 0.0),
                prev_flow=seg.get("prev_flow", 0.0),
                xbar=seg.get("xbar", 0.0),
                transition=tm,
                cap=seg.get("cap"),
            )
        )
    char = None
    if "char" in data:
        mass = carrier.hazard.xbar_prior.cdf(data["char"]["x_th"])
        char = CharParams(
            x_th=data["char"]["x_th"],
            p_low=data["char"]["p_low"],
            p_high=data["char"]["p_high"],
            prior_mass_below=mass,
        )
    return HybridConfig(
        segments=tuple(segments),
        routes=tuple(tuple(r) for r in data["routes"]),
        arrivals=carrier.arrivals,
        alpha_high=data["alpha_high"],
        alpha_low=data["alpha_low"],
        observation=carrier.observation,
        variance=carrier.variance,
        prior=carrier.hazard.xbar_prior,
        rho=data["rho"],
        latency_cap=data.get("latency_cap", math.inf),
        char=char,
    )


def load_hybrid_config(path) -> HybridConfig:
    import json
    from pathlib import Path

    with open(Path(path)) as fh:
        return parse_hybrid_config(json.load(fh))


def beijing_hybrid_config() -> HybridConfig:
    from .experiments import hybrid_beijing_raw

    return parse_hybrid_config(hybrid_beijing_raw())


def build_hybrid_scenario(kind: str, **overrides):
    """fig7: policy cost comparison at fixed rho; fig8: inefficiency ratios
    across a discount sweep. Both run on the bundled nine-segment network."""
    from .analysis import ScenarioSpec

    cfg = beijing_hybrid_config()
    if overrides.get("rho") is not None:
        cfg = replace(cfg, rho=float(overrides["rho"]))
    defaults = {"runs": 50, "horizon": 30, "rho": cfg.rho}
    if kind == "fig8":
        defaults["rho_sweep"] = (0.0, 0.2, 0.4, 0.6, 0.8, 0.999)
    return ScenarioSpec(
        kind=kind,
        config=cfg,
        defaults=defaults,
        description="nine-segment hybrid road network reproduction",
    )


def hybrid_policy_set(cfg: HybridConfig) -> dict:
    """The four competing policies wired for one hybrid configuration."""
    social = HybridSocialPolicy(cfg)
    char_params = cfg.char
    if char_params is None:
        char_params = CharParams(0.5, 0.35, 0.02, cfg.prior.cdf(0.5))
    return {
        "myopic": HybridMyopicPolicy(cfg),
        "hiding": HybridHidingPolicy(cfg),
        "social": social,
        "char": HybridCharPolicy(cfg, char_params, planner=HybridSocialPolicy(cfg, name="char-planner")),
    }
