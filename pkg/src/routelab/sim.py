"""Ground-truth world simulation and discounted-cost accounting.

Policies see only the platform state; the hidden hazard states live in
WorldTruth and drive the sampled crowd reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import Observation, belief_transition, latency_update, posterior_update
from .model import (
    Allocation,
    NetworkConfig,
    NetworkState,
    PathBeliefState,
    immediate_costs,
)
from .policies import Policy


class EpisodeAborted(RuntimeError):
    """A policy produced an allocation the state rejects."""


@dataclass(frozen=True)
class WorldPath:
    """Pre-drawn world randomness for one episode: hazard flags per slot and
    path, report-noise uniforms, and arrival counts. Drawing the world ahead
    of time decouples it from any randomness a policy consumes, so competing
    policies face the same conditions under the same seed."""

    alpha_high_flags: np.ndarray  # (T, M) bool
    obs_uniform: np.ndarray  # (T, M)
    arrivals: np.ndarray  # (T + 1,) int; entry 0 is the initial slot's count

    @classmethod
    def draw(
        cls, config: NetworkConfig, horizon: int, seed: int
    ) -> "WorldPath":
        rng = np.random.default_rng(seed)
        M = config.num_stochastic
        tm = config.hazard.transition
        xbar = config.hazard.xbar_true
        flags = np.empty((horizon, M), dtype=bool)
        state = rng.random(M) < xbar
        for t in range(horizon):
            flags[t] = state
            if tm is None:
                state = rng.random(M) < xbar
            else:
                p = np.where(state, tm.q_hh, tm.q_lh)
                state = rng.random(M) < p
        obs_u = rng.random((horizon, M))
        arrivals = np.array(
            [config.arrivals.sample(rng) for _ in range(horizon + 1)]
        )
        return cls(flags, obs_u, arrivals)


@dataclass(frozen=True)
class WorldTruth:
    """Hidden per-path hazard flags (True = high state) and the true long-run
    hazard probability."""

    alpha_high_flags: tuple[bool, ...]
    xbar_true: float

    @classmethod
    def sample_initial(
        cls, config: NetworkConfig, rng: np.random.Generator
    ) -> "WorldTruth":
        xbar = config.hazard.xbar_true
        flags = tuple(rng.random() < xbar for _ in range(config.num_stochastic))
        return cls(flags, xbar)

    def advance(self, config: NetworkConfig, rng: np.random.Generator) -> "WorldTruth":
        tm = config.hazard.transition
        if tm is None:
            # memoryless: redraw each slot at the hidden long-run rate
            flags = tuple(
                rng.random() < self.xbar_true for _ in self.alpha_high_flags
            )
        else:
            flags = tuple(
                rng.random() < (tm.q_hh if was_high else tm.q_lh)
                for was_high in self.alpha_high_flags
            )
        return WorldTruth(flags, self.xbar_true)


@dataclass(frozen=True)
class StepRecord:
    time: int
    arrivals: int
    allocation: Allocation
    observations: tuple[Observation, ...]
    per_path_cost: tuple[float, ...]
    social_cost: float
    beliefs_after: tuple[float, ...]
    latencies_after: tuple[float, ...]


@dataclass
class EpisodeLedger:
    records: list[StepRecord]
    discounted_cost: float
    rho: float
    seed: int

    def recompute_discounted(self) -> float:
        return float(
            sum(self.rho**t * r.social_cost for t, r in enumerate(self.records))
        )

    def truncation_bound(self) -> float:
        """Analytic bound on the discounted tail dropped by the finite run."""
        if not self.records or self.rho == 0.0:
            return 0.0
        c_max = max(r.social_cost for r in self.records)
        return self.rho ** len(self.records) * c_max / (1.0 - self.rho)


@dataclass
class MonteCarloSummary:
    runs: int
    mean_discounted_cost: float
    std: float
    mean_belief_trace: np.ndarray  # (horizon, M)
    policy_name: str
    discounted_costs: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


def apply_step(
    state: NetworkState,
    alloc: Allocation,
    config: NetworkConfig,
    alpha_high_flags: np.ndarray,
    obs_uniform: np.ndarray,
    next_arrivals: int,
) -> tuple[NetworkState, StepRecord]:
    """Deterministic slot transition given the world's pre-drawn randomness:
    reports fire where the rounded flow is at least one traveler, beliefs and
    latencies advance, costs are recorded."""
    alloc.validate_for(state)
    per_path_cost, social = immediate_costs(state, alloc, config.variance)
    rounded = alloc.rounded()

    observations: list[Observation] = []
    new_paths: list[PathBeliefState] = []
    for i, path in enumerate(state.paths):
        n = float(alloc.counts[i + 1])
        n_obs = rounded[i + 1]
        if n_obs < 1:
            y = Observation.NONE
            x_post = path.belief
        else:
            q = (
                config.observation.q_high(n_obs)
                if alpha_high_flags[i]
                else config.observation.q_low(n_obs)
            )
            y = Observation.from_flag(int(obs_uniform[i] < float(q)))
            x_post = posterior_update(path.belief, n_obs, y, config.observation)
        ell_next = latency_update(
            path.expected_latency, n, x_post, config.hazard, config.correlation
        )
        x_next = x_post
        if config.hazard.transition is not None and n_obs >= 1:
            x_next = belief_transition(x_post, config.hazard.transition)
        observations.append(y)
        new_paths.append(PathBeliefState(ell_next, x_next, last_count=n))

    record = StepRecord(
        time=0,  # filled by the episode loop
        arrivals=state.arrivals,
        allocation=alloc,
        observations=tuple(observations),
        per_path_cost=tuple(per_path_cost),
        social_cost=social,
        beliefs_after=tuple(p.belief for p in new_paths),
        latencies_after=tuple(p.expected_latency for p in new_paths),
    )
    next_state = NetworkState(tuple(new_paths), state.safe_latency, next_arrivals)
    return next_state, record


def step(
    state: NetworkState,
    truth: WorldTruth,
    alloc: Allocation,
    config: NetworkConfig,
    rng: np.random.Generator,
) -> tuple[NetworkState, WorldTruth, StepRecord, int]:
    """Advance one slot, drawing the world's randomness from rng: sample
    reports where the rounded flow is at least one traveler, update beliefs
    and latencies, resample the hidden hazards, and record the slot's costs."""
    flags = np.array(truth.alpha_high_flags)
    obs_u = rng.random(len(state.paths))
    next_truth = truth.advance(config, rng)
    next_arrivals = config.arrivals.sample(rng)
    next_state, record = apply_step(
        state, alloc, config, flags, obs_u, next_arrivals
    )
    return next_state, next_truth, record, next_arrivals


def run_episode(
    policy: Policy,
    config: NetworkConfig,
    horizon: int,
    rho: float,
    seed: int,
    initial_state: NetworkState | None = None,
) -> EpisodeLedger:
    """Run one seeded episode; the policy is consulted each slot with the
    platform-visible state only. The world's randomness comes from a path
    drawn up front, so policies that consume randomness differently still
    face identical conditions under the same seed."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    world = WorldPath.draw(config, horizon, seed)
    policy_rng = np.random.default_rng([seed, 0x9E3779B9])
    state = initial_state if initial_state is not None else config.initial_state()
    records: list[StepRecord] = []
    discounted = 0.0
    for t in range(horizon):
        alloc = policy.allocate(state, policy_rng)
        try:
            alloc.validate_for(state)
        except Exception as exc:
            raise EpisodeAborted(
                f"policy {policy.name!r} returned an invalid allocation at t={t}: {exc}"
            ) from exc
        state, record = apply_step(
            state,
            alloc,
            config,
            world.alpha_high_flags[t],
            world.obs_uniform[t],
            int(world.arrivals[t + 1]),
        )
        record = StepRecord(
            time=t,
            arrivals=record.arrivals,
            allocation=record.allocation,
            observations=record.observations,
            per_path_cost=record.per_path_cost,
            social_cost=record.social_cost,
            beliefs_after=record.beliefs_after,
            latencies_after=record.latencies_after,
        )
        records.append(record)
        discounted += rho**t * record.social_cost
    return EpisodeLedger(records, discounted, rho, seed)


def episode_seeds(base_seed: int, runs: int) -> list[int]:
    """Independent per-episode seeds split from one root; order-independent."""
    seq = np.random.SeedSequence(base_seed)
    return [int(child.generate_state(1)[0]) for child in seq.spawn(runs)]


def monte_carlo(
    policy: Policy,
    config: NetworkConfig,
    runs: int,
    horizon: int,
    rho: float,
    base_seed: int,
    initial_state: NetworkState | None = None,
) -> MonteCarloSummary:
    """Mean/std of discounted episode costs plus per-slot mean belief traces."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    costs = np.empty(runs)
    traces = np.empty((runs, horizon, config.num_stochastic))
    for r, seed in enumerate(episode_seeds(base_seed, runs)):
        ledger = run_episode(policy, config, horizon, rho, seed, initial_state)
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
# CSV emission


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def episode_csv_rows(ledger: EpisodeLedger) -> list[list[str]]:
    """Fixed column order: t, N, n_0..n_M, y_1..y_M, x_1..x_M, ell_1..ell_M,
    social_cost, discounted_cumsum."""
    M = len(ledger.records[0].observations)
    header = (
        ["t", "N"]
        + [f"n_{j}" for j in range(M + 1)]
        + [f"y_{i}" for i in range(1, M + 1)]
        + [f"x_{i}" for i in range(1, M + 1)]
        + [f"ell_{i}" for i in range(1, M + 1)]
        + ["social_cost", "discounted_cumsum"]
    )
    rows = [header]
    cumsum = 0.0
    for rec in ledger.records:
        cumsum += ledger.rho**rec.time * rec.social_cost
        rows.append(
            [str(rec.time), str(rec.arrivals)]
            + [_fmt(c) for c in rec.allocation.counts]
            + [
                "" if y is Observation.NONE else str(y.value)
                for y in rec.observations
            ]
            + [_fmt(x) for x in rec.beliefs_after]
            + [_fmt(l) for l in rec.latencies_after]
            + [_fmt(rec.social_cost), _fmt(cumsum)]
        )
    return rows


def write_episode_csv(ledger: EpisodeLedger, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(episode_csv_rows(ledger))


def write_summary_csv(
    summaries: Sequence[MonteCarloSummary], path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "runs", "mean_discounted_cost", "std"])
        for s in summaries:
            writer.writerow([s.policy_name, str(s.runs), _fmt(s.mean_discounted_cost), _fmt(s.std)])


def write_belief_trace_csv(
    summaries: Sequence[MonteCarloSummary], path: str | Path, xbar: float | None = None
) -> None:
    """Per-slot mean beliefs, one column block per policy (fig5-style)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"]
        for s in summaries:
            M = s.mean_belief_trace.shape[1]
            header += [
                f"{s.policy_name}_x_{i}" for i in range(1, M + 1)
            ]
        if xbar is not None:
            header.append("xbar")
        writer.writerow(header)
        horizon = summaries[0].mean_belief_trace.shape[0]
        for t in range(horizon):
            row = [str(t)]
            for s in summaries:
                row += [_fmt(v) for v in s.mean_belief_trace[t]]
            if xbar is not None:
                row.append(_fmt(xbar))
            writer.writerow(row)
