"""Routing policies: myopic equilibrium, socially optimal MDP, information
hiding, deterministic recommendation, and the CHAR mechanism.

All allocation functions see only the platform-visible NetworkState; none can
touch ground truth.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .belief import (
    Observation,
    TransitionMatrix,
    belief_transition,
    expected_alpha,
    hazard_prob,
    latency_update,
    posterior_update,
)
from .model import (
    Allocation,
    InvalidInputError,
    NetworkConfig,
    NetworkState,
    PathBeliefState,
    PriorDistribution,
    VarianceCostModel,
    immediate_costs,
    largest_remainder_round,
)

log = logging.getLogger(__name__)

# Steady-latency estimates blow up when the expected carryover coefficient
# reaches 1; cap them so prior expectations stay finite.
_STEADY_LATENCY_CAP = 1e6


class InfeasibleParamsError(ValueError):
    """Mechanism parameters violate a feasibility constraint."""


class UndefinedPosteriorError(ValueError):
    """Posterior is 0/0: no recommendation mass on either branch."""


# ---------------------------------------------------------------------------
# myopic equilibrium


def _waterfill(base: Sequence[float], total: float, slope: float) -> list[float]:
    """Fill flow onto the cheapest paths until per-user (slope=1) or marginal
    (slope=2) costs equalize; returns fractional counts per path."""
    order = sorted(range(len(base)), key=lambda j: base[j])
    level = base[order[0]] + slope * total
    active = 0
    for k in range(1, len(order) + 1):
        idx = order[:k]
        lam = (slope * total + sum(base[j] for j in idx)) / k
        nxt = base[order[k]] if k < len(order) else math.inf
        active, level = k, lam
        if lam <= nxt + 1e-12:
            break
    counts = [0.0] * len(base)
    for j in order[:active]:
        counts[j] = max(0.0, (level - base[j]) / slope)
    return counts


def myopic_allocation(
    state: NetworkState, v: VarianceCostModel, mode: str = "fractional"
) -> Allocation:
    """Selfish equilibrium split of this slot's arrivals.

    Paths carrying flow share one per-user cost; priced-out paths would cost
    at least that much at zero flow. With one stochastic path this reduces to
    the three-case threshold rule (all-safe, all-stochastic, or the midpoint
    split)."""
    base = [state.safe_latency] + [
        p.expected_latency + float(v.value(p.last_count)) for p in state.paths
    ]
    counts = _waterfill(base, float(state.arrivals), slope=1.0)
    if mode == "integer":
        return Allocation(largest_remainder_round(counts), mode="integer")
    return Allocation(tuple(counts), mode="fractional")


def one_shot_social_allocation(
    state: NetworkState, v: VarianceCostModel
) -> Allocation:
    """Fractional minimizer of this slot's social cost (marginal-cost fill)."""
    base = [state.safe_latency] + [
        p.expected_latency + float(v.value(p.last_count)) for p in state.paths
    ]
    counts = _waterfill(base, float(state.arrivals), slope=2.0)
    return Allocation(tuple(counts), mode="fractional")


# ---------------------------------------------------------------------------
# transition branches shared by the solver, lookahead policies, and tests


def next_path_state(
    path: PathBeliefState,
    n: float,
    n_obs: int,
    y: Observation,
    config: NetworkConfig,
) -> PathBeliefState:
    """One path's next platform state after flow n and fused report y."""
    x_post = posterior_update(path.belief, max(n_obs, 1), y, config.observation)
    ell_next = latency_update(
        path.expected_latency, n, x_post, config.hazard, config.correlation
    )
    x_next = x_post
    tm = config.hazard.transition
    if tm is not None and n_obs >= 1:
        # chain propagation rides on travelers' reports; an untraveled path's
        # belief stays frozen
        x_next = belief_transition(x_post, tm)
    return PathBeliefState(ell_next, x_next, last_count=n)


def branch_outcomes(
    state: NetworkState, counts: Sequence[float], config: NetworkConfig
) -> list[tuple[float, tuple[PathBeliefState, ...]]]:
    """All joint report outcomes for an allocation, with probabilities under
    the platform's beliefs. Reports only occur on paths whose rounded count
    is at least one traveler."""
    rounded = largest_remainder_round(counts)
    per_path: list[list[tuple[float, PathBeliefState]]] = []
    for i, path in enumerate(state.paths):
        n = float(counts[i + 1])
        n_obs = rounded[i + 1]
        if n_obs < 1:
            per_path.append(
                [(1.0, next_path_state(path, n, 0, Observation.NONE, config))]
            )
            continue
        p1 = hazard_prob(path.belief, n_obs, config.observation)
        per_path.append(
            [
                (p1, next_path_state(path, n, n_obs, Observation.HAZARD, config)),
                (1.0 - p1, next_path_state(path, n, n_obs, Observation.CLEAR, config)),
            ]
        )
    out = []
    for combo in itertools.product(*per_path):
        prob = math.prod(p for p, _ in combo)
        if prob <= 0.0:
            continue
        out.append((prob, tuple(s for _, s in combo)))
    return out


class ContinuationValue(Protocol):
    """Expected discounted cost-to-go from a post-transition path state,
    marginalized over the next arrival count."""

    def expected_value(self, paths: tuple[PathBeliefState, ...]) -> float: ...


def step_q_value(
    state: NetworkState,
    counts: Sequence[float],
    config: NetworkConfig,
    continuation: ContinuationValue | None,
) -> float:
    """Immediate social cost plus the discounted expected continuation."""
    alloc = Allocation(tuple(float(c) for c in counts))
    _, social = immediate_costs(state, alloc, config.variance)
    if continuation is None or config.rho == 0.0:
        return social
    cont = sum(
        prob * continuation.expected_value(paths)
        for prob, paths in branch_outcomes(state, counts, config)
    )
    return social + config.rho * cont


def compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    """All nonnegative integer tuples of length `parts` summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in compositions(total - head, parts - 1):
            yield (head,) + rest


# ---------------------------------------------------------------------------
# value function over discretized states


@dataclass(frozen=True)
class MdpConfig:
    """Discretization and stopping controls for the social planner's solver."""

    rho: float
    belief_points: int = 51
    latency_max: float | None = None  # default 4 * safe latency
    latency_step: float | None = None  # default safe latency / 50
    max_iterations: int = 500
    tolerance: float = 1e-4

    def __post_init__(self) -> None:
        if not (0.0 <= self.rho < 1.0):
            raise InvalidInputError("rho must lie in [0, 1)")
        if self.belief_points < 2:
            raise InvalidInputError("belief grid needs at least 2 points")
        if self.tolerance <= 0:
            raise InvalidInputError("tolerance must be > 0")


@dataclass
class ValueFunction:
    """Long-run discounted social cost on a product grid of per-path latency,
    per-path belief, per-path previous count, and the arrival support.

    Lookups interpolate multilinearly along latency/belief/previous-count
    axes; out-of-grid coordinates clamp to the boundary and are counted."""

    ell_grid: np.ndarray
    x_grid: np.ndarray
    prev_grid: np.ndarray
    n_support: np.ndarray
    n_probs: np.ndarray
    values: np.ndarray  # shape (L,)*M + (X,)*M + (P,)*M + (K,)
    num_paths: int
    config: MdpConfig
    fingerprint: str = ""
    gap_history: list[float] = field(default_factory=list)
    iterations: int = 0
    clamp_events: int = 0

    def _axis_interp(self, grid: np.ndarray, t: float) -> tuple[int, float]:
        if t <= grid[0]:
            if t < grid[0] - 1e-12:
                self.clamp_events += 1
            return 0, 0.0
        if t >= grid[-1]:
            if t > grid[-1] + 1e-12:
                self.clamp_events += 1
            return len(grid) - 2, 1.0
        i = int(np.searchsorted(grid, t, side="right")) - 1
        i = min(i, len(grid) - 2)
        return i, float((t - grid[i]) / (grid[i + 1] - grid[i]))

    def value(
        self,
        latencies: Sequence[float],
        beliefs: Sequence[float],
        prevs: Sequence[float],
        arrivals: int,
    ) -> float:
        """Interpolated cost-to-go at one state."""
        M = self.num_paths
        axes = []
        for ell in latencies:
            axes.append(self._axis_interp(self.ell_grid, float(ell)))
        for x in beliefs:
            axes.append(self._axis_interp(self.x_grid, float(x)))
        for p in prevs:
            axes.append(self._axis_interp(self.prev_grid, float(p)))
        k = int(np.searchsorted(self.n_support, arrivals))
        if k >= len(self.n_support) or self.n_support[k] != arrivals:
            self.clamp_events += 1
            k = int(np.argmin(np.abs(self.n_support - arrivals)))
        total = 0.0
        for corners in itertools.product((0, 1), repeat=3 * M):
            w = 1.0
            idx = []
            for (i, frac), c in zip(axes, corners):
                w *= frac if c else (1.0 - frac)
                idx.append(i + c)
            if w == 0.0:
                continue
            total += w * float(self.values[tuple(idx) + (k,)])
        return total

    def expected_value(self, paths: tuple[PathBeliefState, ...]) -> float:
        lat = [p.expected_latency for p in paths]
        bel = [p.belief for p in paths]
        prev = [p.last_count for p in paths]
        return float(
            sum(
                pk * self.value(lat, bel, prev, int(nk))
                for nk, pk in zip(self.n_support, self.n_probs)
            )
        )

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            ell_grid=self.ell_grid,
            x_grid=self.x_grid,
            prev_grid=self.prev_grid,
            n_support=self.n_support,
            n_probs=self.n_probs,
            values=self.values,
            num_paths=np.array([self.num_paths]),
            gap_history=np.array(self.gap_history),
            iterations=np.array([self.iterations]),
            meta=np.frombuffer(
                json.dumps(
                    {
                        "fingerprint": self.fingerprint,
                        "rho": self.config.rho,
                        "belief_points": self.config.belief_points,
                        "max_iterations": self.config.max_iterations,
                        "tolerance": self.config.tolerance,
                    }
                ).encode(),
                dtype=np.uint8,
            ),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ValueFunction":
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
        cfg = MdpConfig(
            rho=meta["rho"],
            belief_points=meta["belief_points"],
            max_iterations=meta["max_iterations"],
            tolerance=meta["tolerance"],
        )
        return cls(
            ell_grid=data["ell_grid"],
            x_grid=data["x_grid"],
            prev_grid=data["prev_grid"],
            n_support=data["n_support"],
            n_probs=data["n_probs"],
            values=data["values"],
            num_paths=int(data["num_paths"][0]),
            config=cfg,
            fingerprint=meta["fingerprint"],
            gap_history=list(data["gap_history"]),
            iterations=int(data["iterations"][0]),
        )


def config_fingerprint(config: NetworkConfig, mdp: MdpConfig) -> str:
    """Stable hash of everything that shapes a solved value function."""
    doc = {
        "arrivals": [config.arrivals.n_min, config.arrivals.n_max, config.arrivals.mean, config.arrivals.dist, config.arrivals.std],
        "hazard": [config.hazard.alpha_high, config.hazard.alpha_low],
        "prior": [config.hazard.xbar_prior.family, list(config.hazard.xbar_prior.params), list(config.hazard.xbar_prior.points), list(config.hazard.xbar_prior.weights)],
        "observation": [config.observation.family, config.observation.mean, config.observation.variance, config.observation.q_high_const, config.observation.q_low_const, list(config.observation.table_n), list(config.observation.table_qh), list(config.observation.table_ql)],
        "variance": [config.variance.family, config.variance.a, config.variance.b, list(config.variance.table_n), list(config.variance.table_v)],
        "paths": [[p.kind, p.latency, p.belief, p.prev_count] for p in config.paths],
        "transition": None if config.hazard.transition is None else [config.hazard.transition.q_hh, config.hazard.transition.q_lh],
        "mdp": [mdp.rho, mdp.belief_points, mdp.latency_max, mdp.latency_step, mdp.max_iterations, mdp.tolerance],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# value iteration


def _bilinear_take(
    values: np.ndarray,
    il: np.ndarray,
    wl: np.ndarray,
    ix: np.ndarray,
    wx: np.ndarray,
) -> np.ndarray:
    """values is (L, X [, ...]); il/wl index targets per (l, x) cell, ix/wx
    per x column. Returns the interpolated (L, X [, ...]) array."""
    ix_b = np.broadcast_to(ix, il.shape)
    wx_b = np.broadcast_to(wx, wl.shape)
    v00 = values[il, ix_b]
    v01 = values[il, ix_b + 1]
    v10 = values[il + 1, ix_b]
    v11 = values[il + 1, ix_b + 1]
    extra = (np.s_[...],) if values.ndim > 2 else ()
    wl_e = wl[(..., *([None] * (values.ndim - 2)))] if values.ndim > 2 else wl
    wx_e = wx_b[(..., *([None] * (values.ndim - 2)))] if values.ndim > 2 else wx_b
    del extra
    return (
        (1 - wl_e) * ((1 - wx_e) * v00 + wx_e * v01)
        + wl_e * ((1 - wx_e) * v10 + wx_e * v11)
    )


def _grid_locate(grid: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Clamped interpolation indices/weights of targets on an ascending grid;
    also returns how many targets fell outside the grid."""
    clamped = np.clip(targets, grid[0], grid[-1])
    out_of_range = int(np.sum((targets < grid[0] - 1e-12) | (targets > grid[-1] + 1e-12)))
    idx = np.searchsorted(grid, clamped, side="right") - 1
    idx = np.clip(idx, 0, len(grid) - 2)
    span = grid[idx + 1] - grid[idx]
    w = (clamped - grid[idx]) / span
    return idx.astype(np.int64), w, out_of_range


def default_grids(
    config: NetworkConfig, mdp: MdpConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    l0 = config.safe_latency
    step = mdp.latency_step if mdp.latency_step is not None else l0 / 50.0
    top = mdp.latency_max if mdp.latency_max is not None else 4.0 * l0
    ell_grid = np.arange(0.0, top + step / 2, step)
    x_grid = np.linspace(0.0, 1.0, mdp.belief_points)
    prev_grid = np.arange(0.0, config.arrivals.n_max + 1.0)
    return ell_grid, x_grid, prev_grid


def solve_social_mdp(
    config: NetworkConfig,
    mdp: MdpConfig,
    ell_grid: np.ndarray | None = None,
    x_grid: np.ndarray | None = None,
    prev_grid: np.ndarray | None = None,
) -> ValueFunction:
    """Successive approximation of the planner's discounted cost on a grid.

    Starts from the one-shot optimum and applies the Bellman operator until
    the sup-norm gap drops below tolerance or the iteration budget runs out.
    Expectations run over report outcomes (no-report branch for empty paths)
    and the arrival distribution.
    """
    M = config.num_stochastic
    if ell_grid is None or x_grid is None or prev_grid is None:
        d_ell, d_x, d_prev = default_grids(config, mdp)
        ell_grid = d_ell if ell_grid is None else np.asarray(ell_grid, float)
        x_grid = d_x if x_grid is None else np.asarray(x_grid, float)
        prev_grid = d_prev if prev_grid is None else np.asarray(prev_grid, float)
    else:
        ell_grid = np.asarray(ell_grid, float)
        x_grid = np.asarray(x_grid, float)
        prev_grid = np.asarray(prev_grid, float)

    support = config.arrivals.support()
    probs = config.arrivals.probabilities()
    L, X, P, K = len(ell_grid), len(x_grid), len(prev_grid), len(support)
    hz, obs, var = config.hazard, config.observation, config.variance
    tm = hz.transition
    clamps = 0

    # Per (action count n > 0): report probabilities and both posteriors along
    # the belief grid; per (x, n): next latency over the (ell, x) plane.
    n_values = sorted({int(n) for comp_n in support for n in range(int(comp_n) + 1)})
    trans: dict[tuple[int, int], dict] = {}
    v_prev = var.value(prev_grid)
    alpha_grid = hz.alpha_low + (hz.alpha_high - hz.alpha_low) * x_grid

    def post_next(x_post: np.ndarray, ell_plus_n: np.ndarray, observed: bool = True) -> tuple:
        nonlocal clamps
        x_next = (
            x_post
            if tm is None or not observed
            else x_post * tm.q_hh + (1.0 - x_post) * tm.q_lh
        )
        alpha = hz.alpha_low + (hz.alpha_high - hz.alpha_low) * x_post
        ell_next = alpha[None, :] * ell_plus_n
        il, wl, c1 = _grid_locate(ell_grid, ell_next)
        ix, wx, c2 = _grid_locate(x_grid, x_next)
        clamps += c1 + c2
        return il, wl, ix, wx

    for n in n_values:
        ell_plus = ell_grid[:, None] + float(n)
        if n == 0:
            il, wl, ix, wx = post_next(x_grid.copy(), ell_plus, observed=False)
            trans[(n, -1)] = {"p": np.ones(X), "il": il, "wl": wl, "ix": ix, "wx": wx}
            continue
        qh = float(obs.q_high(n))
        ql = float(obs.q_low(n))
        p1 = x_grid * qh + (1.0 - x_grid) * ql
        with np.errstate(invalid="ignore", divide="ignore"):
            post1 = np.where(p1 > 0, x_grid * qh / np.where(p1 > 0, p1, 1.0), x_grid)
            p0 = 1.0 - p1
            post0 = np.where(
                p0 > 0, x_grid * (1.0 - qh) / np.where(p0 > 0, p0, 1.0), x_grid
            )
        post1 = np.clip(post1, 0.0, 1.0)
        post0 = np.clip(post0, 0.0, 1.0)
        il, wl, ix, wx = post_next(post1, ell_plus)
        trans[(n, 1)] = {"p": p1, "il": il, "wl": wl, "ix": ix, "wx": wx}
        il, wl, ix, wx = post_next(post0, ell_plus)
        trans[(n, 0)] = {"p": 1.0 - p1, "il": il, "wl": wl, "ix": ix, "wx": wx}

    if M != 1:
        return _solve_general(
            config, mdp, ell_grid, x_grid, prev_grid, support, probs, trans, v_prev
        )

    l0 = config.safe_latency
    actions_per_k = {int(Nk): list(range(int(Nk) + 1)) for Nk in support}

    # immediate cost tensors (L, P) per (N, action); belief axis drops out
    imm: dict[tuple[int, int], np.ndarray] = {}
    for Nk in support:
        for n in actions_per_k[int(Nk)]:
            n0 = float(Nk) - n
            cost = n0 * (l0 + n0) + n * (ell_grid[:, None] + n + v_prev[None, :])
            imm[(int(Nk), n)] = cost  # (L, P)

    values = np.empty((L, X, P, K))
    for k, Nk in enumerate(support):
        best = None
        for n in actions_per_k[int(Nk)]:
            c = np.broadcast_to(imm[(int(Nk), n)][:, None, :], (L, X, P))
            best = c.copy() if best is None else np.minimum(best, c)
        values[..., k] = best

    gap_history: list[float] = []
    iterations = 0
    for _ in range(mdp.max_iterations):
        vbar = values @ probs  # (L, X, P) expectation over next arrivals
        new = np.empty_like(values)
        for k, Nk in enumerate(support):
            best = None
            for n in actions_per_k[int(Nk)]:
                cont_slice = vbar[:, :, int(np.searchsorted(prev_grid, n))]
                if n == 0:
                    tr = trans[(0, -1)]
                    cont = _bilinear_take(cont_slice, tr["il"], tr["wl"], tr["ix"], tr["wx"])
                else:
                    t1, t0 = trans[(n, 1)], trans[(n, 0)]
                    cont = t1["p"][None, :] * _bilinear_take(
                        cont_slice, t1["il"], t1["wl"], t1["ix"], t1["wx"]
                    ) + t0["p"][None, :] * _bilinear_take(
                        cont_slice, t0["il"], t0["wl"], t0["ix"], t0["wx"]
                    )
                q = imm[(int(Nk), n)][:, None, :] + mdp.rho * cont[:, :, None]
                best = q if best is None else np.minimum(best, q)
            new[..., k] = best
        gap = float(np.max(np.abs(new - values)))
        gap_history.append(gap)
        values = new
        iterations += 1
        if gap < mdp.tolerance:
            break

    if clamps:
        log.warning("value iteration clamped %d off-grid transitions", clamps)
    return ValueFunction(
        ell_grid=ell_grid,
        x_grid=x_grid,
        prev_grid=prev_grid,
        n_support=support.astype(float),
        n_probs=probs,
        values=values,
        num_paths=1,
        config=mdp,
        fingerprint=config_fingerprint(config, mdp),
        gap_history=gap_history,
        iterations=iterations,
        clamp_events=clamps,
    )


def _solve_general(
    config, mdp, ell_grid, x_grid, prev_grid, support, probs, trans, v_prev
):
    """Value iteration for M >= 2 paths on (small) product grids."""
    M = config.num_stochastic
    L, X, P, K = len(ell_grid), len(x_grid), len(prev_grid), len(support)
    l0 = config.safe_latency
    shape = (L,) * M + (X,) * M + (P,) * M

    def axis_view(arr: np.ndarray, axis: int) -> np.ndarray:
        dims = [1] * len(shape)
        dims[axis] = len(arr)
        return arr.reshape(dims)

    def imm_cost(Nk: int, comp: tuple[int, ...]) -> np.ndarray:
        n0 = float(Nk) - sum(comp)
        cost = np.full(shape, n0 * (l0 + n0))
        for i, n in enumerate(comp):
            if n == 0:
                continue
            cost = cost + n * (axis_view(ell_grid, i) + n)
            cost = cost + n * axis_view(v_prev, 2 * M + i)
        return cost

    comps_per_k = {
        int(Nk): [c for c in compositions(int(Nk), M + 1)] for Nk in support
    }

    values = np.empty(shape + (K,))
    for k, Nk in enumerate(support):
        best = None
        for comp in comps_per_k[int(Nk)]:
            c = imm_cost(int(Nk), comp[1:])
            best = c if best is None else np.minimum(best, c)
        values[..., k] = best

    def continuation(vbar: np.ndarray, comp: tuple[int, ...]) -> np.ndarray:
        # select the next prev-count cell per path, then fold report branches
        sel = vbar
        for i, n in enumerate(comp):
            p_idx = int(np.searchsorted(prev_grid, n))
            sel = np.take(sel, p_idx, axis=2 * M)  # prev axes shift left as taken
        # sel now has axes (ell_1..ell_M, x_1..x_M)
        total = None
        branch_sets = []
        for i, n in enumerate(comp):
            if n == 0:
                branch_sets.append([(0, -1)])
            else:
                branch_sets.append([(n, 1), (n, 0)])
        for combo in itertools.product(*branch_sets):
            arr = sel
            prob = np.ones(())
            for i, key in enumerate(combo):
                tr = trans[key]
                moved = np.moveaxis(arr, (i, M + i), (0, 1))
                interp = _bilinear_take(moved, tr["il"], tr["wl"], tr["ix"], tr["wx"])
                arr = np.moveaxis(interp, (0, 1), (i, M + i))
                p_shape = (1,) * (M + i) + (X,) + (1,) * (M - 1 - i)
                prob = prob * tr["p"].reshape(p_shape)
            term = prob * arr
            total = term if total is None else total + term
        return total

    gap_history: list[float] = []
    iterations = 0
    for _ in range(mdp.max_iterations):
        vbar = values @ probs
        new = np.empty_like(values)
        for k, Nk in enumerate(support):
            best = None
            for comp in comps_per_k[int(Nk)]:
                cont = continuation(vbar, comp[1:])
                cont_full = np.broadcast_to(
                    cont[(...,) + (None,) * M], shape
                )
                q = imm_cost(int(Nk), comp[1:]) + mdp.rho * cont_full
                best = q if best is None else np.minimum(best, q)
            new[..., k] = best
        gap = float(np.max(np.abs(new - values)))
        gap_history.append(gap)
        values = new
        iterations += 1
        if gap < mdp.tolerance:
            break

    return ValueFunction(
        ell_grid=ell_grid,
        x_grid=x_grid,
        prev_grid=prev_grid,
        n_support=support.astype(float),
        n_probs=probs,
        values=values,
        num_paths=M,
        config=mdp,
        fingerprint=config_fingerprint(config, mdp),
        gap_history=gap_history,
        iterations=iterations,
    )


def socially_optimal_allocation(
    state: NetworkState,
    vf: ContinuationValue,
    config: NetworkConfig,
    rho: float | None = None,
) -> Allocation:
    """Argmin of immediate cost plus discounted continuation over the integer
    compositions of this slot's arrivals; ties prefer more exploration of the
    highest-belief path."""
    rho = config.rho if rho is None else rho
    M = state.num_stochastic
    i_star = int(np.argmax([p.belief for p in state.paths]))
    best_q = math.inf
    best_key = None
    best_comp = None
    for comp in compositions(state.arrivals, M + 1):
        q = step_q_value(state, comp, config.with_overrides(rho=rho), vf if rho > 0 else None)
        key = (comp[1 + i_star],) + comp[1:]
        if q < best_q - 1e-9 or (abs(q - best_q) <= 1e-9 and (best_key is None or key > best_key)):
            best_q, best_key, best_comp = q, key, comp
    return Allocation(tuple(float(c) for c in best_comp))


# ---------------------------------------------------------------------------
# information hiding and deterministic recommendation


def steady_latency(alpha_eff: float, flow: float) -> float:
    """Fixed point of the linear carryover at constant flow; capped once the
    coefficient stops the latency from settling."""
    if alpha_eff >= 1.0:
        return _STEADY_LATENCY_CAP
    return min(alpha_eff * flow / (1.0 - alpha_eff), _STEADY_LATENCY_CAP)


def prior_expected_stochastic_cost(
    prior: PriorDistribution,
    config: NetworkConfig,
    steady_flow: float | None = None,
) -> float:
    """Zero-flow stochastic-path cost a user expects knowing only the prior:
    steady latency at the reference flow plus the variance term there."""
    hz, var = config.hazard, config.variance
    n_ref = (
        steady_flow
        if steady_flow is not None
        else config.arrivals.mean / config.num_stochastic
    )

    def cost(xbar: float) -> float:
        a_eff = xbar * hz.alpha_high + (1.0 - xbar) * hz.alpha_low
        return steady_latency(a_eff, n_ref) + float(var.value(n_ref))

    return prior.expect(cost)


def hiding_allocation(
    prior: PriorDistribution,
    n_t: int,
    config: NetworkConfig,
    expected_stochastic_cost: float | None = None,
) -> Allocation:
    """Constant exploration under full information hiding.

    Users see nothing, assume every stochastic path sits at its prior steady
    state, and split so each stochastic path gets
    min(N/M, (Nbar + c0(0) - E[ci(0)]) / (M+1)), never negative."""
    if n_t < 0:
        raise InvalidInputError("n_t must be >= 0")
    M = config.num_stochastic
    c0 = config.safe_latency
    ci = (
        expected_stochastic_cost
        if expected_stochastic_cost is not None
        else prior_expected_stochastic_cost(prior, config)
    )
    per_path = min(n_t / M, (config.arrivals.mean + c0 - ci) / (M + 1))
    per_path = max(0.0, per_path)
    counts = (n_t - M * per_path,) + (per_path,) * M
    return Allocation(counts)


def deterministic_recommendation_allocation(
    prior: PriorDistribution,
    n_t: int,
    config: NetworkConfig,
    expected_stochastic_cost: float | None = None,
) -> Allocation:
    """Private deterministic path suggestions carry no persuasive content when
    many users arrive, so the induced split equals information hiding."""
    if config.arrivals.mean < 50:
        log.warning(
            "deterministic recommendations assume a large mean arrival count; "
            "got %.1f", config.arrivals.mean,
        )
    return hiding_allocation(prior, n_t, config, expected_stochastic_cost)


# ---------------------------------------------------------------------------
# CHAR mechanism


class RecommendationGroup(enum.Enum):
    HIDING = "hiding"
    RECOMMENDED = "recommended"


@dataclass(frozen=True)
class Recommendation:
    path: int
    group: RecommendationGroup


@dataclass(frozen=True)
class CharParams:
    """Knobs of the combined hiding / probabilistic recommendation mechanism.

    `prior_mass_below` is the prior probability that a path's belief falls
    under the threshold; feasibility (p_low * mass >= p_high * (1 - mass))
    is what keeps recommendations credible, checked by char_posterior_check.
    """

    x_th: float
    p_low: float
    p_high: float
    prior_mass_below: float

    def __post_init__(self) -> None:
        for name, p in (
            ("x_th", self.x_th),
            ("p_low", self.p_low),
            ("p_high", self.p_high),
            ("prior_mass_below", self.prior_mass_below),
        ):
            if not (0.0 <= p <= 1.0):
                raise InvalidInputError(f"{name} must be a probability")

    @property
    def is_feasible(self) -> bool:
        return self.p_low * self.prior_mass_below >= self.p_high * (
            1.0 - self.prior_mass_below
        )


def default_char_params(
    config: NetworkConfig,
    x_th: float,
    n_star_bad: float,
    margin: float = 0.05,
) -> CharParams:
    """Pick p_high below the bad-state optimal exploration rate and p_low at
    the credibility boundary plus a margin."""
    mass = config.hazard.xbar_prior.cdf(x_th)
    nbar = config.arrivals.mean
    p_high = max(min(0.9 * n_star_bad / nbar, 1.0 / (config.num_stochastic + 1)), 0.0)
    if mass <= 0.0:
        raise InfeasibleParamsError("prior puts no mass below the threshold")
    p_low = min(1.0, p_high * (1.0 - mass) / mass + margin)
    return CharParams(x_th, p_low, p_high, mass)


def recommendation_probabilities(
    state: NetworkState, params: CharParams
) -> np.ndarray:
    """Per-path recommendation probabilities [P(path 0), P(path 1), ...]."""
    p = [params.p_low if path.belief < params.x_th else params.p_high for path in state.paths]
    residual = 1.0 - sum(p)
    if residual < -1e-12:
        raise InfeasibleParamsError(
            f"path recommendation probabilities sum to {sum(p):.3f} > 1"
        )
    return np.array([max(residual, 0.0)] + p)


def char_recommend(
    state: NetworkState,
    params: CharParams,
    n_users: int,
    rng: np.random.Generator,
) -> list[Recommendation]:
    """Independent randomized path suggestions for the recommendation group."""
    probs = recommendation_probabilities(state, params)
    draws = rng.choice(len(probs), size=n_users, p=probs)
    return [Recommendation(int(d), RecommendationGroup.RECOMMENDED) for d in draws]


def char_expected_allocation(
    state: NetworkState,
    params: CharParams,
    n_hiding: int,
    hiding: Allocation,
) -> Allocation:
    """Expected per-path counts when n_hiding users follow the hiding split
    and the rest follow randomized recommendations."""
    N = state.arrivals
    if N == 0:
        return Allocation((0.0,) * (state.num_stochastic + 1))
    probs = recommendation_probabilities(state, params)
    counts = [
        n_hiding * (hiding.counts[j] / N) + (N - n_hiding) * probs[j]
        for j in range(state.num_stochastic + 1)
    ]
    return Allocation(tuple(counts))


def char_optimize_hiding_count(
    state: NetworkState,
    vf: ContinuationValue | None,
    params: CharParams,
    config: NetworkConfig,
    hiding: Allocation | None = None,
) -> tuple[int, Allocation]:
    """Search the hiding-group size minimizing immediate plus discounted
    continuation cost of the blended expected allocation."""
    if hiding is None:
        hiding = hiding_allocation(config.hazard.xbar_prior, state.arrivals, config)
    best = (math.inf, 0, None)
    for n_hiding in range(state.arrivals + 1):
        alloc = char_expected_allocation(state, params, n_hiding, hiding)
        q = step_q_value(state, alloc.counts, config, vf)
        if q < best[0] - 1e-12:
            best = (q, n_hiding, alloc)
    return best[1], best[2]


def char_posterior_check(params: CharParams) -> tuple[float, float, bool]:
    """Posterior odds a recommended path is in good condition, and whether
    following the recommendation is a best response (good >= bad)."""
    mass = params.prior_mass_below
    num = mass * params.p_low
    den = num + (1.0 - mass) * params.p_high
    if den == 0.0:
        raise UndefinedPosteriorError("no recommendation mass on either branch")
    good = num / den
    return good, 1.0 - good, good >= 1.0 - good


# ---------------------------------------------------------------------------
# policy handles for the simulator


class Policy(Protocol):
    name: str

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation: ...


@dataclass
class MyopicPolicy:
    config: NetworkConfig
    name: str = "myopic"

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation:
        return myopic_allocation(state, self.config.variance)


@dataclass
class SocialValuePolicy:
    """Plays the argmin of the solved value function each slot."""

    config: NetworkConfig
    vf: ValueFunction
    name: str = "social"

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation:
        return socially_optimal_allocation(state, self.vf, self.config)


@dataclass
class HidingPolicy:
    config: NetworkConfig
    name: str = "hiding"

    def __post_init__(self) -> None:
        self._expected_cost = prior_expected_stochastic_cost(
            self.config.hazard.xbar_prior, self.config
        )

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation:
        return hiding_allocation(
            self.config.hazard.xbar_prior,
            state.arrivals,
            self.config,
            expected_stochastic_cost=self._expected_cost,
        )


@dataclass
class DeterministicRecommendationPolicy(HidingPolicy):
    name: str = "deterministic-rec"


class RecedingHorizonEvaluator:
    """Continuation estimate from a short certainty-equivalent rollout:
    allocate one-shot optimally, carry latencies forward with beliefs frozen
    (their expected report update is zero), and close with a frozen-state
    perpetuity."""

    def __init__(self, config: NetworkConfig, horizon: int = 8):
        self.config = config
        self.horizon = horizon

    def expected_value(self, paths: tuple[PathBeliefState, ...]) -> float:
        cfg = self.config
        rho = cfg.rho
        n_mean = int(round(cfg.arrivals.mean))
        total = 0.0
        disc = 1.0
        current = paths
        for _ in range(self.horizon):
            state = NetworkState(current, cfg.safe_latency, n_mean)
            alloc = one_shot_social_allocation(state, cfg.variance)
            _, social = immediate_costs(state, alloc, cfg.variance)
            total += disc * social
            nxt = []
            for path, n in zip(current, alloc.counts[1:]):
                ell = latency_update(
                    path.expected_latency, n, path.belief, cfg.hazard, cfg.correlation
                )
                belief = path.belief
                if cfg.hazard.transition is not None:
                    belief = belief_transition(belief, cfg.hazard.transition)
                nxt.append(PathBeliefState(ell, belief, n))
            current = tuple(nxt)
            disc *= rho
        state = NetworkState(current, cfg.safe_latency, n_mean)
        alloc = one_shot_social_allocation(state, cfg.variance)
        _, social = immediate_costs(state, alloc, cfg.variance)
        total += disc * social / (1.0 - rho)
        return total


@dataclass
class RecedingHorizonPolicy:
    """Depth-limited planner: exact report branching on the first step, then
    the certainty-equivalent rollout continuation. Stands in for the exact
    value function where grids would not be desk-scale."""

    config: NetworkConfig
    depth: int = 3
    name: str = "social-rh"

    def __post_init__(self) -> None:
        self._evaluator = _DepthEvaluator(self.config, self.depth - 1)

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation:
        return socially_optimal_allocation(state, self._evaluator, self.config)


class _DepthEvaluator:
    """Expectimax continuation to a fixed depth with a rollout leaf."""

    def __init__(self, config: NetworkConfig, depth: int, branch_budget: int = 20000):
        self.config = config
        self.depth = depth
        self.leaf = RecedingHorizonEvaluator(config)
        self.branch_budget = branch_budget

    def expected_value(self, paths: tuple[PathBeliefState, ...]) -> float:
        return self._value(paths, self.depth)

    def _value(self, paths: tuple[PathBeliefState, ...], depth: int) -> float:
        cfg = self.config
        if depth <= 0:
            return self.leaf.expected_value(paths)
        n_mean = int(round(cfg.arrivals.mean))
        state = NetworkState(paths, cfg.safe_latency, n_mean)
        M = len(paths)
        n_comps = math.comb(n_mean + M, M)
        if n_comps * (2**M) > self.branch_budget:
            return self.leaf.expected_value(paths)
        best = math.inf
        for comp in compositions(n_mean, M + 1):
            alloc = Allocation(tuple(float(c) for c in comp))
            _, social = immediate_costs(state, alloc, cfg.variance)
            cont = sum(
                prob * self._value(nxt, depth - 1)
                for prob, nxt in branch_outcomes(state, comp, cfg)
            )
            best = min(best, social + cfg.rho * cont)
        return best


@dataclass
class BestConstantPolicy:
    """Optimal constant symmetric split, found by scanning the deterministic
    certainty-equivalent trajectory. A sound planner reference for scenarios
    whose reports carry no information (so beliefs and dynamics are fixed by
    the flow alone)."""

    config: NetworkConfig
    horizon: int = 400
    name: str = "social-const"

    def __post_init__(self) -> None:
        cfg = self.config
        per_path_max = cfg.arrivals.mean / cfg.num_stochastic
        grid = np.linspace(0.0, per_path_max, 241)
        costs = [self._trajectory_cost(n) for n in grid]
        best = int(np.argmin(costs))
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, len(grid) - 1)]
        from scipy.optimize import minimize_scalar

        res = minimize_scalar(
            self._trajectory_cost, bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-9},
        )
        self.per_path_flow = float(res.x)

    def _trajectory_cost(self, n_per_path: float) -> float:
        cfg = self.config
        rho = cfg.rho
        n_total = cfg.arrivals.mean
        n0 = n_total - cfg.num_stochastic * n_per_path
        state = cfg.initial_state(int(round(n_total)))
        counts = (n0,) + (n_per_path,) * cfg.num_stochastic
        total, disc = 0.0, 1.0
        for _ in range(self.horizon):
            alloc = Allocation(counts)
            _, social = immediate_costs(state, alloc, cfg.variance)
            total += disc * social
            nxt = [
                PathBeliefState(
                    latency_update(p.expected_latency, n, p.belief, cfg.hazard, cfg.correlation),
                    p.belief,
                    n,
                )
                for p, n in zip(state.paths, counts[1:])
            ]
            state = NetworkState(tuple(nxt), cfg.safe_latency, state.arrivals)
            disc *= rho
        return total

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation:
        n = self.per_path_flow * state.arrivals / self.config.arrivals.mean
        counts = (state.arrivals - self.config.num_stochastic * n,) + (
            n,
        ) * self.config.num_stochastic
        return Allocation(counts)


@dataclass
class CharPolicy:
    """Runs the full mechanism each slot: checks whether recommendations can
    bind at all, sizes the hiding group against the continuation estimate,
    then realizes randomized recommendations for the rest."""

    config: NetworkConfig
    params: CharParams
    evaluator: ContinuationValue | None = None
    realize_draws: bool = True
    name: str = "char"

    def __post_init__(self) -> None:
        cfg = self.config
        prior = cfg.hazard.xbar_prior
        self._hiding_cost = prior_expected_stochastic_cost(prior, cfg)
        # Recommendations cannot curb exploration when the prior already makes
        # a fully loaded stochastic path look no worse than the empty safe
        # path; every user then follows the hiding split.
        full_load = cfg.arrivals.n_max / cfg.num_stochastic
        self._prior_dominant = (
            self._hiding_cost + full_load <= cfg.safe_latency + 1e-9
        )
        if self.evaluator is None:
            self.evaluator = RecedingHorizonEvaluator(cfg)

    def allocate(self, state: NetworkState, rng: np.random.Generator) -> Allocation:
        cfg = self.config
        hiding = hiding_allocation(
            cfg.hazard.xbar_prior,
            state.arrivals,
            cfg,
            expected_stochastic_cost=self._hiding_cost,
        )
        if self._prior_dominant:
            return hiding
        n_hiding, expected = char_optimize_hiding_count(
            state, self.evaluator, self.params, cfg, hiding=hiding
        )
        if not self.realize_draws:
            return expected
        n_rec = state.arrivals - n_hiding
        counts = [n_hiding * (hiding.counts[j] / max(state.arrivals, 1)) for j in range(len(hiding.counts))]
        if n_rec > 0:
            recs = char_recommend(state, self.params, n_rec, rng)
            for rec in recs:
                counts[rec.path] += 1.0
        return Allocation(tuple(counts))
