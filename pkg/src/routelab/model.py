"""Core domain types, cost functions, and configuration for the parallel-network game.

A network has one safe path (index 0, fixed latency) and M stochastic paths
whose latencies carry over between slots through a correlation function.
Travelers on a stochastic path pay latency + congestion + a variance cost
that shrinks with how many people traveled there last slot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm


class InvalidInputError(ValueError):
    """Operation input violates a precondition (e.g. dimension mismatch)."""


class ConfigError(ValueError):
    """Configuration file or section failed validation."""


# Correlation function f(ell, n, alpha): next-slot latency from current
# latency, flow, and the hazard coefficient. Must be nondecreasing in all
# three arguments.
CorrelationFn = Callable[[float, float, float], float]


def linear_carryover(ell: float, n: float, alpha: float) -> float:
    """Default correlation: leftover flow alpha * (latency + flow)."""
    return alpha * (ell + n)


# ---------------------------------------------------------------------------
# arrivals


@dataclass(frozen=True)
class ArrivalModel:
    """Per-slot user arrival count N(t) in [n_min, n_max] with mean `mean`."""

    n_min: int
    n_max: int
    mean: float
    dist: str = "constant"  # constant | uniform-integer | truncated-normal
    std: float = 0.0

    def __post_init__(self) -> None:
        if not (0 <= self.n_min <= self.mean <= self.n_max):
            raise ConfigError(
                f"arrivals: need 0 <= min <= mean <= max, got "
                f"min={self.n_min} mean={self.mean} max={self.n_max}"
            )
        if self.dist not in ("constant", "uniform-integer", "truncated-normal"):
            raise ConfigError(f"arrivals.dist: unknown distribution {self.dist!r}")
        if self.dist == "truncated-normal" and self.std <= 0:
            raise ConfigError("arrivals.std must be > 0 for truncated-normal")
        if self.dist == "constant" and self.mean != int(self.mean):
            raise ConfigError("arrivals.mean must be an integer for constant arrivals")
        if self.dist == "uniform-integer" and 2 * self.mean != self.n_min + self.n_max:
            raise ConfigError("arrivals.mean must equal (min+max)/2 for uniform-integer")

    def support(self) -> np.ndarray:
        if self.dist == "constant":
            return np.array([int(self.mean)])
        return np.arange(self.n_min, self.n_max + 1)

    def probabilities(self) -> np.ndarray:
        """Probability mass on `support()`; used for exact expectations."""
        sup = self.support()
        if self.dist == "constant":
            return np.array([1.0])
        if self.dist == "uniform-integer":
            return np.full(len(sup), 1.0 / len(sup))
        # integer-binned normal, renormalized over the support window
        upper = norm.cdf((sup + 0.5 - self.mean) / self.std)
        lower = norm.cdf((sup - 0.5 - self.mean) / self.std)
        mass = upper - lower
        return mass / mass.sum()

    def sample(self, rng: np.random.Generator) -> int:
        if self.dist == "constant":
            return int(self.mean)
        if self.dist == "uniform-integer":
            return int(rng.integers(self.n_min, self.n_max + 1))
        draw = rng.normal(self.mean, self.std)
        while not (self.n_min - 0.5 <= draw <= self.n_max + 0.5):
            draw = rng.normal(self.mean, self.std)
        return int(np.clip(round(draw), self.n_min, self.n_max))


def sample_arrivals(model: ArrivalModel, rng: np.random.Generator) -> int:
    """Draw one slot's arrival count; deterministic given the rng state."""
    return model.sample(rng)


# ---------------------------------------------------------------------------
# prior over the long-run hazard probability


@dataclass(frozen=True)
class PriorDistribution:
    """Distribution of the unknown long-run hazard probability on (0, 1)."""

    family: str  # point | uniform | beta | discrete
    params: tuple[float, ...] = ()
    points: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.family == "point":
            (v,) = self.params
            if not 0.0 < v < 1.0:
                raise ConfigError("prior point mass must lie strictly inside (0,1)")
        elif self.family == "uniform":
            lo, hi = self.params
            if not (0.0 < lo < hi < 1.0):
                raise ConfigError("prior uniform support must lie strictly inside (0,1)")
        elif self.family == "beta":
            a, b = self.params
            if a <= 0 or b <= 0:
                raise ConfigError("prior beta parameters must be positive")
        elif self.family == "discrete":
            if len(self.points) != len(self.weights) or not self.points:
                raise ConfigError("prior discrete needs matching points/weights")
            if not all(0.0 < p < 1.0 for p in self.points):
                raise ConfigError("prior discrete points must lie strictly inside (0,1)")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise ConfigError("prior discrete weights must sum to 1")
        else:
            raise ConfigError(f"prior.family: unknown family {self.family!r}")

    @classmethod
    def point(cls, value: float) -> "PriorDistribution":
        return cls("point", (value,))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "PriorDistribution":
        return cls("uniform", (lo, hi))

    @classmethod
    def beta(cls, a: float, b: float) -> "PriorDistribution":
        return cls("beta", (a, b))

    @classmethod
    def discrete(
        cls, points: Sequence[float], weights: Sequence[float]
    ) -> "PriorDistribution":
        return cls("discrete", (), tuple(points), tuple(weights))

    def mean(self) -> float:
        return self.expect(lambda x: x)

    def expect(self, fn: Callable[[float], float]) -> float:
        """E[fn(xbar)] by exact sum or fixed quadrature."""
        if self.family == "point":
            return fn(self.params[0])
        if self.family == "discrete":
            return float(sum(w * fn(p) for p, w in zip(self.points, self.weights)))
        if self.family == "uniform":
            lo, hi = self.params
            xs = np.linspace(lo, hi, 257)
            ys = np.array([fn(float(x)) for x in xs])
            return float(np.trapezoid(ys, xs) / (hi - lo))
        a, b = self.params
        xs = np.linspace(1e-6, 1 - 1e-6, 513)
        from scipy.stats import beta as beta_dist

        pdf = beta_dist.pdf(xs, a, b)
        ys = np.array([fn(float(x)) for x in xs])
        return float(np.trapezoid(ys * pdf, xs) / np.trapezoid(pdf, xs))

    def cdf(self, x: float) -> float:
        """P(xbar < x); the mass below a belief threshold."""
        if self.family == "point":
            return 1.0 if self.params[0] < x else 0.0
        if self.family == "discrete":
            return float(sum(w for p, w in zip(self.points, self.weights) if p < x))
        if self.family == "uniform":
            lo, hi = self.params
            return float(np.clip((x - lo) / (hi - lo), 0.0, 1.0))
        from scipy.stats import beta as beta_dist

        return float(beta_dist.cdf(x, *self.params))

    def sample(self, rng: np.random.Generator) -> float:
        if self.family == "point":
            return self.params[0]
        if self.family == "discrete":
            return float(rng.choice(self.points, p=self.weights))
        if self.family == "uniform":
            lo, hi = self.params
            return float(rng.uniform(lo, hi))
        return float(rng.beta(*self.params))


# ---------------------------------------------------------------------------
# hazard process


@dataclass(frozen=True)
class HazardModel:
    """Two-state hazard coefficient process for the stochastic paths.

    alpha_high >= 1 amplifies latency carryover (bad state); alpha_low < 1
    dissipates it. `xbar_true` is the long-run probability of the bad state,
    hidden from every policy; `xbar_prior` is the public prior over it.
    """

    alpha_high: float
    alpha_low: float
    xbar_true: float
    xbar_prior: PriorDistribution
    transition: "object | None" = None  # TransitionMatrix, linear-graph mode only

    def __post_init__(self) -> None:
        if not (self.alpha_high >= 1.0 > self.alpha_low >= 0.0):
            raise ConfigError(
                f"hazard: need alpha_high >= 1 > alpha_low >= 0, got "
                f"{self.alpha_high}, {self.alpha_low}"
            )
        if not (0.0 <= self.xbar_true <= 1.0):
            raise ConfigError("hazard.xbar_true must be a probability")


# ---------------------------------------------------------------------------
# observation quality


@dataclass(frozen=True)
class ObservationModel:
    """Group hazard-report probabilities q_high(n), q_low(n).

    q_high (chance the fused report says 'hazard' when the state is bad)
    grows with the crowd size n; q_low (false alarm rate in the good state)
    shrinks with it.
    """

    family: str  # gaussian-cdf | constant | table
    mean: float = 0.0
    variance: float = 1.0
    q_high_const: float = 0.0
    q_low_const: float = 0.0
    table_n: tuple[float, ...] = ()
    table_qh: tuple[float, ...] = ()
    table_ql: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.family == "gaussian-cdf":
            if self.variance <= 0:
                raise ConfigError("observation.variance must be > 0")
        elif self.family == "constant":
            if not (0.0 <= self.q_low_const <= self.q_high_const <= 1.0):
                raise ConfigError("observation: need 0 <= q_low <= q_high <= 1")
        elif self.family == "table":
            if not (len(self.table_n) == len(self.table_qh) == len(self.table_ql)):
                raise ConfigError("observation table columns must align")
            if list(self.table_n) != sorted(self.table_n):
                raise ConfigError("observation table n values must be sorted")
            if any(np.diff(self.table_qh) < -1e-12):
                raise ConfigError("observation q_high must be nondecreasing")
            if any(np.diff(self.table_ql) > 1e-12):
                raise ConfigError("observation q_low must be nonincreasing")
        else:
            raise ConfigError(f"observation.family: unknown family {self.family!r}")

    @classmethod
    def gaussian_cdf(cls, mean: float, variance: float) -> "ObservationModel":
        return cls("gaussian-cdf", mean=mean, variance=variance)

    @classmethod
    def constant(cls, q_high: float, q_low: float) -> "ObservationModel":
        return cls("constant", q_high_const=q_high, q_low_const=q_low)

    @classmethod
    def table(
        cls, n: Sequence[float], q_high: Sequence[float], q_low: Sequence[float]
    ) -> "ObservationModel":
        return cls(
            "table", table_n=tuple(n), table_qh=tuple(q_high), table_ql=tuple(q_low)
        )

    def q_high(self, n):
        if self.family == "gaussian-cdf":
            return norm.cdf((np.asarray(n, dtype=float) - self.mean) / math.sqrt(self.variance))
        if self.family == "constant":
            return np.full_like(np.asarray(n, dtype=float), self.q_high_const)
        return np.interp(np.asarray(n, dtype=float), self.table_n, self.table_qh)

    def q_low(self, n):
        if self.family == "gaussian-cdf":
            # complement keeps q_low <= q_high for n above the CDF midpoint
            return 1.0 - self.q_high(n)
        if self.family == "constant":
            return np.full_like(np.asarray(n, dtype=float), self.q_low_const)
        return np.interp(np.asarray(n, dtype=float), self.table_n, self.table_ql)


# ---------------------------------------------------------------------------
# variance (estimation-error) cost


@dataclass(frozen=True)
class VarianceCostModel:
    """Extra per-user cost from imperfect crowd reports; nonincreasing in the
    previous slot's traveler count, capped at `b` for an unexplored path."""

    family: str  # capped-reciprocal | zero | table
    a: float = 0.0
    b: float = 0.0
    table_n: tuple[float, ...] = ()
    table_v: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.family == "capped-reciprocal":
            if self.a < 0 or self.b < 0:
                raise ConfigError("variance: a and b must be >= 0")
        elif self.family == "table":
            if len(self.table_n) != len(self.table_v):
                raise ConfigError("variance table columns must align")
            if any(np.diff(self.table_v) > 1e-12):
                raise ConfigError("variance table must be nonincreasing")
        elif self.family != "zero":
            raise ConfigError(f"variance.family: unknown family {self.family!r}")

    @classmethod
    def capped_reciprocal(cls, a: float, b: float) -> "VarianceCostModel":
        return cls("capped-reciprocal", a=a, b=b)

    @classmethod
    def zero(cls) -> "VarianceCostModel":
        return cls("zero")

    @classmethod
    def table(cls, n: Sequence[float], v: Sequence[float]) -> "VarianceCostModel":
        return cls("table", table_n=tuple(n), table_v=tuple(v))

    def value(self, n_prev):
        n_arr = np.asarray(n_prev, dtype=float)
        if self.family == "zero":
            out = np.zeros_like(n_arr)
        elif self.family == "capped-reciprocal":
            with np.errstate(divide="ignore"):
                out = np.where(n_arr > 0, np.minimum(self.a / np.maximum(n_arr, 1e-300), self.b), self.b)
        else:
            out = np.interp(n_arr, self.table_n, self.table_v)
        return float(out) if np.isscalar(n_prev) or n_arr.ndim == 0 else out


def variance_cost(v: VarianceCostModel, n_prev: float) -> float:
    """V(n_prev): the cap at n_prev = 0, else the configured decay."""
    if n_prev < 0:
        raise InvalidInputError("n_prev must be >= 0")
    return float(v.value(n_prev))


# ---------------------------------------------------------------------------
# paths and network state


@dataclass(frozen=True)
class PathSpec:
    """Static description of one path: safe (fixed latency) or stochastic
    (initial expected latency, initial hazard belief, last-slot flow)."""

    kind: str  # safe | stochastic
    latency: float
    belief: float = 0.0
    prev_count: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("safe", "stochastic"):
            raise ConfigError(f"paths.kind: unknown kind {self.kind!r}")
        if self.latency < 0:
            raise ConfigError("paths.latency must be >= 0")
        if not (0.0 <= self.belief <= 1.0):
            raise ConfigError("paths.belief must be a probability")
        if self.prev_count < 0:
            raise ConfigError("paths.prev_count must be >= 0")

    @classmethod
    def safe(cls, latency: float) -> "PathSpec":
        return cls("safe", latency)

    @classmethod
    def stochastic(
        cls, latency: float, belief: float, prev_count: float = 0.0
    ) -> "PathSpec":
        return cls("stochastic", latency, belief, prev_count)


@dataclass(frozen=True)
class PathBeliefState:
    """Platform-visible state of one stochastic path."""

    expected_latency: float
    belief: float
    last_count: float = 0.0

    def __post_init__(self) -> None:
        if self.expected_latency < 0:
            raise InvalidInputError("expected_latency must be >= 0")
        if not (0.0 <= self.belief <= 1.0):
            raise InvalidInputError("belief must be in [0, 1]")


@dataclass(frozen=True)
class NetworkState:
    """Everything a policy may see: per-path beliefs/latencies, the safe
    latency, and this slot's arrival count."""

    paths: tuple[PathBeliefState, ...]
    safe_latency: float
    arrivals: int

    def __post_init__(self) -> None:
        if not self.paths:
            raise InvalidInputError("need at least one stochastic path")
        if self.arrivals < 0:
            raise InvalidInputError("arrivals must be >= 0")

    @property
    def num_stochastic(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class Allocation:
    """Per-path user counts (n_0..n_M), summing to the slot's arrivals."""

    counts: tuple[float, ...]
    mode: str = "fractional"  # fractional | integer

    def __post_init__(self) -> None:
        if any(c < -1e-9 for c in self.counts):
            raise InvalidInputError("allocation counts must be >= 0")
        if self.mode not in ("fractional", "integer"):
            raise InvalidInputError(f"unknown allocation mode {self.mode!r}")
        if self.mode == "integer" and any(
            abs(c - round(c)) > 1e-9 for c in self.counts
        ):
            raise InvalidInputError("integer allocation has non-integer counts")

    @property
    def total(self) -> float:
        return float(sum(self.counts))

    def validate_for(self, state: NetworkState) -> None:
        if len(self.counts) != state.num_stochastic + 1:
            raise InvalidInputError(
                f"allocation for {len(self.counts) - 1} stochastic paths, "
                f"state has {state.num_stochastic}"
            )
        if abs(self.total - state.arrivals) > 1e-6:
            raise InvalidInputError(
                f"allocation sums to {self.total}, expected {state.arrivals}"
            )

    def rounded(self) -> tuple[int, ...]:
        """Integer counts by largest-remainder rounding, preserving the sum."""
        return largest_remainder_round(self.counts)


def largest_remainder_round(counts: Sequence[float]) -> tuple[int, ...]:
    floors = [math.floor(c + 1e-12) for c in counts]
    remainder = int(round(sum(counts))) - sum(floors)
    fracs = sorted(
        range(len(counts)), key=lambda i: counts[i] - floors[i], reverse=True
    )
    out = list(floors)
    for i in fracs[: max(remainder, 0)]:
        out[i] += 1
    return tuple(out)


def immediate_costs(
    state: NetworkState, alloc: Allocation, v: VarianceCostModel
) -> tuple[list[float], float]:
    """Per-user path costs and the slot's social cost sum(n_i * c_i).

    Safe path: latency + own-path congestion. Stochastic path i: expected
    latency + congestion + variance cost at last slot's count.
    """
    alloc.validate_for(state)
    n0 = alloc.counts[0]
    costs = [state.safe_latency + n0]
    for path, n in zip(state.paths, alloc.counts[1:]):
        costs.append(path.expected_latency + n + float(v.value(path.last_count)))
    social = float(sum(n * c for n, c in zip(alloc.counts, costs)))
    return costs, social


# ---------------------------------------------------------------------------
# whole-network configuration


@dataclass(frozen=True)
class CharSettings:
    """Mechanism knobs carried in a config file; see policies.CharParams."""

    x_th: float
    p_low: float
    p_high: float

    def __post_init__(self) -> None:
        for name, p in (("x_th", self.x_th), ("p_low", self.p_low), ("p_high", self.p_high)):
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"char.{name} must be a probability")


@dataclass(frozen=True)
class NetworkConfig:
    arrivals: ArrivalModel
    hazard: HazardModel
    observation: ObservationModel
    variance: VarianceCostModel
    paths: tuple[PathSpec, ...]
    rho: float
    char: CharSettings | None = None
    correlation: CorrelationFn = linear_carryover

    def __post_init__(self) -> None:
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError("rho must lie in [0, 1)")
        safe = [p for p in self.paths if p.kind == "safe"]
        stochastic = [p for p in self.paths if p.kind == "stochastic"]
        if len(safe) != 1:
            raise ConfigError("paths must contain exactly one safe path")
        if not stochastic:
            raise ConfigError("paths must contain at least one stochastic path")
        if self.char is not None:
            mass = self.hazard.xbar_prior.cdf(self.char.x_th)
            if self.char.p_low * mass < self.char.p_high * (1.0 - mass) - 1e-12:
                raise ConfigError(
                    "char: p_low * P(x_th) must be >= p_high * (1 - P(x_th))"
                )

    @property
    def safe_latency(self) -> float:
        return next(p.latency for p in self.paths if p.kind == "safe")

    @property
    def stochastic_paths(self) -> tuple[PathSpec, ...]:
        return tuple(p for p in self.paths if p.kind == "stochastic")

    @property
    def num_stochastic(self) -> int:
        return len(self.stochastic_paths)

    def initial_state(self, arrivals: int | None = None) -> NetworkState:
        n = int(self.arrivals.mean) if arrivals is None else arrivals
        return NetworkState(
            paths=tuple(
                PathBeliefState(p.latency, p.belief, p.prev_count)
                for p in self.stochastic_paths
            ),
            safe_latency=self.safe_latency,
            arrivals=n,
        )

    def with_overrides(self, **kwargs) -> "NetworkConfig":
        return replace(self, **kwargs)


# ---------------------------------------------------------------------------
# JSON config parsing


_ARRIVAL_KEYS = {"min", "max", "mean", "dist", "std"}
_HAZARD_KEYS = {"alpha_high", "alpha_low", "xbar_true", "prior"}
_PRIOR_KEYS = {"family", "value", "lo", "hi", "a", "b", "points", "weights"}
_OBS_KEYS = {"family", "mean", "variance", "q_high", "q_low", "n", "q_high_table", "q_low_table"}
_VAR_KEYS = {"family", "a", "b", "n", "v"}
_PATH_KEYS = {"kind", "latency", "belief", "prev_count"}
_CHAR_KEYS = {"x_th", "p_low", "p_high"}
_TOP_KEYS = {"arrivals", "hazard", "observation", "variance", "paths", "rho", "char"}


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def _parse_prior(section: dict) -> PriorDistribution:
    _check_keys(section, _PRIOR_KEYS, "hazard.prior")
    family = section.get("family")
    if family == "point":
        return PriorDistribution.point(section["value"])
    if family == "uniform":
        return PriorDistribution.uniform(section["lo"], section["hi"])
    if family == "beta":
        return PriorDistribution.beta(section["a"], section["b"])
    if family == "discrete":
        return PriorDistribution.discrete(section["points"], section["weights"])
    raise ConfigError(f"hazard.prior.family: unknown family {family!r}")


def parse_config(data: dict) -> NetworkConfig:
    """Build a validated NetworkConfig from a parsed JSON document."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(data, _TOP_KEYS, "config")
    for key in ("arrivals", "hazard", "observation", "variance", "paths", "rho"):
        if key not in data:
            raise ConfigError(f"config: missing required section {key!r}")

    arr = data["arrivals"]
    _check_keys(arr, _ARRIVAL_KEYS, "arrivals")
    arrivals = ArrivalModel(
        n_min=arr["min"],
        n_max=arr["max"],
        mean=arr["mean"],
        dist=arr.get("dist", "constant"),
        std=arr.get("std", 0.0),
    )

    hz = data["hazard"]
    _check_keys(hz, _HAZARD_KEYS, "hazard")
    hazard = HazardModel(
        alpha_high=hz["alpha_high"],
        alpha_low=hz["alpha_low"],
        xbar_true=hz["xbar_true"],
        xbar_prior=_parse_prior(hz["prior"]),
    )

    obs = data["observation"]
    _check_keys(obs, _OBS_KEYS, "observation")
    family = obs.get("family")
    if family == "gaussian-cdf":
        observation = ObservationModel.gaussian_cdf(obs["mean"], obs["variance"])
    elif family == "constant":
        observation = ObservationModel.constant(obs["q_high"], obs["q_low"])
    elif family == "table":
        observation = ObservationModel.table(
            obs["n"], obs["q_high_table"], obs["q_low_table"]
        )
    else:
        raise ConfigError(f"observation.family: unknown family {family!r}")

    var = data["variance"]
    _check_keys(var, _VAR_KEYS, "variance")
    family = var.get("family")
    if family == "capped-reciprocal":
        variance = VarianceCostModel.capped_reciprocal(var["a"], var["b"])
    elif family == "zero":
        variance = VarianceCostModel.zero()
    elif family == "table":
        variance = VarianceCostModel.table(var["n"], var["v"])
    else:
        raise ConfigError(f"variance.family: unknown family {family!r}")

    paths = []
    for i, p in enumerate(data["paths"]):
        _check_keys(p, _PATH_KEYS, f"paths[{i}]")
        paths.append(
            PathSpec(
                kind=p["kind"],
                latency=p["latency"],
                belief=p.get("belief", 0.0),
                prev_count=p.get("prev_count", 0.0),
            )
        )

    char = None
    if "char" in data:
        _check_keys(data["char"], _CHAR_KEYS, "char")
        char = CharSettings(**data["char"])

    return NetworkConfig(
        arrivals=arrivals,
        hazard=hazard,
        observation=observation,
        variance=variance,
        paths=tuple(paths),
        rho=data["rho"],
        char=char,
    )


def load_config(path: str | Path) -> NetworkConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(data)
