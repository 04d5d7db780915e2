"""Bayesian belief and latency dynamics.

Crowd reports update each path's hazard belief by Bayes' rule; the posterior
drives the expected hazard coefficient and the next-slot latency recursion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .model import (
    CorrelationFn,
    HazardModel,
    InvalidInputError,
    ObservationModel,
    linear_carryover,
)

# Beliefs strictly inside (0,1) are floored away from the endpoints before the
# Bayes division; exact 0 and 1 stay absorbing.
_BELIEF_FLOOR = 1e-12


class Observation(enum.Enum):
    """Fused crowd report for one path and slot: hazard seen, none seen, or
    no travelers (hence no report)."""

    HAZARD = 1
    CLEAR = 0
    NONE = "none"

    @classmethod
    def from_flag(cls, flag: int) -> "Observation":
        return cls.HAZARD if flag else cls.CLEAR


@dataclass(frozen=True)
class TransitionMatrix:
    """Two-state chain over the hazard coefficient: q_hh = P(high -> high),
    q_lh = P(low -> high)."""

    q_hh: float
    q_lh: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.q_hh <= 1.0 and 0.0 <= self.q_lh <= 1.0):
            raise InvalidInputError("transition probabilities must be in [0, 1]")

    @classmethod
    def identity(cls) -> "TransitionMatrix":
        return cls(1.0, 0.0)

    @property
    def steady_state(self) -> float:
        denom = self.q_lh + (1.0 - self.q_hh)
        if denom <= 0.0:
            raise InvalidInputError("steady state undefined: absorbing high state")
        return self.q_lh / denom


def _clamp_interior(x: float) -> float:
    if 0.0 < x < 1.0:
        return min(max(x, _BELIEF_FLOOR), 1.0 - _BELIEF_FLOOR)
    return x


def posterior_update(
    x: float, n: float, y: Observation, obs: ObservationModel
) -> float:
    """Posterior hazard belief after the slot's fused report.

    hazard: x qH / (x qH + (1-x) qL); clear: the complementary form;
    no report leaves the belief unchanged. A degenerate 0/0 also leaves it
    unchanged (absorbing belief).
    """
    if not (0.0 <= x <= 1.0):
        raise InvalidInputError("belief must be in [0, 1]")
    if y is Observation.NONE:
        return x
    if n < 1:
        raise InvalidInputError("an observation requires at least one traveler")
    x = _clamp_interior(x)
    qh = float(obs.q_high(n))
    ql = float(obs.q_low(n))
    if y is Observation.HAZARD:
        num, denom = x * qh, x * qh + (1.0 - x) * ql
    else:
        num, denom = x * (1.0 - qh), x * (1.0 - qh) + (1.0 - x) * (1.0 - ql)
    if denom == 0.0:
        return x
    return min(max(num / denom, 0.0), 1.0)


def hazard_prob(x: float, n: float, obs: ObservationModel) -> float:
    """Total probability of a hazard report given belief x and n travelers."""
    if n < 1:
        raise InvalidInputError("hazard_prob needs at least one traveler")
    return float(x * obs.q_high(n) + (1.0 - x) * obs.q_low(n))


def expected_alpha(x_post: float, hz: HazardModel) -> float:
    """Expected hazard coefficient under the posterior belief."""
    if not (0.0 <= x_post <= 1.0):
        raise InvalidInputError("belief must be in [0, 1]")
    return x_post * hz.alpha_high + (1.0 - x_post) * hz.alpha_low


def latency_update(
    ell: float,
    n: float,
    x_post: float,
    hz: HazardModel,
    f: CorrelationFn = linear_carryover,
) -> float:
    """Next-slot expected latency: the posterior-weighted carryover of the
    current latency and flow through f."""
    if ell < 0 or n < 0:
        raise InvalidInputError("latency and flow must be >= 0")
    return x_post * f(ell, n, hz.alpha_high) + (1.0 - x_post) * f(
        ell, n, hz.alpha_low
    )


def belief_transition(x_post: float, tm: TransitionMatrix) -> float:
    """Propagate the posterior one slot through the hazard chain."""
    if not (0.0 <= x_post <= 1.0):
        raise InvalidInputError("belief must be in [0, 1]")
    return x_post * tm.q_hh + (1.0 - x_post) * tm.q_lh
