"""Acceptance rules: greedy, Boltzmann (simulated annealing) and best-of-K selection.

Every function here is pure. Random draws for the Boltzmann rule are passed in
by the caller so that decisions can be replayed from a ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import MetricValue
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class TemperatureSchedule:
    """Geometric cooling, ``T_k = t0 * gamma**(k - 1)``."""

    t0: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.t0) and self.t0 > 0):
            raise DomainError(f"t0 must be > 0, got {self.t0!r}")
        if not (0 < self.gamma <= 1):
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma!r}")


@dataclass(frozen=True)
class Decision:
    accept: bool
    accept_probability: float
    rng_draw: Optional[float] = None

    @property
    def stochastic(self) -> bool:
        return self.rng_draw is not None


def _check_names(current: MetricValue, candidate: MetricValue) -> None:
    if current.name != candidate.name:
        raise ConfigError(f"metric mismatch: {current.name!r} vs {candidate.name!r}")


def greedy_decide(
    current: MetricValue, candidate: MetricValue, precision: Optional[int] = None
) -> Decision:
    """Accept iff the candidate strictly improves.

    ``precision`` rounds both values to that many decimals before comparing;
    the default compares the raw floats.
    """
    _check_names(current, candidate)
    a, b = current.value, candidate.value
    if precision is not None:
        a, b = round(a, precision), round(b, precision)
    accept = b > a
    return Decision(accept, 1.0 if accept else 0.0)


def sa_accept_probability(delta: float, temperature: float) -> float:
    if not math.isfinite(delta):
        raise DomainError(f"delta must be finite, got {delta!r}")
    if not (temperature > 0):
        raise DomainError(f"temperature must be > 0, got {temperature!r}")
    if delta >= 0:
        return 1.0
    return min(1.0, max(0.0, math.exp(delta / temperature)))


def sa_decide(
    current: MetricValue, candidate: MetricValue, temperature: float, draw: float
) -> Decision:
    """Boltzmann acceptance against an injected uniform draw in [0, 1).

    Non-negative deltas are accepted without looking at the draw, and the
    returned Decision then carries no draw.
    """
    _check_names(current, candidate)
    delta = candidate.value - current.value
    p = sa_accept_probability(delta, temperature)
    if delta >= 0:
        return Decision(True, p)
    if not 0.0 <= draw < 1.0:
        raise DomainError(f"draw must lie in [0, 1), got {draw!r}")
    return Decision(draw < p, p, draw)


def temperature_at(schedule: TemperatureSchedule, round_k: int) -> float:
    if round_k < 1:
        raise DomainError(f"round index must be >= 1, got {round_k}")
    return schedule.t0 * schedule.gamma ** (round_k - 1)


def calibrate_t0(regression_delta: float, target_p: float) -> float:
    """T0 at which a regression of ``regression_delta`` is accepted with ``target_p``."""
    if not (0 < target_p < 1):
        raise DomainError(f"target_p must lie in (0, 1), got {target_p!r}")
    if not (math.isfinite(regression_delta) and regression_delta > 0):
        raise DomainError(f"regression_delta must be > 0, got {regression_delta!r}")
    return regression_delta / -math.log(target_p)


def select_best(results: Sequence[tuple[int, MetricValue]]) -> int:
    """Investigator index with the highest score; ties go to the lowest index."""
    if not results:
        raise DomainError("select_best needs at least one result")
    names = {m.name for _, m in results}
    if len(names) > 1:
        raise ConfigError(f"mixed metric names: {sorted(names)}")
    best_idx, best_val = None, None
    for idx, m in sorted(results, key=lambda r: r[0]):
        if best_val is None or m.value > best_val:
            best_idx, best_val = idx, m.value
    return best_idx
