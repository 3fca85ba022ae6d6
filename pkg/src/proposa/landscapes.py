"""Synthetic 1-D objectives for checking when annealing beats greedy search.

Objectives (higher is better):

``quadratic_unimodal``
    ``f(x) = peak - curvature * (x - center)**2``

``double_well``
    ``f(x) = max(v1 - a (x - c1)**2, v2 - a (x - c2)**2)`` with a shared
    curvature ``a = ((sqrt(h) + sqrt(h + v2 - v1)) / (c2 - c1))**2``. That
    choice puts the valley (where the two parabolas cross) exactly ``h`` below
    the local peak ``v1``, so ``h`` is the barrier seen from the local basin.
    The global peak is ``v2`` at ``c2``.

Basin membership of a point is its nearest basin center.

A synthetic proposer is a Gaussian random walk of width ``support_width``
(clamped to the domain); the width stands in for how far from the incumbent
a proposer puts non-negligible mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .acceptance import TemperatureSchedule, sa_accept_probability, temperature_at
from .core import Artifact, EvaluationReport, FormatTag, MetricValue
from .errors import DomainError, ParseError
from .formats import dump_numeric_config, parse_numeric_config
from .loop import LoopConfig, Run, Strategy
from .proposers import RandomPerturbProposer
from .rng import Stream, derive_seed
from .tasks import Task

KINDS = ("quadratic_unimodal", "double_well")


@dataclass(frozen=True)
class Landscape:
    kind: str
    lo: float
    hi: float
    centers: tuple[float, ...]
    values: tuple[float, ...]
    barrier: Optional[float] = None
    curvature: float = field(default=1.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown landscape kind {self.kind!r}")
        if not self.lo < self.hi:
            raise DomainError("domain needs lo < hi")
        if self.kind == "double_well":
            (c1, c2), (v1, v2) = self.centers, self.values
            if not (self.lo < c1 < c2 < self.hi):
                raise DomainError("double_well needs lo < c1 < c2 < hi")
            if not v1 < v2:
                raise DomainError("double_well needs v1 < v2 (global basin at c2)")
            if self.barrier is None or not self.barrier > 0:
                raise DomainError("double_well needs a barrier height h > 0")
            a = ((math.sqrt(self.barrier) + math.sqrt(self.barrier + v2 - v1)) / (c2 - c1)) ** 2
            object.__setattr__(self, "curvature", a)
            maxima = count_local_maxima(self)
            if maxima != 2:
                raise DomainError(f"double_well has {maxima} local maxima on its domain, expected 2")
        elif self.curvature < 0:
            raise DomainError("curvature must be >= 0")

    @classmethod
    def quadratic(cls, center=0.0, peak=1.0, curvature=1.0, lo=-1.0, hi=1.0) -> "Landscape":
        return cls("quadratic_unimodal", lo, hi, (center,), (peak,), curvature=curvature)

    @classmethod
    def double_well(cls, c1=-1.0, c2=1.0, v1=0.0, v2=0.5, barrier=1.0, lo=-3.0, hi=3.0) -> "Landscape":
        return cls("double_well", lo, hi, (c1, c2), (v1, v2), barrier=barrier)

    @property
    def separation(self) -> float:
        return self.centers[-1] - self.centers[0]

    @property
    def global_basin(self) -> int:
        return int(np.argmax(self.values))

    def values_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        parts = [v - self.curvature * (x - c) ** 2 for c, v in zip(self.centers, self.values)]
        return np.maximum.reduce(parts) if len(parts) > 1 else parts[0]

    def basin(self, x: float) -> int:
        return int(np.argmin([abs(x - c) for c in self.centers]))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "lo": self.lo, "hi": self.hi, "centers": list(self.centers), "values": list(self.values)}
        if self.kind == "double_well":
            d["barrier"] = self.barrier
        else:
            d["curvature"] = self.curvature
        return d


def landscape_from_dict(d: dict) -> Landscape:
    kw = dict(kind=d["kind"], lo=float(d["lo"]), hi=float(d["hi"]),
              centers=tuple(map(float, d["centers"])), values=tuple(map(float, d["values"])))
    if d["kind"] == "double_well":
        kw["barrier"] = float(d["barrier"])
    else:
        kw["curvature"] = float(d.get("curvature", 1.0))
    return Landscape(**kw)


def count_local_maxima(landscape: Landscape, grid_n: int = 20001) -> int:
    xs = np.linspace(landscape.lo, landscape.hi, grid_n)
    f = landscape.values_at(xs)
    left = np.concatenate(([-np.inf], f[:-1]))
    right = np.concatenate((f[1:], [-np.inf]))
    return int(np.sum((f > left) & (f > right)))


def eval_landscape(landscape: Landscape, x: float) -> float:
    if not (landscape.lo <= x <= landscape.hi):
        raise DomainError(f"x={x!r} outside [{landscape.lo}, {landscape.hi}]")
    return float(landscape.values_at(np.array([x]))[0])


def brute_force_optimum(landscape: Landscape, grid_n: int) -> tuple[float, float]:
    """Argmax over a uniform grid; ties resolve to the smallest x."""
    if grid_n < 2:
        raise DomainError("grid_n must be >= 2")
    xs = np.linspace(landscape.lo, landscape.hi, grid_n)
    f = landscape.values_at(xs)
    i = int(np.argmax(f))
    return float(xs[i]), float(f[i])


class LandscapeTask(Task):
    """Numeric config ``{"x": value}`` scored by the landscape on every tier."""

    task_id = "landscape"
    format_tag = FormatTag.NUMERIC_CONFIG
    metric = "objective"

    def __init__(self, landscape: Landscape):
        self.landscape = landscape

    def parse(self, text):
        config = parse_numeric_config(text)
        if set(config) != {"x"}:
            raise ParseError("landscape configs have exactly one key, 'x'")
        if not self.landscape.lo <= config["x"] <= self.landscape.hi:
            raise ParseError(f"x={config['x']!r} outside the domain")
        return Artifact(self.format_tag, text)

    def evaluate(self, artifact, tier):
        x = parse_numeric_config(artifact.body)["x"]
        value = eval_landscape(self.landscape, x)
        text = f"x={x!r} objective={value!r} basin={self.landscape.basin(x)}"
        return EvaluationReport(tier, (MetricValue(self.metric, value),), text, artifact.content_hash)

    def describe(self):
        return {"kind": self.task_id, "landscape": self.landscape.to_dict()}


@dataclass(frozen=True)
class SyntheticProposer:
    support_width: float

    def __post_init__(self):
        if not self.support_width > 0:
            raise DomainError("support_width must be > 0")

    def for_landscape(self, landscape: Landscape) -> RandomPerturbProposer:
        return RandomPerturbProposer({"x": self.support_width}, {"x": (landscape.lo, landscape.hi)})


@dataclass(frozen=True)
class TrialResult:
    final_x: float
    basin: int
    final_value: float
    values: tuple[float, ...]  # every validation score seen, seed first


def run_strategy_trial(
    landscape: Landscape,
    proposer: SyntheticProposer,
    strategy: str,
    start_x: float,
    schedule: Optional[TemperatureSchedule] = None,
    rounds: int = 30,
    seed: int = 0,
    attempt_limit: int = 1,
) -> TrialResult:
    """One run of the loop on ``landscape``.

    Skip-based early stopping is disabled (``skip_limit = rounds``) so every
    trial spends its full round budget.
    """
    config = LoopConfig(
        strategy=Strategy(strategy),
        round_budget=rounds,
        attempt_limit=attempt_limit,
        skip_limit=rounds,
        schedule=schedule if Strategy(strategy) is Strategy.SIMULATED_ANNEALING else None,
        rng_seed=seed,
    )
    task = LandscapeTask(landscape)
    seed_artifact = Artifact(FormatTag.NUMERIC_CONFIG, dump_numeric_config({"x": float(start_x)}))
    ledger = Run(task, proposer.for_landscape(landscape), config, seed_artifact).run(finalize_=False)
    final_x = start_x
    for r in reversed(ledger.rounds):
        if r.accepted_attempt is not None:
            final_x = parse_numeric_config(r.accepted_artifact.body)["x"]
            break
    values = [ledger.seed_score.value] + [a.score.value for r in ledger.rounds for a in r.attempts if a.evaluated]
    return TrialResult(final_x, landscape.basin(final_x), eval_landscape(landscape, final_x), tuple(values))


@dataclass(frozen=True)
class BasinExperiment:
    """Paired Monte-Carlo comparison of strategies on shared trial seeds."""

    landscape: Landscape
    support_width: float
    start_x: float
    schedule: TemperatureSchedule
    rounds: int
    n_trials: int
    master_seed: int

    def trial_seed(self, i: int) -> int:
        return derive_seed(self.master_seed, i)

    def basins(self, strategy: str) -> np.ndarray:
        proposer = SyntheticProposer(self.support_width)
        return np.array([
            run_strategy_trial(self.landscape, proposer, strategy, self.start_x, self.schedule,
                               self.rounds, self.trial_seed(i)).basin
            for i in range(self.n_trials)
        ])


@dataclass(frozen=True)
class PairedOutcome:
    greedy_global_rate: float
    sa_global_rate: float
    greedy_start_rate: float
    sa_start_rate: float
    sa_only: int  # trials where only SA reached the global basin
    greedy_only: int
    n_trials: int

    @property
    def difference(self) -> float:
        return self.sa_global_rate - self.greedy_global_rate

    def sign_test_p(self) -> float:
        """One-sided exact binomial p-value that SA wins discordant pairs more often."""
        n = self.sa_only + self.greedy_only
        if n == 0:
            return 1.0
        return sum(math.comb(n, j) for j in range(self.sa_only, n + 1)) / 2**n


def compare_strategies(exp: BasinExperiment) -> PairedOutcome:
    g = exp.basins("greedy")
    s = exp.basins("simulated_annealing")
    glob = exp.landscape.global_basin
    start = exp.landscape.basin(exp.start_x)
    return PairedOutcome(
        greedy_global_rate=float(np.mean(g == glob)),
        sa_global_rate=float(np.mean(s == glob)),
        greedy_start_rate=float(np.mean(g == start)),
        sa_start_rate=float(np.mean(s == start)),
        sa_only=int(np.sum((s == glob) & (g != glob))),
        greedy_only=int(np.sum((g == glob) & (s != glob))),
        n_trials=exp.n_trials,
    )


@dataclass(frozen=True)
class SweepRow:
    delta: float
    temperature: float
    p: float
    bound: float


def degeneracy_sweep(
    epsilon: float, schedule: TemperatureSchedule, samples: int, rounds: int = 10, seed: int = 0
) -> list[SweepRow]:
    """Acceptance probability of deltas with ``|delta| <= epsilon`` against ``exp(-epsilon/T)``.

    For each round temperature, ``delta = 0`` and ``delta = -epsilon`` are
    always included, plus ``samples`` uniform draws from ``[-epsilon, epsilon]``.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be > 0")
    stream = Stream(seed)
    rows = []
    for k in range(1, rounds + 1):
        T = temperature_at(schedule, k)
        bound = math.exp(-epsilon / T)
        deltas = [0.0, -epsilon] + [epsilon * (2 * stream.uniform() - 1) for _ in range(samples)]
        rows.extend(SweepRow(d, T, sa_accept_probability(d, T), bound) for d in deltas)
    return rows


# Frozen lab settings; see tests/data/lab_oracle.json for the committed run.
LAB_LANDSCAPE = dict(c1=-1.0, c2=1.0, v1=0.0, v2=0.02, barrier=1.0, lo=-3.0, hi=3.0)
LAB_SCHEDULE = dict(t0=0.3, gamma=0.7)
LAB_ROUNDS = 20
LAB_TRIALS = 1000
LAB_MASTER_SEED = 20260
NARROW_FRACTION = 0.05
BROAD_FRACTION = 1.0


def lab_experiments(n_trials: int = LAB_TRIALS, master_seed: int = LAB_MASTER_SEED) -> dict[str, BasinExperiment]:
    land = Landscape.double_well(**LAB_LANDSCAPE)
    sched = TemperatureSchedule(**LAB_SCHEDULE)
    common = dict(landscape=land, start_x=land.centers[0], schedule=sched, rounds=LAB_ROUNDS,
                  n_trials=n_trials, master_seed=master_seed)
    return {
        "narrow": BasinExperiment(support_width=NARROW_FRACTION * land.separation, **common),
        "broad": BasinExperiment(support_width=BROAD_FRACTION * land.separation, **common),
    }


def width_scan(widths: Sequence[float], n_trials: int = 200, master_seed: int = LAB_MASTER_SEED):
    """Rates across support widths; the crossover is reported, never asserted."""
    base = lab_experiments(n_trials, master_seed)["narrow"]
    out = []
    for w in widths:
        exp = BasinExperiment(base.landscape, w, base.start_x, base.schedule, base.rounds, n_trials, master_seed)
        out.append((w, compare_strategies(exp)))
    return out
