"""Propose/evaluate/accept rounds, early stopping and one-shot test finalization.

A run is a sequence of rounds. In a sequential round (greedy or simulated
annealing) the proposer gets up to ``attempt_limit`` attempts; each attempt is
scored on the validation tier and the first one the acceptance rule takes
ends the round. A round where nothing is accepted is *skipped*, and
``skip_limit`` consecutive skips end the run. In a parallel round ``K``
investigators each propose once (concurrently), the best survivor is selected
and then has to strictly beat the incumbent.

Temperature indexing uses the round index, so skipped rounds still cool.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from . import rng
from .acceptance import (
    TemperatureSchedule,
    greedy_decide,
    sa_decide,
    select_best,
    temperature_at,
)
from .barrier import Requestor, enforce_barrier
from .core import (
    Artifact,
    Attempt,
    EvaluationReport,
    MetricValue,
    RoundDecision,
    RoundRecord,
    RunLedger,
    VisibilityTier,
    ledger_append,
    ledger_finalize,
    ledger_to_dict,
    ledger_to_json,
    round_to_dict,
)
from .errors import (
    BarrierViolation,
    ConfigError,
    EvaluatorFailure,
    ProposaError,
    ProposerFailure,
    ProposerUnavailable,
    ProtocolError,
    ReplayMismatch,
)
from .proposers import ParseFailure, ProposalContext, Proposer, opro_history_context, propose
from .tasks import Task


class Strategy(str, Enum):
    GREEDY = "greedy"
    SIMULATED_ANNEALING = "simulated_annealing"
    PARALLEL = "parallel"


_STRATEGY_ALIASES = {"sa": Strategy.SIMULATED_ANNEALING, "hill_climbing": Strategy.GREEDY}


@dataclass(frozen=True)
class LoopConfig:
    strategy: Strategy
    round_budget: int
    attempt_limit: int = 3
    skip_limit: int = 2
    schedule: Optional[TemperatureSchedule] = None
    investigators: int = 1
    directives: Optional[tuple[str, ...]] = None
    rng_seed: int = 0
    comparison_precision: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.directives is not None:
            object.__setattr__(self, "directives", tuple(self.directives))
        for name in ("round_budget", "attempt_limit", "skip_limit", "investigators"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name}: must be an integer >= 1, got {value!r}")
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, int) or not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"rng_seed: must be an integer in [0, 2^64), got {self.rng_seed!r}")
        if self.strategy is Strategy.SIMULATED_ANNEALING and self.schedule is None:
            raise ConfigError("schedule: required when strategy is simulated_annealing")
        if self.strategy is Strategy.PARALLEL:
            if self.investigators < 2:
                raise ConfigError("investigators: parallel strategy needs at least 2")
            if self.directives is None or len(self.directives) != self.investigators:
                raise ConfigError("directives: parallel strategy needs one directive per investigator")
        elif self.investigators != 1:
            raise ConfigError("investigators: only the parallel strategy runs more than one")
        elif self.directives is not None and len(self.directives) > 1:
            raise ConfigError("directives: sequential strategies take at most one directive")

    @property
    def directive(self) -> Optional[str]:
        return self.directives[0] if self.directives else None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "t0": None if self.schedule is None else self.schedule.t0,
            "gamma": None if self.schedule is None else self.schedule.gamma,
            "attempt_limit": self.attempt_limit,
            "skip_limit": self.skip_limit,
            "round_budget": self.round_budget,
            "investigators": self.investigators,
            "directives": None if self.directives is None else list(self.directives),
            "rng_seed": self.rng_seed,
            "comparison_precision": self.comparison_precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        """Accepts both the ledger snapshot (``t0``/``gamma``) and config files (``schedule``)."""
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        strategy = d.get("strategy")
        if strategy is None:
            raise ConfigError("strategy: missing")
        strategy = _STRATEGY_ALIASES.get(strategy, strategy)
        try:
            strategy = Strategy(strategy)
        except ValueError:
            raise ConfigError(f"strategy: unknown strategy {strategy!r}") from None
        sched = d.get("schedule")
        schedule = None
        try:
            if sched is not None:
                if not isinstance(sched, dict) or "t0" not in sched or "gamma" not in sched:
                    raise ConfigError("schedule: needs t0 and gamma")
                schedule = TemperatureSchedule(float(sched["t0"]), float(sched["gamma"]))
            elif d.get("t0") is not None:
                schedule = TemperatureSchedule(float(d["t0"]), float(d["gamma"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from None
        if "round_budget" not in d:
            raise ConfigError("round_budget: missing")
        return cls(
            strategy=strategy,
            round_budget=d["round_budget"],
            attempt_limit=d.get("attempt_limit", 3),
            skip_limit=d.get("skip_limit", 2),
            schedule=schedule,
            investigators=d.get("investigators", 1),
            directives=d.get("directives"),
            rng_seed=d.get("rng_seed", 0),
            comparison_precision=d.get("comparison_precision"),
        )


@dataclass(frozen=True)
class LoopState:
    incumbent: Artifact
    incumbent_score: MetricValue
    diagnostics: str = field(repr=False, default="")
    round_index: int = 0
    consecutive_skips: int = 0
    finalized: bool = False


def _evaluate(task: Task, artifact: Artifact, tier: VisibilityTier) -> EvaluationReport:
    try:
        report = task.evaluate(artifact, tier)
    except ProposaError as exc:
        if isinstance(exc, EvaluatorFailure):
            raise
        raise EvaluatorFailure(f"evaluation failed: {exc}") from exc
    except Exception as exc:  # an evaluator crash is an infrastructure fault
        raise EvaluatorFailure(f"evaluation failed: {type(exc).__name__}: {exc}") from exc
    if report.tier is not VisibilityTier(tier):
        raise EvaluatorFailure(f"evaluator answered tier {report.tier.value} for {VisibilityTier(tier).value}")
    if report.artifact_hash != artifact.content_hash:
        raise EvaluatorFailure("evaluator report does not match the artifact hash")
    return report


def _score(task: Task, report: EvaluationReport) -> MetricValue:
    try:
        return report.metric(task.metric)
    except KeyError as exc:
        raise EvaluatorFailure(str(exc)) from None


def initial_state(task: Task, seed_artifact: Artifact) -> LoopState:
    """Score the seed on the validation tier and fetch its training diagnostics."""
    enforce_barrier(Requestor.REVIEWER, VisibilityTier.VALIDATION)
    score = _score(task, _evaluate(task, seed_artifact, VisibilityTier.VALIDATION))
    diag = _evaluate(task, seed_artifact, VisibilityTier.TRAIN_DIAGNOSTICS)
    return LoopState(seed_artifact, score, diag.diagnostics)


def _diagnostics_source(task: Task, artifact: Artifact):
    def fetch(tier):
        enforce_barrier(Requestor.INVESTIGATOR, tier)
        return _evaluate(task, artifact, tier).diagnostics

    return fetch


def _context(state, task, attempt_index, round_index, *, directive=None, history=None, feedback=None, investigator=0):
    enforce_barrier(Requestor.INVESTIGATOR, VisibilityTier.TRAIN_DIAGNOSTICS)
    return ProposalContext(
        incumbent=state.incumbent,
        incumbent_score=state.incumbent_score,
        diagnostics=state.diagnostics,
        attempt_index=attempt_index,
        directive=directive,
        history=history,
        prior_attempt_feedback=feedback,
        round_index=round_index,
        investigator=investigator,
        diagnostics_source=_diagnostics_source(task, state.incumbent),
    )


def _history(proposer: Proposer, ledger: Optional[RunLedger]):
    if proposer.history_depth is None or ledger is None:
        return None
    return tuple(opro_history_context(ledger, proposer.history_depth))


def _advance(state, task, accepted: Optional[Attempt], round_index: int) -> LoopState:
    if accepted is None:
        return replace(state, round_index=round_index, consecutive_skips=state.consecutive_skips + 1)
    diag = _evaluate(task, accepted.artifact, VisibilityTier.TRAIN_DIAGNOSTICS)
    return replace(
        state,
        incumbent=accepted.artifact,
        incumbent_score=accepted.score,
        diagnostics=diag.diagnostics,
        round_index=round_index,
        consecutive_skips=0,
    )


def run_round(
    state: LoopState,
    config: LoopConfig,
    proposer: Proposer,
    task: Task,
    ledger: Optional[RunLedger] = None,
    accept_stream=None,
) -> tuple[LoopState, RoundRecord]:
    """One sequential round (greedy or simulated annealing).

    ``accept_stream`` overrides the round's acceptance substream; anything with
    a ``uniform()`` method works, which is how tests inject draws.
    """
    if state.finalized:
        raise BarrierViolation("run is finalized; no further rounds")
    if config.strategy is Strategy.PARALLEL:
        raise ProtocolError("parallel strategy uses run_parallel_round")
    k = state.round_index + 1
    sa = config.strategy is Strategy.SIMULATED_ANNEALING
    temperature = temperature_at(config.schedule, k) if sa else None
    pstream = rng.proposer_stream(config.rng_seed, k)
    astream = accept_stream if accept_stream is not None else rng.acceptance_stream(config.rng_seed, k)
    history = _history(proposer, ledger)

    attempts: list[Attempt] = []
    draws: list[float] = []
    feedback = None
    accepted = None
    for a in range(1, config.attempt_limit + 1):
        ctx = _context(state, task, a, k, directive=config.directive, history=history, feedback=feedback)
        try:
            outcome = propose(proposer, ctx, pstream, task.parse)
        except ProposerUnavailable:
            raise
        except ProposerFailure as exc:
            attempts.append(Attempt(a, None, None, False, directive=config.directive, error=str(exc)))
            feedback = f"attempt {a} failed: {exc}"
            continue
        if isinstance(outcome, ParseFailure):
            attempts.append(Attempt(a, None, None, False, directive=config.directive, error=outcome.error))
            feedback = f"attempt {a} could not be parsed: {outcome.error}"
            continue
        enforce_barrier(Requestor.REVIEWER, VisibilityTier.VALIDATION)
        score = _score(task, _evaluate(task, outcome, VisibilityTier.VALIDATION))
        delta = score.value - state.incumbent_score.value
        if sa:
            draw = astream.uniform() if delta < 0 else 0.0
            decision = sa_decide(state.incumbent_score, score, temperature, draw)
            if decision.stochastic:
                draws.append(decision.rng_draw)
        else:
            decision = greedy_decide(state.incumbent_score, score, config.comparison_precision)
        attempt = Attempt(
            a, outcome, score, True,
            directive=config.directive,
            accept_probability=decision.accept_probability,
            draw=decision.rng_draw,
        )
        attempts.append(attempt)
        if decision.accept:
            accepted = attempt
            break
        feedback = f"attempt {a} rejected: score {score.value!r}, delta {delta!r} vs incumbent"

    new_state = _advance(state, task, accepted, k)
    record = RoundRecord(
        round_index=k,
        attempts=tuple(attempts),
        decision=RoundDecision.ACCEPTED if accepted else RoundDecision.SKIPPED,
        incumbent_score=new_state.incumbent_score,
        consecutive_skips=new_state.consecutive_skips,
        rng_check=rng.audit_word(config.rng_seed, k),
        directive=config.directive,
        temperature=temperature,
        rng_draws=tuple(draws),
        accepted_attempt=len(attempts) - 1 if accepted else None,
        accepted_artifact_hash=accepted.artifact.content_hash if accepted else None,
    )
    return new_state, record


def run_parallel_round(
    state: LoopState,
    config: LoopConfig,
    proposers: Sequence[Proposer],
    task: Task,
    ledger: Optional[RunLedger] = None,
) -> tuple[LoopState, RoundRecord]:
    """K investigators propose concurrently; the best is then held to greedy acceptance.

    Jobs run in threads and share nothing mutable; results are ordered by
    investigator index before any decision is made.
    """
    if state.finalized:
        raise BarrierViolation("run is finalized; no further rounds")
    if config.strategy is not Strategy.PARALLEL:
        raise ProtocolError("run_parallel_round needs the parallel strategy")
    K = config.investigators
    if len(proposers) != K:
        raise ConfigError(f"expected {K} proposers, got {len(proposers)}")
    k = state.round_index + 1

    def job(i: int) -> Attempt:
        directive = config.directives[i]
        ctx = _context(state, task, 1, k, directive=directive, history=_history(proposers[i], ledger), investigator=i)
        try:
            outcome = propose(proposers[i], ctx, rng.proposer_stream(config.rng_seed, k, i), task.parse)
        except ProposerUnavailable:
            raise
        except ProposerFailure as exc:
            return Attempt(1, None, None, False, investigator=i, directive=directive, error=str(exc))
        if isinstance(outcome, ParseFailure):
            return Attempt(1, None, None, False, investigator=i, directive=directive, error=outcome.error)
        enforce_barrier(Requestor.REVIEWER, VisibilityTier.VALIDATION)
        score = _score(task, _evaluate(task, outcome, VisibilityTier.VALIDATION))
        return Attempt(1, outcome, score, True, investigator=i, directive=directive)

    with ThreadPoolExecutor(max_workers=K) as pool:
        futures = [pool.submit(job, i) for i in range(K)]
        attempts = [f.result() for f in futures]

    survivors = [(a.investigator, a.score) for a in attempts if a.evaluated]
    selected = accepted = None
    if survivors:
        selected = select_best(survivors)
        decision = greedy_decide(state.incumbent_score, attempts[selected].score, config.comparison_precision)
        attempts[selected] = replace(attempts[selected], accept_probability=decision.accept_probability)
        if decision.accept:
            accepted = attempts[selected]

    new_state = _advance(state, task, accepted, k)
    record = RoundRecord(
        round_index=k,
        attempts=tuple(attempts),
        decision=RoundDecision.ACCEPTED if accepted else RoundDecision.SKIPPED,
        incumbent_score=new_state.incumbent_score,
        consecutive_skips=new_state.consecutive_skips,
        rng_check=rng.audit_word(config.rng_seed, k),
        accepted_attempt=selected if accepted else None,
        accepted_artifact_hash=accepted.artifact.content_hash if accepted else None,
        selected_investigator=selected,
    )
    return new_state, record


def should_stop(state: LoopState, config: LoopConfig) -> bool:
    return state.consecutive_skips >= config.skip_limit or state.round_index >= config.round_budget


def finalize(state: LoopState, config: LoopConfig, task: Task, ledger: RunLedger) -> tuple[LoopState, RunLedger]:
    """Evaluate the incumbent on the test tier, once, and seal the ledger."""
    if state.finalized or ledger.finalized:
        raise BarrierViolation("test tier already evaluated for this run")
    if not should_stop(state, config):
        raise ProtocolError("finalize called before the run reached a stopping condition")
    enforce_barrier(Requestor.REVIEWER, VisibilityTier.TEST, finalized=True)
    report = _evaluate(task, state.incumbent, VisibilityTier.TEST)
    return replace(state, finalized=True), ledger_finalize(ledger, report)


class Run:
    """Single-threaded driver owning the state and ledger of one run.

    Faults that end a run (barrier violations, evaluator failures, a proposer
    that cannot be started) are recorded in ``ledger.abort`` before being
    re-raised, so the partial ledger can still be written out.
    """

    def __init__(
        self,
        task: Task,
        proposers,
        config: LoopConfig,
        seed_artifact: Artifact,
        task_desc: Optional[dict] = None,
        proposer_desc=None,
    ):
        if isinstance(proposers, Proposer):
            proposers = [proposers] * config.investigators
        self.proposers = list(proposers)
        if len(self.proposers) != config.investigators:
            raise ConfigError(f"expected {config.investigators} proposers, got {len(self.proposers)}")
        self.task = task
        self.config = config
        if proposer_desc is None:
            descs = [p.describe() for p in self.proposers]
            proposer_desc = descs[0] if all(d == descs[0] for d in descs) else descs
        snapshot = config.to_dict()
        snapshot["task_id"] = task.task_id
        snapshot["proposer_id"] = (
            proposer_desc["kind"] if isinstance(proposer_desc, dict) else "+".join(d["kind"] for d in proposer_desc)
        )
        snapshot["task"] = task_desc if task_desc is not None else task.describe()
        snapshot["proposer"] = proposer_desc
        self.state = initial_state(task, seed_artifact)
        self.ledger = RunLedger(config=snapshot, seed_artifact=seed_artifact, seed_score=self.state.incumbent_score)

    def _abort(self, exc: Exception, kind: str):
        abort = {"kind": kind, "round_index": self.state.round_index + 1, "message": str(exc)}
        self.ledger = replace(self.ledger, abort=abort)

    def step(self) -> RoundRecord:
        try:
            if self.config.strategy is Strategy.PARALLEL:
                self.state, record = run_parallel_round(self.state, self.config, self.proposers, self.task, self.ledger)
            else:
                self.state, record = run_round(self.state, self.config, self.proposers[0], self.task, self.ledger)
        except BarrierViolation as exc:
            self._abort(exc, "barrier_violation")
            raise
        except (EvaluatorFailure, ProposerUnavailable) as exc:
            self._abort(exc, "evaluator_failure" if isinstance(exc, EvaluatorFailure) else "proposer_unavailable")
            raise
        self.ledger = ledger_append(self.ledger, record)
        return record

    def finalize(self) -> EvaluationReport:
        self.state, self.ledger = finalize(self.state, self.config, self.task, self.ledger)
        return self.ledger.final_report

    def run(self, finalize_: bool = True) -> RunLedger:
        while not should_stop(self.state, self.config):
            self.step()
        if finalize_:
            self.finalize()
        return self.ledger


def run_loop(task, proposers, config, seed_artifact, finalize_: bool = True, **kw) -> RunLedger:
    return Run(task, proposers, config, seed_artifact, **kw).run(finalize_)


def _first_difference(expected, actual, path=""):
    if type(expected) is not type(actual):
        return path or "<root>", expected, actual
    if isinstance(expected, dict):
        for key in list(expected) + [k for k in actual if k not in expected]:
            sub = f"{path}.{key}" if path else key
            if key not in expected or key not in actual:
                return sub, expected.get(key), actual.get(key)
            found = _first_difference(expected[key], actual[key], sub)
            if found:
                return found
        if list(expected) != list(actual):
            return path or "<root>", list(expected), list(actual)
        return None
    if isinstance(expected, list):
        for i, (e, a) in enumerate(zip(expected, actual)):
            found = _first_difference(e, a, f"{path}[{i}]")
            if found:
                return found
        if len(expected) != len(actual):
            return f"{path}.length", len(expected), len(actual)
        return None
    if expected != actual:
        return path or "<root>", expected, actual
    return None


def replay(ledger: RunLedger, task: Task, proposers) -> RunLedger:
    """Re-execute a run from its recorded config and seed; demand identical bytes."""
    config = LoopConfig.from_dict(ledger.config)
    run = Run(task, proposers, config, ledger.seed_artifact,
              task_desc=ledger.config.get("task"), proposer_desc=ledger.config.get("proposer"))
    try:
        while not should_stop(run.state, config):
            run.step()
            i = len(run.ledger.rounds) - 1
            if i >= len(ledger.rounds):
                raise ReplayMismatch("rounds.length", len(ledger.rounds), i + 1)
            found = _first_difference(
                round_to_dict(ledger.rounds[i]), round_to_dict(run.ledger.rounds[i]), f"rounds[{i}]"
            )
            if found:
                raise ReplayMismatch(*found)
        if ledger.finalized:
            run.finalize()
    except ProposaError as exc:
        if isinstance(exc, ReplayMismatch) or ledger.abort is None:
            raise
    if ledger.abort is not None and run.ledger.abort is None:
        raise ReplayMismatch("abort", ledger.abort, None)
    original, replayed = ledger_to_json(ledger), ledger_to_json(run.ledger)
    if original != replayed:
        found = _first_difference(ledger_to_dict(ledger), ledger_to_dict(run.ledger))
        raise ReplayMismatch(*(found or ("<bytes>", len(original), len(replayed))))
    return run.ledger
