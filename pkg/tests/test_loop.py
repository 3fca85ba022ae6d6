import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RecordingProposer, score_artifact, score_body
from proposa.acceptance import TemperatureSchedule, temperature_at
from proposa.core import RoundDecision, VisibilityTier, ledger_to_json
from proposa.errors import (
    BarrierViolation,
    ConfigError,
    EvaluatorFailure,
    ProposerFailure,
    ProposerUnavailable,
    ProtocolError,
    ReplayMismatch,
)
from proposa.loop import LoopConfig, Run, Strategy, finalize, initial_state, replay, run_loop, run_round
from proposa.proposers import Proposer, ScriptedProposer
from proposa.tasks import ScoreTableTask

SCHED = TemperatureSchedule(0.054, 0.7)


def greedy(**kw):
    return LoopConfig(Strategy.GREEDY, kw.pop("round_budget", 10), **kw)


def sa(**kw):
    return LoopConfig(Strategy.SIMULATED_ANNEALING, kw.pop("round_budget", 10), schedule=SCHED, **kw)


def parallel(k=3, **kw):
    return LoopConfig(Strategy.PARALLEL, kw.pop("round_budget", 5), investigators=k,
                      directives=[f"d{i}" for i in range(k)], **kw)


def test_improving_script_accepts_every_round():
    script = [[score_body(0.5 + 0.01 * r)] for r in range(1, 6)]
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), greedy(round_budget=5), score_artifact(0.5))
    assert [r.decision for r in ledger.rounds] == [RoundDecision.ACCEPTED] * 5
    assert ledger.final_score.value == pytest.approx(0.55)
    assert ledger.evaluations == 5 and ledger.finalized


def test_all_regression_stops_after_two_skips():
    ledger = run_loop(ScoreTableTask(), ScriptedProposer([score_body(0.4)]), greedy(), score_artifact(0.5))
    assert [r.decision for r in ledger.rounds] == [RoundDecision.SKIPPED] * 2
    assert ledger.attempts == 6 and [r.consecutive_skips for r in ledger.rounds] == [1, 2]


def test_accept_resets_skip_counter():
    script = [[score_body(0.4)] * 3, [score_body(0.4), score_body(0.6)], [score_body(0.1)]]
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), greedy(), score_artifact(0.5))
    assert [r.consecutive_skips for r in ledger.rounds] == [1, 0, 1, 2]
    assert ledger.rounds[1].accepted_attempt == 1


def test_tie_is_not_an_improvement():
    ledger = run_loop(ScoreTableTask(), ScriptedProposer([score_body(0.5, tag=1)]), greedy(), score_artifact(0.5))
    assert all(r.decision is RoundDecision.SKIPPED for r in ledger.rounds)


def test_parse_failures_consume_attempts_and_feed_back():
    rec = RecordingProposer(ScriptedProposer(["garbage", '{"nope": 1}', score_body(0.9)]))
    state, record = run_round(initial_state(ScoreTableTask(), score_artifact(0.5)), greedy(), rec, ScoreTableTask())
    assert [a.parse_ok for a in record.attempts] == [False, False, True]
    assert record.evaluations == 1 and record.decision is RoundDecision.ACCEPTED
    assert rec.contexts[0].prior_attempt_feedback is None
    assert "could not be parsed" in rec.contexts[1].prior_attempt_feedback
    assert state.incumbent_score.value == 0.9


class Flaky(Proposer):
    kind = "flaky"

    def __init__(self, exc):
        self.exc = exc

    def generate(self, context, stream):
        if context.attempt_index == 1:
            raise self.exc
        return score_body(0.9)


def test_transport_failure_consumes_attempt():
    state = initial_state(ScoreTableTask(), score_artifact(0.5))
    _, record = run_round(state, greedy(), Flaky(ProposerFailure("timeout")), ScoreTableTask())
    assert record.attempts[0].error == "timeout" and record.decision is RoundDecision.ACCEPTED


def test_unavailable_proposer_aborts_run():
    run = Run(ScoreTableTask(), Flaky(ProposerUnavailable("no such command")), greedy(), score_artifact(0.5))
    with pytest.raises(ProposerUnavailable):
        run.run()
    assert run.ledger.abort["kind"] == "proposer_unavailable"


class BrokenTask(ScoreTableTask):
    def evaluate(self, artifact, tier):
        if json.loads(artifact.body)["score"] > 0.6:
            raise RuntimeError("GPU on fire")
        return super().evaluate(artifact, tier)


def test_evaluator_crash_aborts_run():
    run = Run(BrokenTask(), ScriptedProposer([score_body(0.9)]), greedy(), score_artifact(0.5))
    with pytest.raises(EvaluatorFailure):
        run.run()
    assert run.ledger.abort["kind"] == "evaluator_failure" and not run.ledger.rounds


class FixedDraws:
    def __init__(self, draws):
        self.draws = list(draws)
        self.used = 0

    def uniform(self):
        self.used += 1
        return self.draws.pop(0)


def test_sa_draws_only_for_regressions():
    task = ScoreTableTask()
    state = initial_state(task, score_artifact(0.5))
    script = ScriptedProposer([score_body(0.49), score_body(0.48), score_body(0.6)])
    draws = FixedDraws([0.99, 0.99])
    _, record = run_round(state, sa(), script, task, accept_stream=draws)
    assert draws.used == 2 and record.rng_draws == (0.99, 0.99)
    assert record.attempts[2].draw is None and record.decision is RoundDecision.ACCEPTED
    assert record.temperature == SCHED.t0


def test_sa_accepts_regression_when_draw_is_low():
    task = ScoreTableTask()
    state, record = run_round(initial_state(task, score_artifact(0.5)), sa(), ScriptedProposer([score_body(0.49)]),
                              task, accept_stream=FixedDraws([0.1]))
    assert record.decision is RoundDecision.ACCEPTED and state.incumbent_score.value == 0.49
    assert record.attempts[0].accept_probability == pytest.approx(0.8309, abs=1e-4)


def test_skipped_rounds_still_cool():
    ledger = run_loop(ScoreTableTask(), ScriptedProposer([[score_body(0.6)], [score_body(0.1)], [score_body(0.1)],
                                                           [score_body(0.1)]]),
                      replace(sa(), skip_limit=3), score_artifact(0.5))
    assert [r.temperature for r in ledger.rounds] == [temperature_at(SCHED, k) for k in range(1, len(ledger.rounds) + 1)]


def test_parallel_counts_k_evaluations_and_picks_lowest_tied_index():
    script = [[score_body(0.6, tag=1), score_body(0.7, tag=2), score_body(0.7, tag=3)],
              [score_body(0.1), score_body(0.2), score_body(0.3)]]
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), parallel(), score_artifact(0.5))
    first = ledger.rounds[0]
    assert first.evaluations == 3 and first.selected_investigator == 1
    assert first.accepted_artifact.body == score_body(0.7, tag=2)
    assert ledger.rounds[1].decision is RoundDecision.SKIPPED
    assert ledger.rounds[1].selected_investigator == 2
    assert [a.directive for a in first.attempts] == ["d0", "d1", "d2"]


def test_finalize_twice_is_a_barrier_violation():
    run = Run(ScoreTableTask(), ScriptedProposer([score_body(0.4)]), greedy(), score_artifact(0.5, test=0.45))
    ledger = run.run()
    assert ledger.final_report.primary.value == 0.45
    with pytest.raises(BarrierViolation):
        run.finalize()
    with pytest.raises(BarrierViolation):
        run.step()


def test_finalize_before_stop_is_a_protocol_error():
    run = Run(ScoreTableTask(), ScriptedProposer([score_body(0.4)]), greedy(), score_artifact(0.5))
    with pytest.raises(ProtocolError):
        finalize(run.state, run.config, run.task, run.ledger)


def test_config_validation_names_fields():
    with pytest.raises(ConfigError, match="schedule"):
        LoopConfig.from_dict({"strategy": "simulated_annealing", "round_budget": 5})
    with pytest.raises(ConfigError, match="directives"):
        LoopConfig(Strategy.PARALLEL, 5, investigators=3)
    with pytest.raises(ConfigError, match="round_budget"):
        LoopConfig(Strategy.GREEDY, 0)
    with pytest.raises(ConfigError, match="strategy"):
        LoopConfig.from_dict({"strategy": "random_walk", "round_budget": 5})


SENTINEL = "SENTINEL-7f3a"


def test_sentinel_never_reaches_proposer():
    task = ScoreTableTask(diagnostics={"validation": f"val {SENTINEL}", "test": f"test {SENTINEL}",
                                       "train_diagnostics": "train only"})
    rec = RecordingProposer(ScriptedProposer([[score_body(0.6)], [score_body(0.4)], [score_body(0.7)]]))
    ledger = run_loop(task, rec, greedy(), score_artifact(0.5))
    assert rec.contexts and ledger.finalized
    for c in rec.contexts:
        assert SENTINEL not in json.dumps(c.to_wire()) and SENTINEL not in repr(c)
        assert c.request_diagnostics(VisibilityTier.TRAIN_DIAGNOSTICS) == "train only"
        with pytest.raises(BarrierViolation):
            c.request_diagnostics(VisibilityTier.VALIDATION)


@pytest.mark.parametrize("config", [greedy(rng_seed=3), sa(rng_seed=3), parallel(rng_seed=3)], ids=["greedy", "sa", "parallel"])
def test_replay_is_byte_identical(config):
    script = [[score_body(0.5 + 0.01 * ((r * 7 + i) % 5 - 2)) for i in range(3)] for r in range(10)]
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), config, score_artifact(0.5))
    again = replay(ledger, ScoreTableTask(), ScriptedProposer(script))
    assert ledger_to_json(again) == ledger_to_json(ledger)


def test_replay_detects_tampered_seed():
    script = [score_body(0.49), score_body(0.48)]
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), sa(rng_seed=3), score_artifact(0.5))
    tampered = replace(ledger, config={**ledger.config, "rng_seed": 4})
    with pytest.raises(ReplayMismatch) as info:
        replay(tampered, ScoreTableTask(), ScriptedProposer(script))
    assert info.value.path.startswith("rounds[0]")


def test_replay_detects_tampered_score():
    script = [score_body(0.6), score_body(0.4)]
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), greedy(), score_artifact(0.5))
    r0 = ledger.rounds[0]
    bad = replace(r0, incumbent_score=replace(r0.incumbent_score, value=0.61))
    tampered = replace(ledger, rounds=(bad,) + ledger.rounds[1:])
    with pytest.raises(ReplayMismatch, match=r"rounds\[0\]"):
        replay(tampered, ScoreTableTask(), ScriptedProposer(script))


round_scripts = st.lists(st.lists(st.integers(0, 100).map(lambda v: score_body(v / 100)), min_size=3, max_size=3),
                         min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(round_scripts, st.sampled_from(["greedy", "simulated_annealing"]), st.integers(0, 2**32))
def test_ledger_invariants(script, strategy, seed):
    config = LoopConfig(strategy, 8, schedule=SCHED, rng_seed=seed)
    ledger = run_loop(ScoreTableTask(), ScriptedProposer(script), config, score_artifact(0.5))
    prev, skips = ledger.seed_score.value, 0
    for k, r in enumerate(ledger.rounds, start=1):
        assert r.round_index == k and 1 <= len(r.attempts) <= 3
        skips = skips + 1 if r.decision is RoundDecision.SKIPPED else 0
        assert r.consecutive_skips == skips
        if r.decision is RoundDecision.ACCEPTED:
            assert r.accepted_attempt == len(r.attempts) - 1
            if strategy == "greedy":
                assert r.incumbent_score.value > prev
        else:
            assert len(r.attempts) == 3 and r.incumbent_score.value == prev
        assert len(r.rng_draws) == sum(1 for a in r.attempts if a.draw is not None)
        prev = r.incumbent_score.value
    assert skips >= 2 or len(ledger.rounds) == 8
    assert ledger.evaluations == sum(len(r.attempts) for r in ledger.rounds)
