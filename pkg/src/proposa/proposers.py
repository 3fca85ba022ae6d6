"""Proposal generators.

A proposer turns a :class:`ProposalContext` into raw text; the task's parser
then turns that text into an :class:`Artifact` (or a :class:`ParseFailure`).
Shipped kinds:

``scripted``        fixed bodies, for tests and dry runs
``random_perturb``  Gaussian steps on a numeric config, clamped to bounds
``opro_lite``       sees the top-k (config, score) history; delegates to an
                    external transport if one is configured, otherwise
                    perturbs the best config in the history
``external``        a subprocess or HTTP endpoint (e.g. an LLM agent)

Wire schema sent to external proposers (one JSON object)::

    {"format_tag", "incumbent_body", "incumbent_score", "diagnostics",
     "directive"?, "history"?, "attempt_index", "prior_attempt_feedback"?}

``incumbent_score`` is ``{"name", "value"}``; ``history`` is a list of
``{"summary", "score", "round"}`` sorted best first. The response is the raw
artifact text (stdout, or the HTTP response body).
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .barrier import Requestor, enforce_barrier
from .core import Artifact, EvaluationReport, FormatTag, MetricValue, RunLedger, VisibilityTier
from .errors import (
    ConfigError,
    DomainError,
    ParseError,
    ProposerFailure,
    ProposerUnavailable,
)
from .formats import dump_numeric_config, parse_numeric_config, summarize
from .rng import Stream

TIMEOUT_ENV = "PROPOSA_TIMEOUT_SECS"
DEFAULT_TIMEOUT = 3600.0


@dataclass(frozen=True)
class HistoryEntry:
    summary: str
    score: MetricValue
    round_index: int
    artifact_hash: int

    def to_wire(self) -> dict:
        return {"summary": self.summary, "score": self.score.value, "round": self.round_index}


@dataclass(frozen=True)
class ProposalContext:
    incumbent: Artifact
    incumbent_score: MetricValue
    diagnostics: str
    attempt_index: int = 1
    directive: Optional[str] = None
    history: Optional[tuple[HistoryEntry, ...]] = None
    prior_attempt_feedback: Optional[str] = None
    round_index: int = 1
    investigator: int = 0
    # Lets a proposer ask for more diagnostics; every request is barrier-checked.
    diagnostics_source: Optional[Callable[[VisibilityTier], str]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        if self.attempt_index < 1:
            raise ValueError("attempt_index must be >= 1")
        if self.history is not None:
            history = tuple(self.history)
            if any(a.score.value < b.score.value for a, b in zip(history, history[1:])):
                raise ValueError("history must be sorted best first")
            object.__setattr__(self, "history", history)

    @classmethod
    def build(cls, incumbent: Artifact, incumbent_score: MetricValue, report: EvaluationReport, **kw):
        """Build from a diagnostics report, refusing anything but training diagnostics."""
        enforce_barrier(Requestor.INVESTIGATOR, report.tier)
        return cls(incumbent, incumbent_score, report.diagnostics, **kw)

    def request_diagnostics(self, tier: VisibilityTier) -> str:
        enforce_barrier(Requestor.INVESTIGATOR, tier)
        if self.diagnostics_source is None:
            return self.diagnostics
        return self.diagnostics_source(VisibilityTier(tier))

    def to_wire(self) -> dict:
        msg = {
            "format_tag": self.incumbent.format_tag.value,
            "incumbent_body": self.incumbent.body,
            "incumbent_score": {"name": self.incumbent_score.name, "value": self.incumbent_score.value},
            "diagnostics": self.diagnostics,
            "attempt_index": self.attempt_index,
        }
        if self.directive is not None:
            msg["directive"] = self.directive
        if self.history is not None:
            msg["history"] = [h.to_wire() for h in self.history]
        if self.prior_attempt_feedback is not None:
            msg["prior_attempt_feedback"] = self.prior_attempt_feedback
        return msg


@dataclass(frozen=True)
class ParseFailure:
    raw: str
    error: str


class Proposer:
    kind = "abstract"
    history_depth: Optional[int] = None

    def generate(self, context: ProposalContext, stream: Stream) -> str:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}

    @property
    def proposer_id(self) -> str:
        return self.kind


def propose(
    proposer: Proposer,
    context: ProposalContext,
    stream: Stream,
    parser: Callable[[str], Artifact],
) -> Union[Artifact, ParseFailure]:
    """Generate raw text and run it through the task parser.

    Transport faults propagate as ProposerFailure; malformed output comes back
    as a ParseFailure value.
    """
    raw = proposer.generate(context, stream)
    if not isinstance(raw, str):
        return ParseFailure(repr(raw), "proposer returned non-text output")
    try:
        return parser(raw)
    except ParseError as exc:
        return ParseFailure(raw, "; ".join(exc.errors))
    except ValueError as exc:
        return ParseFailure(raw, str(exc))


# -- scripted ----------------------------------------------------------------


class ScriptedProposer(Proposer):
    """Replays fixed bodies.

    ``script`` is either a flat list (the same list every round) or a list of
    per-round lists. Within a round, entry ``attempt_index - 1 + investigator``
    is returned; indices past the end clamp to the last entry, and rounds past
    the end reuse the last round.
    """

    kind = "scripted"

    def __init__(self, script: Sequence):
        if not script:
            raise ConfigError("scripted proposer needs a non-empty script")
        if all(isinstance(s, str) for s in script):
            self.rounds = [list(script)]
            self.per_round = False
        else:
            self.rounds = [list(r) if not isinstance(r, str) else [r] for r in script]
            self.per_round = True
        if any(not r for r in self.rounds):
            raise ConfigError("scripted proposer rounds must be non-empty")

    def generate(self, context, stream):
        entries = self.rounds[min(context.round_index, len(self.rounds)) - 1] if self.per_round else self.rounds[0]
        i = context.attempt_index - 1 + context.investigator
        return entries[min(i, len(entries) - 1)]

    def describe(self):
        return {"kind": self.kind, "script": self.rounds if self.per_round else self.rounds[0]}


# -- random perturbation -----------------------------------------------------


def random_perturb(
    config: dict,
    steps: dict,
    bounds: dict,
    stream: Stream,
    integer_keys: Sequence[str] = (),
) -> dict:
    """Independent Gaussian step per key, in sorted key order, then clamp.

    Integer keys (JSON ints in ``config`` or listed in ``integer_keys``) are
    rounded to the nearest integer inside their bounds. One normal is drawn per
    key even when its step is zero, so the stream layout never depends on the
    step sizes.
    """
    out = {}
    for key in sorted(config):
        if key not in bounds:
            raise ConfigError(f"no bounds for key {key!r}")
        if key not in steps:
            raise ConfigError(f"no step size for key {key!r}")
        lo, hi = bounds[key]
        if lo > hi:
            raise ConfigError(f"bounds for {key!r} are inverted")
        g = stream.normal()
        value = min(hi, max(lo, config[key] + steps[key] * g))
        if key in integer_keys or (isinstance(config[key], int) and not isinstance(config[key], bool)):
            r = int(math.floor(value + 0.5))
            if r > hi:
                r = math.floor(hi)
            if r < lo:
                r = math.ceil(lo)
            value = r
        out[key] = value
    return out


class RandomPerturbProposer(Proposer):
    kind = "random_perturb"

    def __init__(self, steps: dict, bounds: dict, integer_keys: Sequence[str] = ()):
        self.steps = {k: float(v) for k, v in steps.items()}
        self.bounds = {k: (float(v[0]), float(v[1])) for k, v in bounds.items()}
        self.integer_keys = tuple(integer_keys)

    def _perturb(self, body: str, stream: Stream) -> str:
        config = parse_numeric_config(body)
        return dump_numeric_config(random_perturb(config, self.steps, self.bounds, stream, self.integer_keys))

    def generate(self, context, stream):
        if context.incumbent.format_tag is not FormatTag.NUMERIC_CONFIG:
            raise ConfigError("random_perturb only applies to numeric_config artifacts")
        return self._perturb(context.incumbent.body, stream)

    def describe(self):
        return {
            "kind": self.kind,
            "steps": self.steps,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "integer_keys": list(self.integer_keys),
        }


# -- history (OPRO-lite) ------------------------------------------------------


def history_from_evaluations(evaluations, k: int = 10) -> list[HistoryEntry]:
    """Top-``k`` distinct artifacts by score.

    ``evaluations`` is an iterable of ``(artifact, score, round_index)`` in the
    order they were evaluated. Duplicates (by hash) keep their first
    occurrence; ties in score go to the earlier round, then evaluation order.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    seen = {}
    for order, (artifact, score, round_index) in enumerate(evaluations):
        if artifact.content_hash not in seen:
            seen[artifact.content_hash] = (artifact, score, round_index, order)
    if not seen:
        raise DomainError("no evaluated artifacts to build a history from")
    ranked = sorted(seen.values(), key=lambda e: (-e[1].value, e[2], e[3]))
    return [HistoryEntry(summarize(a), s, r, a.content_hash) for a, s, r, _ in ranked[:k]]


def ledger_evaluations(ledger: RunLedger):
    yield ledger.seed_artifact, ledger.seed_score, 0
    for record in ledger.rounds:
        for a in record.attempts:
            if a.score is not None:
                yield a.artifact, a.score, record.round_index


def opro_history_context(ledger: RunLedger, k: int = 10) -> list[HistoryEntry]:
    return history_from_evaluations(ledger_evaluations(ledger), k)


class OproLiteProposer(Proposer):
    kind = "opro_lite"

    def __init__(self, k: int = 10, transport=None, steps=None, bounds=None, integer_keys=()):
        self.history_depth = int(k)
        self.transport = transport
        self.fallback = None
        if transport is None:
            if steps is None or bounds is None:
                raise ConfigError("opro_lite needs either a transport or steps+bounds")
            self.fallback = RandomPerturbProposer(steps, bounds, integer_keys)

    def generate(self, context, stream):
        if self.transport is not None:
            return external_propose(self.transport, context)
        if not context.history:
            return self.fallback.generate(context, stream)
        best = context.history[0].summary
        return self.fallback._perturb(best, stream)

    def describe(self):
        d = {"kind": self.kind, "k": self.history_depth}
        if self.transport is not None:
            d["transport"] = self.transport.describe()
        else:
            d.update({key: v for key, v in self.fallback.describe().items() if key != "kind"})
        return d


# -- external transports -----------------------------------------------------


def _timeout(default: float) -> float:
    env = os.environ.get(TIMEOUT_ENV)
    if env:
        try:
            return float(env)
        except ValueError:
            raise ConfigError(f"{TIMEOUT_ENV} must be a number, got {env!r}") from None
    return default


@dataclass(frozen=True)
class SubprocessTransport:
    command: tuple[str, ...]
    timeout: float = DEFAULT_TIMEOUT
    cwd: Optional[str] = None

    def send(self, payload: str) -> str:
        try:
            proc = subprocess.run(
                list(self.command),
                input=payload,
                capture_output=True,
                text=True,
                timeout=_timeout(self.timeout),
                cwd=self.cwd,
            )
        except FileNotFoundError as exc:
            raise ProposerUnavailable(f"proposer command not found: {self.command[0]}") from exc
        except PermissionError as exc:
            raise ProposerUnavailable(f"proposer command not executable: {self.command[0]}") from exc
        except subprocess.TimeoutExpired:
            raise ProposerFailure(f"proposer timed out after {_timeout(self.timeout)}s") from None
        if proc.returncode != 0:
            raise ProposerFailure(f"proposer exited {proc.returncode}: {proc.stderr.strip()[-2000:]}")
        return proc.stdout

    def describe(self):
        return {"type": "subprocess", "command": list(self.command), "timeout": self.timeout}


@dataclass(frozen=True)
class HttpTransport:
    url: str
    timeout: float = DEFAULT_TIMEOUT

    def send(self, payload: str) -> str:
        req = urllib.request.Request(
            self.url, data=payload.encode("utf-8"), headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=_timeout(self.timeout)) as resp:
                return resp.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            raise ProposerFailure(f"proposer endpoint returned {exc.code}") from None
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise ProposerFailure(f"proposer endpoint failed: {exc}") from None

    def describe(self):
        return {"type": "http", "url": self.url, "timeout": self.timeout}


def external_propose(transport, context: ProposalContext) -> str:
    return transport.send(json.dumps(context.to_wire(), ensure_ascii=False))


class ExternalProposer(Proposer):
    kind = "external"

    def __init__(self, transport, history_depth: Optional[int] = None):
        self.transport = transport
        self.history_depth = history_depth

    def generate(self, context, stream):
        return external_propose(self.transport, context)

    def describe(self):
        d = {"kind": self.kind, "transport": self.transport.describe()}
        if self.history_depth is not None:
            d["history_depth"] = self.history_depth
        return d


def build_transport(desc: dict):
    if not isinstance(desc, dict):
        raise ConfigError("proposer.transport must be an object")
    kind = desc.get("type", "subprocess")
    timeout = float(desc.get("timeout", DEFAULT_TIMEOUT))
    if kind == "subprocess":
        cmd = desc.get("command")
        if isinstance(cmd, str):
            cmd = [cmd]
        if not cmd:
            raise ConfigError("proposer.transport.command is required")
        return SubprocessTransport(tuple(cmd), timeout, desc.get("cwd"))
    if kind == "http":
        if not desc.get("url"):
            raise ConfigError("proposer.transport.url is required")
        return HttpTransport(desc["url"], timeout)
    raise ConfigError(f"proposer.transport.type: unknown transport {kind!r}")


def build_proposer(desc: dict) -> Proposer:
    """Construct a proposer from its JSON descriptor (the ``proposer`` config key)."""
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ConfigError("proposer: descriptor needs a 'kind'")
    kind = desc["kind"]
    try:
        if kind == "scripted":
            return ScriptedProposer(desc["script"])
        if kind == "random_perturb":
            return RandomPerturbProposer(desc["steps"], desc["bounds"], desc.get("integer_keys", ()))
        if kind == "opro_lite":
            transport = build_transport(desc["transport"]) if "transport" in desc else None
            return OproLiteProposer(desc.get("k", 10), transport, desc.get("steps"), desc.get("bounds"),
                                    desc.get("integer_keys", ()))
        if kind == "external":
            return ExternalProposer(build_transport(desc.get("transport", {})), desc.get("history_depth"))
    except KeyError as exc:
        raise ConfigError(f"proposer.{exc.args[0]}: missing field for kind {kind!r}") from None
    raise ConfigError(f"proposer.kind: unknown kind {kind!r}")

