"""Domain types shared by every module, plus the persistent run ledger.

All types are frozen dataclasses holding tuples, so they can be shared freely
between threads. The ledger is only ever "mutated" by building a new one
with :func:`ledger_append`.

Ledger files are a single UTF-8 JSON document (``*.ledger.json``) whose keys
appear in a fixed order (see ``ledger_to_dict``). Hashes are
written as 16 lowercase hex digits.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from .errors import BarrierViolation, InvalidArtifactError, ProtocolError

SCHEMA_VERSION = 1
LEDGER_SUFFIX = ".ledger.json"

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def hash_artifact(body: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``body``."""
    if not body:
        raise InvalidArtifactError("artifact body must be non-empty")
    h = FNV64_OFFSET
    for byte in body.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def format_hash(h: int) -> str:
    return f"{h:016x}"


def parse_hash(text: str) -> int:
    if len(text) != 16:
        raise ValueError(f"bad hash {text!r}")
    return int(text, 16)


class FormatTag(str, Enum):
    RULE_YAML = "rule_yaml"
    NUMERIC_CONFIG = "numeric_config"
    OPAQUE_TEXT = "opaque_text"


class VisibilityTier(str, Enum):
    TRAIN_DIAGNOSTICS = "train_diagnostics"
    VALIDATION = "validation"
    TEST = "test"


class RoundDecision(str, Enum):
    ACCEPTED = "accepted"
    # reserved: the loop only ever emits accepted or skipped
    REJECTED = "rejected"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class Artifact:
    format_tag: FormatTag
    body: str
    content_hash: int = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "format_tag", FormatTag(self.format_tag))
        object.__setattr__(self, "content_hash", hash_artifact(self.body))

    @property
    def hash_hex(self) -> str:
        return format_hash(self.content_hash)


@dataclass(frozen=True)
class MetricValue:
    """A metric, always stored higher-is-better."""

    name: str
    value: float

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value):
            raise ValueError(f"metric {self.name!r} is not finite: {self.value!r}")
        object.__setattr__(self, "value", value)

    @classmethod
    def ingest(cls, name: str, value: float, minimize: bool = False) -> "MetricValue":
        return cls(name, -value if minimize else value)


@dataclass(frozen=True)
class EvaluationReport:
    tier: VisibilityTier
    metrics: tuple[MetricValue, ...]
    diagnostics: str
    artifact_hash: int

    def __post_init__(self):
        object.__setattr__(self, "tier", VisibilityTier(self.tier))
        object.__setattr__(self, "metrics", tuple(self.metrics))

    def metric(self, name: str) -> MetricValue:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(f"report has no metric {name!r}")

    @property
    def primary(self) -> MetricValue:
        return self.metrics[0]


@dataclass(frozen=True)
class Attempt:
    index: int
    artifact: Optional[Artifact]
    score: Optional[MetricValue]
    parse_ok: bool
    investigator: int = 0
    directive: Optional[str] = None
    error: Optional[str] = None
    accept_probability: Optional[float] = None
    draw: Optional[float] = None

    @property
    def evaluated(self) -> bool:
        return self.score is not None


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    attempts: tuple[Attempt, ...]
    decision: RoundDecision
    incumbent_score: MetricValue
    consecutive_skips: int
    rng_check: str
    directive: Optional[str] = None
    temperature: Optional[float] = None
    rng_draws: tuple[float, ...] = ()
    accepted_attempt: Optional[int] = None
    accepted_artifact_hash: Optional[int] = None
    selected_investigator: Optional[int] = None

    def __post_init__(self):
        if self.round_index < 1:
            raise ValueError("round_index must be >= 1")
        if not self.attempts:
            raise ValueError("a round needs at least one attempt")
        if self.temperature is not None and not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if any(not 0.0 <= d < 1.0 for d in self.rng_draws):
            raise ValueError("rng draws must lie in [0, 1)")
        object.__setattr__(self, "decision", RoundDecision(self.decision))
        object.__setattr__(self, "attempts", tuple(self.attempts))
        object.__setattr__(self, "rng_draws", tuple(self.rng_draws))

    @property
    def evaluations(self) -> int:
        return sum(1 for a in self.attempts if a.evaluated)

    @property
    def accepted_artifact(self) -> Optional[Artifact]:
        if self.accepted_attempt is None:
            return None
        return self.attempts[self.accepted_attempt].artifact


@dataclass(frozen=True)
class RunLedger:
    config: dict
    seed_artifact: Artifact
    seed_score: MetricValue
    rounds: tuple[RoundRecord, ...] = ()
    final_report: Optional[EvaluationReport] = None
    abort: Optional[dict] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        if self.final_report is not None and self.final_report.tier is not VisibilityTier.TEST:
            raise ValueError("final_report must be test tier")

    @property
    def finalized(self) -> bool:
        return self.final_report is not None

    @property
    def evaluations(self) -> int:
        """Acceptance-tier evaluations made by rounds (the seed is not counted)."""
        return sum(r.evaluations for r in self.rounds)

    @property
    def attempts(self) -> int:
        return sum(len(r.attempts) for r in self.rounds)

    @property
    def best_score(self) -> MetricValue:
        best = self.seed_score
        for r in self.rounds:
            for a in r.attempts:
                if a.score is not None and a.score.value > best.value:
                    best = a.score
        return best

    @property
    def final_score(self) -> MetricValue:
        return self.rounds[-1].incumbent_score if self.rounds else self.seed_score


def ledger_append(ledger: RunLedger, record: RoundRecord) -> RunLedger:
    if ledger.finalized:
        raise BarrierViolation("cannot append rounds to a finalized ledger")
    expected = len(ledger.rounds) + 1
    if record.round_index != expected:
        raise ProtocolError(f"expected round {expected}, got {record.round_index}")
    return replace(ledger, rounds=ledger.rounds + (record,))


def ledger_finalize(ledger: RunLedger, report: EvaluationReport) -> RunLedger:
    if ledger.finalized:
        raise BarrierViolation("ledger already holds a test report")
    if report.tier is not VisibilityTier.TEST:
        raise ProtocolError("only a test-tier report can seal a ledger")
    return replace(ledger, final_report=report)


# -- serialization ---------------------------------------------------------


def _artifact_to_dict(a: Optional[Artifact]) -> Optional[dict]:
    if a is None:
        return None
    return {"format_tag": a.format_tag.value, "hash": a.hash_hex, "body": a.body}


def _artifact_from_dict(d: Optional[dict]) -> Optional[Artifact]:
    if d is None:
        return None
    a = Artifact(FormatTag(d["format_tag"]), d["body"])
    if d.get("hash") is not None and parse_hash(d["hash"]) != a.content_hash:
        raise InvalidArtifactError(f"hash mismatch for stored artifact {d['hash']}")
    return a


def _metric_to_dict(m: Optional[MetricValue]) -> Optional[dict]:
    return None if m is None else {"name": m.name, "value": m.value}


def _metric_from_dict(d: Optional[dict]) -> Optional[MetricValue]:
    return None if d is None else MetricValue(d["name"], d["value"])


def _report_to_dict(r: Optional[EvaluationReport]) -> Optional[dict]:
    if r is None:
        return None
    return {
        "tier": r.tier.value,
        "artifact_hash": format_hash(r.artifact_hash),
        "metrics": [_metric_to_dict(m) for m in r.metrics],
        "diagnostics": r.diagnostics,
    }


def _report_from_dict(d: Optional[dict]) -> Optional[EvaluationReport]:
    if d is None:
        return None
    return EvaluationReport(
        tier=VisibilityTier(d["tier"]),
        metrics=tuple(_metric_from_dict(m) for m in d["metrics"]),
        diagnostics=d["diagnostics"],
        artifact_hash=parse_hash(d["artifact_hash"]),
    )


def _attempt_to_dict(a: Attempt) -> dict:
    return {
        "index": a.index,
        "investigator": a.investigator,
        "directive": a.directive,
        "parse_ok": a.parse_ok,
        "error": a.error,
        "score": _metric_to_dict(a.score),
        "accept_probability": a.accept_probability,
        "draw": a.draw,
        "artifact": _artifact_to_dict(a.artifact),
    }


def _attempt_from_dict(d: dict) -> Attempt:
    return Attempt(
        index=d["index"],
        investigator=d["investigator"],
        directive=d["directive"],
        parse_ok=d["parse_ok"],
        error=d["error"],
        score=_metric_from_dict(d["score"]),
        accept_probability=d["accept_probability"],
        draw=d["draw"],
        artifact=_artifact_from_dict(d["artifact"]),
    )


def round_to_dict(r: RoundRecord) -> dict:
    return {
        "round_index": r.round_index,
        "directive": r.directive,
        "temperature": r.temperature,
        "decision": r.decision.value,
        "accepted_attempt": r.accepted_attempt,
        "accepted_artifact_hash": (
            None if r.accepted_artifact_hash is None else format_hash(r.accepted_artifact_hash)
        ),
        "selected_investigator": r.selected_investigator,
        "incumbent_score": _metric_to_dict(r.incumbent_score),
        "consecutive_skips": r.consecutive_skips,
        "rng_check": r.rng_check,
        "rng_draws": list(r.rng_draws),
        "attempts": [_attempt_to_dict(a) for a in r.attempts],
    }


def _round_from_dict(d: dict) -> RoundRecord:
    h = d["accepted_artifact_hash"]
    return RoundRecord(
        round_index=d["round_index"],
        directive=d["directive"],
        temperature=d["temperature"],
        decision=RoundDecision(d["decision"]),
        accepted_attempt=d["accepted_attempt"],
        accepted_artifact_hash=None if h is None else parse_hash(h),
        selected_investigator=d["selected_investigator"],
        incumbent_score=_metric_from_dict(d["incumbent_score"]),
        consecutive_skips=d["consecutive_skips"],
        rng_check=d["rng_check"],
        rng_draws=tuple(d["rng_draws"]),
        attempts=tuple(_attempt_from_dict(a) for a in d["attempts"]),
    )


def ledger_to_dict(ledger: RunLedger) -> dict:
    return {
        "schema_version": ledger.schema_version,
        "config": ledger.config,
        "seed_artifact": _artifact_to_dict(ledger.seed_artifact),
        "seed_score": _metric_to_dict(ledger.seed_score),
        "rounds": [round_to_dict(r) for r in ledger.rounds],
        "abort": ledger.abort,
        "final_report": _report_to_dict(ledger.final_report),
    }


def ledger_from_dict(d: dict) -> RunLedger:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ProtocolError(f"unsupported ledger schema_version {version!r}")
    return RunLedger(
        schema_version=version,
        config=d["config"],
        seed_artifact=_artifact_from_dict(d["seed_artifact"]),
        seed_score=_metric_from_dict(d["seed_score"]),
        rounds=tuple(_round_from_dict(r) for r in d["rounds"]),
        abort=d["abort"],
        final_report=_report_from_dict(d["final_report"]),
    )


def ledger_to_json(ledger: RunLedger) -> str:
    return json.dumps(ledger_to_dict(ledger), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def ledger_from_json(text: str) -> RunLedger:
    return ledger_from_dict(json.loads(text))


def write_ledger(path: str | os.PathLike, ledger: RunLedger) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=LEDGER_SUFFIX)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(ledger_to_json(ledger))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_ledger(path: str | os.PathLike) -> RunLedger:
    return ledger_from_json(Path(path).read_text(encoding="utf-8"))


def json_canonical(obj: Any) -> str:
    """Compact JSON used wherever bytes must be stable (hashing, wire format)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
