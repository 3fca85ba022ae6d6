"""Propose/evaluate/accept optimization of text artifacts under information barriers."""

from .acceptance import TemperatureSchedule, calibrate_t0, greedy_decide, sa_accept_probability, sa_decide, temperature_at
from .core import Artifact, EvaluationReport, FormatTag, MetricValue, RunLedger, VisibilityTier, hash_artifact
from .errors import BarrierViolation, ConfigError, DomainError, EvaluatorFailure, ParseError, ProposaError
from .loop import LoopConfig, Run, Strategy, finalize, replay, run_loop

__version__ = "0.1.0"

__all__ = [
    "Artifact", "BarrierViolation", "ConfigError", "DomainError", "EvaluationReport", "EvaluatorFailure",
    "FormatTag", "LoopConfig", "MetricValue", "ParseError", "ProposaError", "Run", "RunLedger", "Strategy",
    "TemperatureSchedule", "VisibilityTier", "calibrate_t0", "finalize", "greedy_decide", "hash_artifact",
    "replay", "run_loop", "sa_accept_probability", "sa_decide", "temperature_at",
]
