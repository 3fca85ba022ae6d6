"""Task backends: the parser (text -> Artifact) plus the tiered evaluator.

``evaluate(artifact, tier)`` returns an :class:`EvaluationReport` whose first
metric is the task's acceptance metric. Tiers:

* ``train_diagnostics`` feeds proposers
* ``validation`` is the acceptance score used by the reviewer
* ``test`` is called exactly once, by ``loop.finalize``

External evaluator protocol (``kind: external``): the command receives one
JSON object on stdin, ``{"artifact": {"format_tag", "body"}, "tier",
"split_spec"}``, and must print one JSON object, ``{"metrics": {name: value},
"diagnostics": text}``. A nonzero exit or a timeout is an evaluator failure.
"""

from __future__ import annotations

import json
import subprocess
from pathlib import Path
from typing import Optional, Sequence

from .core import Artifact, EvaluationReport, FormatTag, MetricValue, VisibilityTier
from .errors import ConfigError, EvaluatorFailure, ParseError
from .formats import parse_numeric_config
from .ruleset import Dataset, cv_accuracy, evaluate_ruleset, load_csv, parse_ruleset, stratified_split

DEFAULT_EVAL_TIMEOUT = 3600.0


class Task:
    task_id = "abstract"
    format_tag = FormatTag.OPAQUE_TEXT
    metric = "score"

    def parse(self, text: str) -> Artifact:
        if not text or not text.strip():
            raise ParseError("empty artifact")
        return Artifact(self.format_tag, text)

    def evaluate(self, artifact: Artifact, tier: VisibilityTier) -> EvaluationReport:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.task_id}


class ScoreTableTask(Task):
    """Numeric configs that carry their own scores.

    ``{"score": 0.91, "test": 0.90}`` validates at 0.91 and tests at 0.90
    (``test`` defaults to ``score``). Meant for scripted dry runs and protocol
    tests; ``diagnostics`` maps tier names to the text reported for that tier.
    """

    task_id = "score_table"
    format_tag = FormatTag.NUMERIC_CONFIG

    def __init__(self, metric: str = "score", diagnostics: Optional[dict] = None):
        self.metric = metric
        self.diagnostics = dict(diagnostics or {})

    def parse(self, text):
        config = parse_numeric_config(text)
        if "score" not in config:
            raise ParseError("score_table configs need a 'score' key")
        return Artifact(self.format_tag, text)

    def evaluate(self, artifact, tier):
        tier = VisibilityTier(tier)
        config = json.loads(artifact.body)
        value = config.get("test", config["score"]) if tier is VisibilityTier.TEST else config["score"]
        text = self.diagnostics.get(tier.value, f"{tier.value} diagnostics for {artifact.hash_hex}")
        return EvaluationReport(tier, (MetricValue(self.metric, value),), text, artifact.content_hash)

    def describe(self):
        d = {"kind": self.task_id, "metric": self.metric}
        if self.diagnostics:
            d["diagnostics"] = self.diagnostics
        return d


class RuleTask(Task):
    """Rule classifiers on a stratified train/validation/test split.

    With ``acceptance="cv"`` the validation tier reports the mean k-fold
    accuracy over the training split instead of validation accuracy.
    """

    task_id = "rules"
    format_tag = FormatTag.RULE_YAML
    metric = "accuracy"

    def __init__(
        self,
        dataset: Dataset,
        fractions: Sequence[float] = (0.6, 0.2, 0.2),
        split_seed: int = 42,
        acceptance: str = "validation",
        cv_folds: int = 5,
        source: Optional[dict] = None,
    ):
        if acceptance not in ("validation", "cv"):
            raise ConfigError(f"task.acceptance: expected 'validation' or 'cv', got {acceptance!r}")
        self.dataset = dataset
        self.fractions = tuple(fractions)
        self.split_seed = split_seed
        self.acceptance = acceptance
        self.cv_folds = cv_folds
        self.source = source or {}
        self.train, self.validation, self.test = stratified_split(dataset, self.fractions, split_seed)

    def parse(self, text):
        ruleset = parse_ruleset(text)
        known = set(self.dataset.feature_names)
        errors = [f"unknown feature {f!r}" for f in ruleset.features if f not in known]
        classes = set(self.dataset.classes)
        errors += [f"unknown label {l!r}" for l in sorted(ruleset.labels) if l not in classes]
        if errors:
            raise ParseError(errors[0], errors)
        return Artifact(self.format_tag, text)

    def evaluate(self, artifact, tier):
        tier = VisibilityTier(tier)
        ruleset = parse_ruleset(artifact.body)
        if tier is VisibilityTier.VALIDATION and self.acceptance == "cv":
            mean, folds = cv_accuracy(ruleset, self.train, self.cv_folds, self.split_seed)
            text = "\n".join(f"fold {i + 1}: accuracy {s:.6f}" for i, s in enumerate(folds))
            return EvaluationReport(tier, (MetricValue("accuracy", mean),), text, artifact.content_hash)
        split = {
            VisibilityTier.TRAIN_DIAGNOSTICS: self.train,
            VisibilityTier.VALIDATION: self.validation,
            VisibilityTier.TEST: self.test,
        }[tier]
        return evaluate_ruleset(ruleset, split, tier, artifact.content_hash)

    def describe(self):
        return {
            **self.source,
            "kind": self.task_id,
            "fractions": list(self.fractions),
            "split_seed": self.split_seed,
            "acceptance": self.acceptance,
            "cv_folds": self.cv_folds,
        }


class ExternalTask(Task):
    task_id = "external"

    def __init__(
        self,
        command: Sequence[str],
        format_tag: FormatTag = FormatTag.NUMERIC_CONFIG,
        metric: str = "score",
        minimize: bool = False,
        split_spec=None,
        timeout: float = DEFAULT_EVAL_TIMEOUT,
        cwd: Optional[str] = None,
    ):
        self.command = tuple(command)
        self.format_tag = FormatTag(format_tag)
        self.metric = metric
        self.minimize = minimize
        self.split_spec = split_spec
        self.timeout = timeout
        self.cwd = cwd

    def parse(self, text):
        if self.format_tag is FormatTag.NUMERIC_CONFIG:
            parse_numeric_config(text)
        elif self.format_tag is FormatTag.RULE_YAML:
            parse_ruleset(text)
        return super().parse(text)

    def evaluate(self, artifact, tier):
        tier = VisibilityTier(tier)
        request = {
            "artifact": {"format_tag": artifact.format_tag.value, "body": artifact.body},
            "tier": tier.value,
            "split_spec": self.split_spec,
        }
        try:
            proc = subprocess.run(
                list(self.command), input=json.dumps(request), capture_output=True, text=True,
                timeout=self.timeout, cwd=self.cwd,
            )
        except subprocess.TimeoutExpired:
            raise EvaluatorFailure(f"evaluator timed out after {self.timeout}s") from None
        except OSError as exc:
            raise EvaluatorFailure(f"cannot start evaluator: {exc}") from None
        if proc.returncode != 0:
            raise EvaluatorFailure(f"evaluator exited {proc.returncode}: {proc.stderr.strip()[-2000:]}")
        try:
            response = json.loads(proc.stdout)
            raw = response["metrics"]
            if isinstance(raw, list):
                raw = {m["name"]: m["value"] for m in raw}
            names = [self.metric] + sorted(n for n in raw if n != self.metric)
            metrics = tuple(MetricValue.ingest(n, raw[n], self.minimize and n == self.metric) for n in names)
            diagnostics = str(response.get("diagnostics", ""))
        except (ValueError, KeyError, TypeError) as exc:
            raise EvaluatorFailure(f"malformed evaluator response: {exc}") from None
        return EvaluationReport(tier, metrics, diagnostics, artifact.content_hash)

    def describe(self):
        return {
            "kind": self.task_id,
            "command": list(self.command),
            "format_tag": self.format_tag.value,
            "metric": self.metric,
            "minimize": self.minimize,
            "split_spec": self.split_spec,
            "timeout": self.timeout,
        }


def _resolve(path, base_dir: Optional[Path]) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def build_task(desc: dict, base_dir: Optional[Path] = None) -> Task:
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ConfigError("task: descriptor needs a 'kind'")
    kind = desc["kind"]
    try:
        if kind == "score_table":
            return ScoreTableTask(desc.get("metric", "score"), desc.get("diagnostics"))
        if kind == "rules":
            csv_path = _resolve(desc["csv"], base_dir)
            if not csv_path.exists():
                raise ConfigError(f"task.csv: no such file {csv_path}")
            dataset = load_csv(csv_path, desc.get("label_column", "label"))
            return RuleTask(
                dataset,
                desc.get("fractions", (0.6, 0.2, 0.2)),
                int(desc.get("split_seed", 42)),
                desc.get("acceptance", "validation"),
                int(desc.get("cv_folds", 5)),
                source={"csv": desc["csv"], "label_column": desc.get("label_column", "label")},
            )
        if kind == "landscape":
            from .landscapes import LandscapeTask, landscape_from_dict

            return LandscapeTask(landscape_from_dict(desc["landscape"]))
        if kind == "external":
            cmd = desc["command"]
            return ExternalTask(
                [cmd] if isinstance(cmd, str) else cmd,
                desc.get("format_tag", "numeric_config"),
                desc.get("metric", "score"),
                bool(desc.get("minimize", False)),
                desc.get("split_spec"),
                float(desc.get("timeout", DEFAULT_EVAL_TIMEOUT)),
                desc.get("cwd"),
            )
    except KeyError as exc:
        raise ConfigError(f"task.{exc.args[0]}: missing field for kind {kind!r}") from None
    raise ConfigError(f"task.kind: unknown kind {kind!r}")
