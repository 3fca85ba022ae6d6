"""First-match YAML rule classifiers over numeric features.

Grammar of a ruleset document::

    default: <label>
    rules:
      - label: <label>
        all:                      # or any:, exactly one of the two
          - "<feature> <op> <threshold>"
          - ...

``op`` is one of ``lt le gt ge``. Rules are tried top to bottom and the first
rule whose combinator holds decides the label; ``default`` covers the rest.
"""

from __future__ import annotations

import csv
import math
import operator
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from .core import EvaluationReport, MetricValue, VisibilityTier, hash_artifact
from .errors import DomainError, ParseError, StratificationError
from .rng import Stream

OPS = {"lt": operator.lt, "le": operator.le, "gt": operator.gt, "ge": operator.ge}
_NP_OPS = {"lt": np.less, "le": np.less_equal, "gt": np.greater, "ge": np.greater_equal}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
MISCLASSIFIED_CAP = 50


class RuleEvaluationError(DomainError):
    pass


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str
    threshold: float

    def holds(self, value: float) -> bool:
        return OPS[self.op](value, self.threshold)

    def __str__(self):
        return f"{self.feature} {self.op} {self.threshold!r}"


@dataclass(frozen=True)
class Rule:
    label: str
    combinator: str  # "all" | "any"
    conditions: tuple[Condition, ...]

    def matches(self, sample: Mapping[str, float]) -> bool:
        try:
            results = (c.holds(sample[c.feature]) for c in self.conditions)
            return all(results) if self.combinator == "all" else any(results)
        except KeyError as exc:
            raise RuleEvaluationError(f"sample has no feature {exc.args[0]!r}") from None


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    default_label: str

    @property
    def features(self) -> tuple[str, ...]:
        seen = {}
        for r in self.rules:
            for c in r.conditions:
                seen.setdefault(c.feature, None)
        return tuple(seen)

    @property
    def labels(self) -> set[str]:
        return {r.label for r in self.rules} | {self.default_label}


# -- parsing -------------------------------------------------------------------


def _label(value, path: str, errors: list[str]) -> Optional[str]:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        errors.append(f"{path}: label must be a string, got {value!r}")
        return None
    value = str(value)
    if not value.strip():
        errors.append(f"{path}: label must be non-empty")
        return None
    return value


def _condition(item, path: str, errors: list[str]) -> Optional[Condition]:
    if not isinstance(item, str):
        errors.append(f"{path}: condition must be a string '<feature> <op> <threshold>'")
        return None
    tokens = item.split()
    if len(tokens) != 3:
        errors.append(f"{path}: condition must have exactly 3 tokens, got {len(tokens)}")
        return None
    feature, op, raw = tokens
    ok = True
    if not _IDENT.match(feature):
        errors.append(f"{path}: invalid feature name {feature!r}")
        ok = False
    if op not in OPS:
        errors.append(f"{path}: unknown operator {op!r} (expected one of lt, le, gt, ge)")
        ok = False
    try:
        threshold = float(raw)
        if not math.isfinite(threshold):
            raise ValueError
    except ValueError:
        errors.append(f"{path}: threshold {raw!r} is not a finite number")
        ok = False
    return Condition(feature, op, threshold) if ok else None


def parse_ruleset(text: str) -> RuleSet:
    """Parse a ruleset document; raises ParseError listing every problem found."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}") from None
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ParseError("document must be a mapping with 'default' and 'rules'")
    for key in doc:
        if key not in ("default", "rules"):
            errors.append(f"{key}: unknown top-level key")
    default = None
    if "default" not in doc:
        errors.append("default: missing default label")
    else:
        default = _label(doc["default"], "default", errors)
    raw_rules = doc.get("rules", [])
    if raw_rules is None:
        raw_rules = []
    if not isinstance(raw_rules, list):
        errors.append("rules: must be a list")
        raw_rules = []
    rules = []
    for i, item in enumerate(raw_rules):
        path = f"rules[{i}]"
        if not isinstance(item, dict):
            errors.append(f"{path}: rule must be a mapping")
            continue
        for key in item:
            if key not in ("label", "all", "any"):
                errors.append(f"{path}.{key}: unknown key")
        label = None
        if "label" not in item:
            errors.append(f"{path}: missing label")
        else:
            label = _label(item["label"], f"{path}.label", errors)
        combos = [k for k in ("all", "any") if k in item]
        if len(combos) != 1:
            errors.append(f"{path}: exactly one of 'all'/'any' is required")
            continue
        combinator = combos[0]
        conds_raw = item[combinator]
        if not isinstance(conds_raw, list) or not conds_raw:
            errors.append(f"{path}.{combinator}: conditions must be a non-empty list")
            continue
        conds = [_condition(c, f"{path}.{combinator}[{j}]", errors) for j, c in enumerate(conds_raw)]
        if label is not None and all(c is not None for c in conds):
            rules.append(Rule(label, combinator, tuple(conds)))
    if errors:
        raise ParseError(errors[0] if len(errors) == 1 else f"{len(errors)} errors: {errors[0]} ...", errors)
    return RuleSet(tuple(rules), default)


def _yaml_scalar(s: str) -> str:
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.-]*", s) and yaml.safe_load(s) == s:
        return s
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_ruleset(ruleset: RuleSet) -> str:
    """Canonical text form; ``parse_ruleset(dump_ruleset(r)) == r``."""
    lines = [f"default: {_yaml_scalar(ruleset.default_label)}", "rules:" if ruleset.rules else "rules: []"]
    for rule in ruleset.rules:
        lines.append(f"  - label: {_yaml_scalar(rule.label)}")
        lines.append(f"    {rule.combinator}:")
        for c in rule.conditions:
            lines.append(f"      - {c}")
    return "\n".join(lines) + "\n"


# -- classification ------------------------------------------------------------


def classify(ruleset: RuleSet, sample: Mapping[str, float]) -> str:
    for rule in ruleset.rules:
        if rule.matches(sample):
            return rule.label
    return ruleset.default_label


@dataclass(frozen=True, eq=False)
class Dataset:
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray  # object array of str labels
    row_ids: np.ndarray  # 1-based source line numbers (or any stable row id)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DomainError("X must be (n_rows, n_features)")
        if not np.all(np.isfinite(X)):
            raise DomainError("dataset contains missing or non-finite values")
        y = np.asarray(self.y, dtype=object)
        if len(y) != len(X):
            raise DomainError("X and y lengths differ")
        row_ids = np.arange(len(X)) if self.row_ids is None else np.asarray(self.row_ids)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "row_ids", row_ids)

    @classmethod
    def from_rows(cls, feature_names: Sequence[str], rows, labels, row_ids=None) -> "Dataset":
        return cls(tuple(feature_names), np.asarray(rows, dtype=float).reshape(len(labels), len(feature_names)),
                   np.asarray([str(l) for l in labels], dtype=object), row_ids)

    def __len__(self):
        return len(self.y)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.y.tolist())))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.feature_names, self.X[idx], self.y[idx], self.row_ids[idx])

    def sample(self, i: int) -> dict[str, float]:
        return dict(zip(self.feature_names, self.X[i].tolist()))


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Read a header-first CSV; every non-label column must be numeric."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DomainError(f"{path}: empty file") from None
        if label_column not in header:
            raise DomainError(f"{path}: no label column {label_column!r}")
        li = header.index(label_column)
        features = [h for i, h in enumerate(header) if i != li]
        rows, labels, lines, bad = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header) or any(not v.strip() for v in rec):
                bad.append(lineno)
                continue
            try:
                values = [float(v) for i, v in enumerate(rec) if i != li]
            except ValueError:
                bad.append(lineno)
                continue
            if not all(math.isfinite(v) for v in values):
                bad.append(lineno)
                continue
            rows.append(values)
            labels.append(rec[li].strip())
            lines.append(lineno)
    if bad:
        shown = ", ".join(map(str, bad[:20]))
        raise DomainError(f"{path}: missing or non-numeric values on lines {shown}")
    return Dataset.from_rows(features, rows, labels, lines)


def predict(ruleset: RuleSet, dataset: Dataset) -> np.ndarray:
    """Vectorised classify over every row of ``dataset``."""
    index = {name: i for i, name in enumerate(dataset.feature_names)}
    for f in ruleset.features:
        if f not in index:
            raise RuleEvaluationError(f"ruleset references unknown feature {f!r}")
    n = len(dataset)
    out = np.full(n, ruleset.default_label, dtype=object)
    open_ = np.ones(n, dtype=bool)
    for rule in ruleset.rules:
        masks = [_NP_OPS[c.op](dataset.X[:, index[c.feature]], c.threshold) for c in rule.conditions]
        hit = np.logical_and.reduce(masks) if rule.combinator == "all" else np.logical_or.reduce(masks)
        take = hit & open_
        out[take] = rule.label
        open_ &= ~take
    return out


def evaluate_ruleset(
    ruleset: RuleSet,
    split: Dataset,
    tier: VisibilityTier = VisibilityTier.VALIDATION,
    artifact_hash: Optional[int] = None,
) -> EvaluationReport:
    if len(split) == 0:
        raise DomainError("cannot evaluate on an empty split")
    pred = predict(ruleset, split)
    truth = split.y
    correct = pred == truth
    classes = sorted(set(truth.tolist()) | set(pred.tolist()))
    metrics = [MetricValue("accuracy", float(np.mean(correct)))]
    for c in classes:
        tp = int(np.sum((pred == c) & (truth == c)))
        npred = int(np.sum(pred == c))
        ntrue = int(np.sum(truth == c))
        metrics.append(MetricValue(f"precision_{c}", tp / npred if npred else 0.0))
        metrics.append(MetricValue(f"recall_{c}", tp / ntrue if ntrue else 0.0))

    lines = [f"rows: {len(split)}", f"accuracy: {metrics[0].value:.6f}", "confusion (rows=true, cols=predicted):"]
    width = max(len(c) for c in classes) + 2
    lines.append(" " * width + "".join(c.rjust(width) for c in classes))
    for t in classes:
        counts = [int(np.sum((truth == t) & (pred == p))) for p in classes]
        lines.append(t.ljust(width) + "".join(str(n).rjust(width) for n in counts))
    wrong = np.flatnonzero(~correct)
    lines.append(f"misclassified: {len(wrong)} of {len(split)}")
    shown = ruleset.features or split.feature_names
    col = {name: i for i, name in enumerate(split.feature_names)}
    for i in wrong[:MISCLASSIFIED_CAP]:
        values = " ".join(f"{f}={split.X[i, col[f]]!r}" for f in shown)
        lines.append(f"  row {split.row_ids[i]}: true={truth[i]} predicted={pred[i]} {values}")
    if len(wrong) > MISCLASSIFIED_CAP:
        lines.append(f"  ... {len(wrong) - MISCLASSIFIED_CAP} more not shown")

    if artifact_hash is None:
        artifact_hash = hash_artifact(dump_ruleset(ruleset))
    return EvaluationReport(tier, tuple(metrics), "\n".join(lines), artifact_hash)


# -- splitting -----------------------------------------------------------------


def _largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    exact = [total * f for f in fractions]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(exact)), key=lambda j: (-(exact[j] - counts[j]), j))
    for j in order[: total - sum(counts)]:
        counts[j] += 1
    return counts


def _class_blocks(dataset: Dataset, stream: Stream) -> list[list[int]]:
    blocks = []
    for c in dataset.classes:
        idx = np.flatnonzero(dataset.y == c).tolist()
        perm = stream.permutation(len(idx))
        blocks.append([idx[p] for p in perm])
    return blocks


def _transport(row_need: list[int], col_need: list[int], allowed) -> Optional[list[list[int]]]:
    """0/1 matrix with the given row/column sums on ``allowed`` cells, or None.

    Edmonds-Karp max flow on source -> rows -> columns -> sink; the graphs
    here are tiny (classes x splits).
    """
    R, C = len(row_need), len(col_need)
    n = R + C + 2
    src, sink = n - 2, n - 1
    cap = [[0] * n for _ in range(n)]
    for i in range(R):
        cap[src][i] = row_need[i]
        for j in range(C):
            if allowed[i][j]:
                cap[i][R + j] = 1
    for j in range(C):
        cap[R + j][sink] = col_need[j]
    flow = 0
    while True:
        parent = [-1] * n
        parent[src] = src
        queue = [src]
        for u in queue:
            for v in range(n):
                if parent[v] < 0 and cap[u][v] > 0:
                    parent[v] = u
                    queue.append(v)
        if parent[sink] < 0:
            break
        v = sink
        while v != src:
            u = parent[v]
            cap[u][v] -= 1
            cap[v][u] += 1
            v = u
        flow += 1
    if flow != sum(row_need) or flow != sum(col_need):
        return None
    return [[1 if allowed[i][j] and cap[i][R + j] == 0 else 0 for j in range(C)] for i in range(R)]


def stratified_split(dataset: Dataset, fractions: Sequence[float], seed: int) -> list[Dataset]:
    """Stratified partition into ``len(fractions)`` datasets.

    Split sizes come from largest-remainder rounding of ``n * f``. Each class is
    shuffled (classes in sorted order, one shared stream) and receives either
    the floor or the ceiling of its exact share of every split (when such an
    assignment exists, else within one row of it); the extra rows are handed
    out so that split totals come out exact. Rows are then
    sliced contiguously from the shuffled class block.
    """
    fractions = list(fractions)
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise DomainError(f"fractions must be non-negative and sum to 1, got {fractions}")
    m = len(fractions)
    blocks = _class_blocks(dataset, Stream(seed))
    for c, block in zip(dataset.classes, blocks):
        if len(block) < m:
            raise StratificationError(f"class {c!r} has {len(block)} rows, fewer than {m} splits")
    totals = _largest_remainder(len(dataset), fractions)

    exact = [[len(b) * f for f in fractions] for b in blocks]
    cells = [[math.floor(e) for e in row] for row in exact]
    row_need = [len(b) - sum(row) for b, row in zip(blocks, cells)]
    col_need = [totals[j] - sum(row[j] for row in cells) for j in range(m)]
    # Hand out the extra rows one per cell, preferring cells whose exact share
    # is fractional (so each cell stays within floor/ceil of its share).
    frac = [[e > c for e, c in zip(er, cr)] for er, cr in zip(exact, cells)]
    extra = _transport(row_need, col_need, frac)
    if extra is None:
        extra = _transport(row_need, col_need, [[True] * m for _ in blocks])
    if extra is None:
        raise StratificationError("cannot balance split sizes across classes")
    cells = [[c + x for c, x in zip(cr, xr)] for cr, xr in zip(cells, extra)]

    parts: list[list[int]] = [[] for _ in range(m)]
    for block, row in zip(blocks, cells):
        start = 0
        for j, n in enumerate(row):
            parts[j].extend(block[start : start + n])
            start += n
    return [dataset.subset(sorted(p)) for p in parts]


def kfold_indices(dataset: Dataset, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Stratified folds: shuffled class blocks, concatenated, dealt round-robin.

    Position ``p`` of the concatenation goes to fold ``p % k`` so the first
    ``n % k`` folds take the remainder rows.
    """
    if k < 2:
        raise DomainError("k must be >= 2")
    blocks = _class_blocks(dataset, Stream(seed))
    for c, block in zip(dataset.classes, blocks):
        if len(block) < k:
            raise StratificationError(f"class {c!r} has {len(block)} rows, fewer than k={k}")
    folds: list[list[int]] = [[] for _ in range(k)]
    for p, i in enumerate(i for block in blocks for i in block):
        folds[p % k].append(i)
    return [np.array(sorted(f), dtype=int) for f in folds]


def cv_accuracy(ruleset: RuleSet, dataset: Dataset, k: int = 5, seed: int = 0) -> tuple[float, list[float]]:
    """Unweighted mean of per-fold accuracies, and the fold accuracies."""
    scores = [float(np.mean(predict(ruleset, dataset.subset(f)) == dataset.y[f])) for f in kfold_indices(dataset, k, seed)]
    return float(np.mean(scores)), scores
