"""Text formats for artifact bodies other than rule YAML.

A ``numeric_config`` body is a flat JSON object mapping names to numbers.
JSON integers mark integer-typed keys. The canonical dump sorts keys and uses
``repr`` for floats, so equal configs produce equal bodies (and hashes).
"""

from __future__ import annotations

import json
import math
from typing import Union

from .core import Artifact, FormatTag
from .errors import ParseError

Number = Union[int, float]


def parse_numeric_config(text: str) -> dict[str, Number]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"numeric_config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not doc:
        raise ParseError("numeric_config must be a non-empty JSON object")
    errors = []
    for key, value in doc.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{key}: expected a number, got {value!r}")
        elif not math.isfinite(value):
            errors.append(f"{key}: value is not finite")
    if errors:
        raise ParseError(errors[0], errors)
    return doc


def dump_numeric_config(config: dict[str, Number]) -> str:
    return json.dumps(config, sort_keys=True, allow_nan=False)


def numeric_artifact(config: dict[str, Number]) -> Artifact:
    return Artifact(FormatTag.NUMERIC_CONFIG, dump_numeric_config(config))


def summarize(artifact: Artifact) -> str:
    """Short description used in score histories.

    Numeric configs are small and go in whole; anything else is reduced to its
    hash (plus the rule count for rule files).
    """
    if artifact.format_tag is FormatTag.NUMERIC_CONFIG:
        return artifact.body
    if artifact.format_tag is FormatTag.RULE_YAML:
        from .ruleset import parse_ruleset

        try:
            n = len(parse_ruleset(artifact.body).rules)
        except ParseError:
            n = "?"
        return f"ruleset {artifact.hash_hex} ({n} rules)"
    return f"text {artifact.hash_hex} ({len(artifact.body)} chars)"
