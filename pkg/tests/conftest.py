import json
from pathlib import Path

import pytest

from proposa.core import Artifact, FormatTag
from proposa.proposers import Proposer

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"
TEST_DATA = Path(__file__).resolve().parent / "data"
BREAST_CANCER = DATA / "breast_cancer.csv"


def score_body(score, test=None, **extra) -> str:
    d = {"score": score, **extra}
    if test is not None:
        d["test"] = test
    return json.dumps(d, sort_keys=True)


def score_artifact(score, test=None, **extra) -> Artifact:
    return Artifact(FormatTag.NUMERIC_CONFIG, score_body(score, test, **extra))


class RecordingProposer(Proposer):
    """Wraps another proposer and keeps every context it was shown."""

    def __init__(self, inner):
        self.inner = inner
        self.kind = inner.kind
        self.history_depth = inner.history_depth
        self.contexts = []

    def generate(self, context, stream):
        self.contexts.append(context)
        return self.inner.generate(context, stream)

    def describe(self):
        return self.inner.describe()


@pytest.fixture(scope="session")
def breast_cancer():
    from proposa.ruleset import load_csv

    return load_csv(BREAST_CANCER, "diagnosis")
