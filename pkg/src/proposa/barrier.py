"""Who may see which evaluation tier.

Investigators (proposers) see training diagnostics only. The reviewer scores
candidates on the validation tier. Nobody sees the test tier until the run
has been finalized, and investigators never do.
"""

from __future__ import annotations

from enum import Enum

from .core import VisibilityTier
from .errors import BarrierViolation


class Requestor(str, Enum):
    INVESTIGATOR = "investigator"
    REVIEWER = "reviewer"


class Verdict(str, Enum):
    ALLOW = "allow"
    VIOLATION = "violation"


def check_barrier(requestor: Requestor, tier: VisibilityTier, finalized: bool = False) -> Verdict:
    requestor, tier = Requestor(requestor), VisibilityTier(tier)
    if requestor is Requestor.INVESTIGATOR:
        ok = tier is VisibilityTier.TRAIN_DIAGNOSTICS
    elif tier is VisibilityTier.TEST:
        ok = finalized
    else:
        ok = True
    return Verdict.ALLOW if ok else Verdict.VIOLATION


def enforce_barrier(requestor: Requestor, tier: VisibilityTier, finalized: bool = False) -> None:
    if check_barrier(requestor, tier, finalized) is Verdict.VIOLATION:
        raise BarrierViolation(f"{Requestor(requestor).value} may not see {VisibilityTier(tier).value} results")
