"""Seeded random streams with a fixed layout.

Every run owns one 64-bit ``rng_seed``. Round ``r`` gets independent
substreams keyed by ``numpy.random.SeedSequence(entropy=rng_seed,
spawn_key=(r, slot))`` feeding a PCG64 bit generator:

* slot 0: acceptance draws (one uniform per stochastic SA decision)
* slot 1: audit word, the first raw 64-bit output is stored as ``rng_check``
* slot 2 + i: proposer stream of investigator ``i``

Because streams are keyed by round, consuming more draws in round ``r``
never shifts the draws of round ``r + 1``.

Uniforms are ``(raw >> 11) * 2**-53`` of the next raw PCG64 word. Normals
use Box-Muller on two consecutive uniforms:
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``. Both are spelled out so the streams
can be re-derived outside numpy.
"""

from __future__ import annotations

import math

import numpy as np

ACCEPT_SLOT = 0
AUDIT_SLOT = 1
PROPOSER_SLOT_BASE = 2

_SEED_MASK = (1 << 64) - 1


def _seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    return np.random.SeedSequence(entropy=seed & _SEED_MASK, spawn_key=tuple(key))


class Stream:
    def __init__(self, seed: int, *key: int):
        self.key = (seed, *key)
        self._bits = np.random.PCG64(_seed_sequence(seed, *key))

    def raw(self) -> int:
        return int(self._bits.random_raw())

    def uniform(self) -> float:
        return (self.raw() >> 11) * (1.0 / 9007199254740992.0)

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates, drawing ``j = floor(u * (i + 1))`` for i = n-1..1."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = int(self.uniform() * (i + 1))
            items[i], items[j] = items[j], items[i]
        return items


def acceptance_stream(seed: int, round_index: int) -> Stream:
    return Stream(seed, round_index, ACCEPT_SLOT)


def proposer_stream(seed: int, round_index: int, investigator: int = 0) -> Stream:
    return Stream(seed, round_index, PROPOSER_SLOT_BASE + investigator)


def audit_word(seed: int, round_index: int) -> str:
    return f"{Stream(seed, round_index, AUDIT_SLOT).raw():016x}"


def derive_seed(master: int, *key: int) -> int:
    """A child 63-bit seed for trial/run ``key`` under ``master``."""
    words = _seed_sequence(master, *key).generate_state(2, np.uint32)
    return ((int(words[0]) << 32) | int(words[1])) & ((1 << 63) - 1)
