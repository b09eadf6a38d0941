"""Deterministic RNG derivation.

Every random decision in the toolkit draws from a generator derived as
``derive_rng(seed, PURPOSE, *indices)``.  Streams for different purposes
(or different tasks/epochs) never share state, so adding work to one part
of a run cannot shift the random numbers seen by another.  This is what
makes the bitwise reduction identities (lambda=0 vs plain SGD, first-task
equivalence) hold.
"""

from __future__ import annotations

import numpy as np

# Purpose tags (spawn-key namespace). Values are part of the determinism
# contract: changing them changes every derived stream.
INIT = 1
DATA = 2
DROPOUT = 3
IMPORTANCE = 4
HEAD = 5
SYNTH = 6
SWEEP_SPLIT = 7


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *key)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))
