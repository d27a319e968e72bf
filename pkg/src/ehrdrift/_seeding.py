"""Deterministic seed derivation shared by every module.

A derived seed is a pure function of its parts, so any sub-computation can be
rerun in isolation and reproduce the seeds it would get inside a full run.
"""

import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, float):
        # fractions such as 0.1 enter through their exact decimal text
        part = repr(part)
    if part is None:
        part = "<none>"
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(*parts) -> int:
    """Mix ``parts`` (ints, floats, strings) into an unsigned 64-bit seed."""
    words = []
    for p in parts:
        w = _word(p)
        words.extend([w & 0xFFFFFFFF, w >> 32])
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
