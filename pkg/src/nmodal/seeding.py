"""Deterministic seed derivation.

All randomness in the package flows from one master seed.  Sub-streams are
derived as ``master XOR blake2b(tag)[:8]`` so that every purpose (init,
per-epoch shuffles, dropout, trial sampling, ...) gets an independent,
platform-stable stream.  Generators are PCG64, whose output is specified by
numpy independently of OS or hardware.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def derive_seed(master_seed: int, tag: str) -> int:
    """Mix a purpose tag into the master seed (stable across platforms)."""
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return (int(master_seed) ^ int.from_bytes(digest, "little")) & _MASK


def rng_for(master_seed: int, tag: str) -> np.random.Generator:
    """A PCG64 generator dedicated to one purpose tag."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, tag)))
