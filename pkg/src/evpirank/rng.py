"""Deterministic random-number substreams derived from one root seed.

Every stochastic component draws from a named substream so that results are
reproducible across runs and independent of the order in which components
consume randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(seed: int, name: str) -> int:
    """Derive a stable 64-bit seed for the substream `name` of root `seed`."""
    digest = hashlib.blake2b(f"{seed}/{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """A fresh generator for the named substream of the root seed."""
    return np.random.default_rng(substream_seed(seed, name))
