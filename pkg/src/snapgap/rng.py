"""Deterministic RNG streams derived from a single root seed.

Every randomized task (a CV fold split, a tree, a permutation repeat) gets its
own generator keyed by fixed integers, so results are bit-identical no matter
what order or parallelism the tasks run with.
"""
from __future__ import annotations

import zlib

import numpy as np

# Fixed stream namespaces.
STREAM_FOLDS = 1
STREAM_TREE = 2
STREAM_PERMUTE = 3
STREAM_SPLIT = 4
STREAM_SYNTH = 5


def derive_rng(root_seed: int, *stream: int) -> np.random.Generator:
    """Generator for the (root_seed, *stream) key; same key, same stream."""
    return np.random.default_rng(np.random.SeedSequence((int(root_seed),) + tuple(int(s) for s in stream)))


def stream_id(name: str) -> int:
    """Stable integer id for a named stream (platform-independent)."""
    return zlib.crc32(name.encode("utf-8"))
