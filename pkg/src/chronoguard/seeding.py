"""Deterministic RNG substream derivation.

All randomness in a run flows from a single 64-bit root seed. Independent
substreams are derived from (root, *path) where the path is a tuple of small
integers identifying the consumer (trial index, hypothesis, chunk, ...).
The derivation is position-based, so results do not depend on the order in
which substreams are created or consumed, which is what makes parallel
Monte Carlo reproducible across worker counts.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "spawn_seed"]


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the substream identified by (root_seed, *path)."""
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.PCG64(ss))


def spawn_seed(root_seed: int, *path: int) -> int:
    """Derive a 64-bit child seed, for consumers that want a plain integer."""
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
