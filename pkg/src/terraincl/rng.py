"""Labeled deterministic random streams.

Every random decision in a run draws from a stream derived from the run seed
plus a tuple of labels (strings or integers). Streams with distinct labels are
independent Philox (counter-based) generators, so adding or removing one
consumer -- e.g. disabling the validation pool -- cannot shift the draws seen
by any other consumer.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for (seed, labels).

    The same (seed, labels) tuple always yields a generator producing the
    same sequence, regardless of how many other streams were created or used.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(_label_word(lab) for lab in labels)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *labels) -> int:
    """Collapse a labeled stream into a single u64, for sub-seeding."""
    return int(substream(seed, *labels).integers(0, 2**64, dtype=np.uint64))
