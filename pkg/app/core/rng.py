"""Seeded random substreams.

Every consumer of randomness asks for a generator keyed by stable labels
(e.g. ``substream(seed, "bootstrap", 17)``). Keys map to a SeedSequence
spawn key, so a replicate's draws depend only on (seed, labels) and never
on worker count or the order in which replicates run.
"""
import hashlib
from typing import Union

import numpy as np

Key = Union[str, int]


def _key_to_int(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("Substream keys must be non-negative")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *keys: Key) -> np.random.Generator:
    """Generator for the substream of ``seed`` identified by ``keys``."""
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))


def child_seed(seed: int, *keys: Key) -> int:
    """A derived integer seed, for APIs that take a seed rather than a generator."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
