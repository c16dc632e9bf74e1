"""Reproducible random streams.

Streams are Philox generators keyed by ``SeedSequence(master, spawn_key)``.
Philox is counter based, so the stream of a chunk depends only on the master
seed and the chunk's key, never on which worker draws it.
"""

import zlib
from typing import Tuple, Union

import numpy as np

Key = Tuple[int, ...]


def experiment_key(name: str) -> int:
    """Stable 32-bit key for an experiment name."""
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


def make_stream(seed: int, *key: Union[int, str]) -> np.random.Generator:
    """Generator for ``(seed, key)``; string key parts are hashed."""
    spawn_key = tuple(experiment_key(k) if isinstance(k, str) else int(k) for k in key)
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(sequence))

