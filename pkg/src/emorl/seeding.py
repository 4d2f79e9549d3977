"""Named random streams split deterministically from one 64-bit root seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("dataset", "init", "dropout", "batch")


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def child_rng(seed: int, stream: str) -> np.random.Generator:
    """Generator for one named stream; independent of every other stream."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_stream_key(stream),)))


def derive_seed(seed: int, *path: int) -> int:
    """A 64-bit child seed for the integer path under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
