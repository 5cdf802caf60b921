"""Counter-based random streams.

Every draw is determined by ``(seed, stream key, block index)``: a block of
``BLOCK`` samples gets its own Philox generator keyed through
:class:`numpy.random.SeedSequence`.  Work is always cut into the same blocks,
so any distribution of blocks over workers reproduces the same numbers.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

BLOCK = 1 << 16

T = TypeVar("T")


def _key_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be non-negative")
        return int(part)
    digest = hashlib.blake2b(str(part).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *key) -> np.random.Generator:
    """Return the generator for one named stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(total: int, block: int = BLOCK) -> list[tuple[int, int]]:
    """Split ``total`` items into ``(index, size)`` blocks of fixed size."""
    out = []
    start = 0
    idx = 0
    while start < total:
        size = min(block, total - start)
        out.append((idx, size))
        start += size
        idx += 1
    return out


def resolve_workers(workers) -> int:
    if workers in (None, "auto"):
        return os.cpu_count() or 1
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def parallel_map(fn: Callable[..., T], items: Iterable, workers=1) -> list[T]:
    """Ordered map; the result never depends on ``workers``."""
    items: Sequence = list(items)
    n = resolve_workers(workers)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
