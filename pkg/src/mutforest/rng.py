"""Replicate-keyed random streams and an order-independent replicate runner.

Every replicate block draws from a Philox generator keyed by
(seed, stream id, block index); blocks have a fixed size, so the numbers a
replicate sees never depend on how blocks are spread over workers.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

BLOCK = 1024
T = TypeVar("T")


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode())


def generator(seed: int, stream: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), stream_id(stream), *map(int, key)])
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, size: int = BLOCK) -> list[tuple[int, int, int]]:
    """(block index, start, stop) covering range(n)."""
    return [(b, s, min(s + size, n)) for b, s in enumerate(range(0, n, size))]


def _call(args):
    fn, seed, stream, b, start, stop = args
    return fn(generator(seed, stream, b), start, stop)


def run_blocks(fn: Callable[[np.random.Generator, int, int], T], n: int, seed: int,
               stream: str, workers: int = 1, size: int = BLOCK) -> list[T]:
    """Apply ``fn(rng, start, stop)`` to every replicate block, results in block order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    jobs = [(fn, seed, stream, b, s, e) for b, s, e in blocks(n, size)]
    if workers <= 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if parts else np.zeros(0)
