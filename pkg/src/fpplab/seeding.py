"""Replica seeds and order-preserving parallel execution."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_seed(master: int, tag: str, index: int) -> int:
    """Stable 64-bit seed for replica ``index`` of the stream named ``tag``."""
    h = mix64((int(master) & _MASK) ^ fnv1a(tag))
    return mix64((h + (int(index) + 1) * _GOLDEN) & _MASK)


def default_threads() -> int:
    env = os.environ.get("FPP_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def ordered_map(fn: Callable, items: Iterable, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` computed on a bounded thread pool.

    Results come back in input order, so the thread count never changes
    the output.  The compiled search kernel releases the GIL.
    """
    items: Sequence = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
