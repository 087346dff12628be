"""Exhaustive self-avoiding path enumeration on tiny boxes, for cross-checking the engine."""
from __future__ import annotations

from typing import Iterator, Sequence

from .engine import LatticePath, path_time
from .lattice import BoxRegion, PassageConfig


def neighbours(box: BoxRegion, site: tuple) -> Iterator[tuple]:
    for a in range(box.d):
        for step in (1, -1):
            nb = list(site)
            nb[a] += step
            nb = tuple(nb)
            if box.contains(nb):
                yield nb


def self_avoiding_paths(box: BoxRegion, x: Sequence[int], y: Sequence[int]) -> Iterator[tuple]:
    """Every self-avoiding nearest-neighbour path from x to y inside the box."""
    x, y = tuple(x), tuple(y)
    path = [x]
    seen = {x}

    def dfs(u):
        if u == y:
            yield tuple(path)
            return
        for v in neighbours(box, u):
            if v not in seen:
                seen.add(v)
                path.append(v)
                yield from dfs(v)
                path.pop()
                seen.discard(v)

    yield from dfs(x)


def brute_force_passage(config: PassageConfig, x: Sequence[int], y: Sequence[int]) -> tuple:
    """(T(x, y), minimizing path, number of minimizers) by enumeration."""
    best, best_paths = None, []
    for p in self_avoiding_paths(config.box, x, y):
        t = path_time(config, LatticePath(p))
        if best is None or t < best:
            best, best_paths = t, [p]
        elif t == best:
            best_paths.append(p)
    return best, LatticePath(best_paths[0]), len(best_paths)
