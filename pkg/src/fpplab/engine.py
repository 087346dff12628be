"""Exact geodesics on a sampled configuration."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import NoEntry, OutOfBox, Unreached
from .lattice import BoxRegion, PassageConfig, canonical_bond


@dataclass(frozen=True)
class LatticePath:
    sites: tuple

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(tuple(int(c) for c in s) for s in self.sites))

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def __getitem__(self, k):
        return self.sites[k]

    def is_valid(self) -> bool:
        """Nearest-neighbour steps and no repeated site."""
        if len(set(self.sites)) != len(self.sites):
            return False
        return all(
            sum(abs(a - b) for a, b in zip(u, v)) == 1 for u, v in zip(self.sites, self.sites[1:])
        )

    def reversed(self) -> "LatticePath":
        return LatticePath(self.sites[::-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.sites)


def path_time(config: PassageConfig, path: LatticePath) -> float:
    """Sum of bond weights along ``path``, accumulated from its first site."""
    box = config.box
    t = 0.0
    for u, v in zip(path.sites, path.sites[1:]):
        b = canonical_bond(u, v)
        t += float(config.weights[b.axis, box.index(b.base)])
    return t


@dataclass(frozen=True)
class QueryResult:
    time: float
    path: LatticePath
    touched_boundary: bool


@dataclass(frozen=True, eq=False)
class GeodesicTree:
    """Shortest-path forest from a source set over one box.

    ``parent`` and ``dist`` are dense per-site arrays; sources are their own
    parents and unreached sites have parent -1.
    """

    box: BoxRegion
    sources: tuple
    parent_idx: np.ndarray
    dist_arr: np.ndarray
    done: np.ndarray

    def reached(self, v: Sequence[int]) -> bool:
        return self.box.contains(v) and self.parent_idx[self.box.index(v)] >= 0

    def finalized(self, v: Sequence[int]) -> bool:
        return self.box.contains(v) and bool(self.done[self.box.index(v)])

    def dist(self, v: Sequence[int]) -> float:
        i = self.box.index(v)
        if self.parent_idx[i] < 0:
            raise Unreached(f"site {tuple(v)} not reached")
        return float(self.dist_arr[i])

    def parent(self, v: Sequence[int]) -> tuple:
        i = self.box.index(v)
        if self.parent_idx[i] < 0:
            raise Unreached(f"site {tuple(v)} not reached")
        return self.box.site(self.parent_idx[i])


def _weights_c(config: PassageConfig) -> np.ndarray:
    return np.ascontiguousarray(config.weights)


def _run(config: PassageConfig, sources: Sequence[int], targets: Sequence[int], mode: int):
    return _kernels.dijkstra(
        _weights_c(config),
        np.asarray(config.box.strides, dtype=np.int64),
        np.asarray(sources, dtype=np.int64),
        np.asarray(targets, dtype=np.int64),
        mode,
    )


def _indices(box: BoxRegion, sites: Iterable) -> list:
    return [box.index(tuple(s)) for s in sites]


def shortest_passage(config: PassageConfig, x: Sequence[int], y: Sequence[int], margin: int = 0) -> QueryResult:
    """T(x, y) over in-box paths together with the minimizing path from x to y.

    The search always starts from the lexicographically smaller endpoint, so
    the answer for (y, x) is the same computation reversed.
    """
    box = config.box
    x, y = tuple(x), tuple(y)
    ix, iy = box.index(x), box.index(y)
    src, dst = (ix, iy) if ix <= iy else (iy, ix)
    dist, parent, _, _ = _run(config, [src], [dst], 1)
    if parent[dst] < 0:
        raise Unreached(f"{y} unreachable from {x} inside the box")
    chain = _kernels.trace_to_root(parent, dst)  # dst ... src
    if src == ix:
        chain = chain[::-1]
    sites = box.sites_of(chain)
    touched = margin > 0 and any(box.in_shell(s, margin) for s in sites)
    return QueryResult(float(dist[dst]), LatticePath(sites), touched)


def geodesic_tree(
    config: PassageConfig,
    sources: Iterable,
    stop: Callable | Iterable | None = None,
    *,
    first_only: bool = False,
) -> GeodesicTree:
    """Shortest-path tree from the nearest source.

    ``stop`` is a predicate on sites or an explicit collection of sites; the
    search halts once all of them are settled (or the first one, with
    ``first_only``).  Distances are exact on every settled site.
    """
    box = config.box
    srcs = tuple(tuple(s) for s in sources)
    if not srcs:
        raise ValueError("geodesic_tree needs at least one source")
    src_idx = _indices(box, srcs)
    if stop is None:
        targets, mode = [], 0
    else:
        if callable(stop):
            targets = [i for i, s in enumerate(map(tuple, box.coords())) if stop(s)]
        else:
            targets = _indices(box, stop)
        mode = 1 if first_only else 2
        if not targets:
            mode = 0
    dist, parent, done, _ = _run(config, src_idx, targets, mode)
    return GeodesicTree(box, srcs, parent, dist, done.astype(bool))


def path_from_tree(tree: GeodesicTree, v: Sequence[int]) -> LatticePath:
    """Tree path from the source to ``v``."""
    box = tree.box
    if not box.contains(v):
        raise OutOfBox(f"site {tuple(v)} outside box")
    i = box.index(v)
    if tree.parent_idx[i] < 0:
        raise Unreached(f"site {tuple(v)} not reached")
    chain = _kernels.trace_to_root(tree.parent_idx, i)
    return LatticePath(box.sites_of(chain[::-1]))


def u1_of(site: Sequence[float], z) -> float:
    return float(np.dot(np.asarray(site, dtype=float), np.asarray(z, dtype=float)))


def first_entry_point(path: LatticePath, frame, s: float) -> tuple:
    """First site of ``path`` in the halfspace {x : x . z_theta >= s}."""
    z = np.asarray(frame.z_theta, dtype=float)
    for site in path.sites:
        if float(np.dot(site, z)) >= s:
            return site
    raise NoEntry(f"path never reaches H^+ at level {s}")


def first_entry_index(path: LatticePath, frame, s: float) -> int:
    z = np.asarray(frame.z_theta, dtype=float)
    for k, site in enumerate(path.sites):
        if float(np.dot(site, z)) >= s:
            return k
    raise NoEntry(f"path never reaches H^+ at level {s}")


def is_slab_geodesic(path: LatticePath, frame, s1: float, s2: float) -> bool:
    """True iff only the first bond meets H^-(s1) and only the last bond meets H^+(s2)."""
    if not s1 < s2:
        raise ValueError("need s1 < s2")
    if len(path) < 2:
        return False
    z = np.asarray(frame.z_theta, dtype=float)
    u = [float(np.dot(s, z)) for s in path.sites]
    if u[0] > s1 or u[-1] < s2:
        return False
    return all(v > s1 for v in u[1:]) and all(v < s2 for v in u[:-1])


def round_to_site(x: Sequence[float]) -> tuple:
    """The lattice site Z(x) whose cell z + [-1/2, 1/2)^d contains x."""
    return tuple(int(math.floor(c + 0.5)) for c in x)
