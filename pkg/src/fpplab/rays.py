"""Finite-horizon theta-rays, entry points, crossing densities and midpoint hits.

A theta-ray from a start site is approximated by the geodesic from that site
to the fattened hyperplane at level kappa*R.  For many starts at once the
search runs backwards: one multi-source tree rooted on the target slab gives
every start its geodesic to the slab, and tree paths cannot cross.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .engine import LatticePath
from .errors import (
    BoundaryContamination,
    NoEntry,
    NonContinuousSpec,
    OutOfBox,
    UnderResolvedSector,
)
from .geometry import DirectionFrame, ScalingModel, build_frame, delta
from .lattice import BoxRegion, DistributionSpec, PassageConfig, sample_config
from .scaling import CONSERVATIVE_MODEL, DEFAULT_GUARD, MAX_DISCARD, corridor_box
from .seeding import derive_seed, ordered_map

DEFAULT_KAPPA = 4.0


def box_linear(box: BoxRegion, vec: Sequence[float]) -> np.ndarray:
    """Flat array of x . vec over the sites of ``box`` in index order."""
    vec = np.asarray(vec, dtype=float)
    out = np.zeros(box.shape)
    for a in range(box.d):
        shape = [1] * box.d
        shape[a] = box.shape[a]
        out = out + (np.arange(box.lo[a], box.hi[a] + 1, dtype=float) * vec[a]).reshape(shape)
    return out.ravel()


def u2_vectors(frame: DirectionFrame) -> np.ndarray:
    """Rows w_k with u2_k(x) = x . w_k, i.e. b_k - (b_k . y) z."""
    return frame.basis - np.outer(frame.basis @ frame.y_theta, frame.z_theta)


def theta_box(frame: DirectionFrame, u1_range: tuple, u2_ranges: Sequence[tuple], pad: int = 1) -> BoxRegion:
    """Lattice bounding box of the theta-coordinate block u1_range x u2_ranges."""
    corners = []
    grids = [u1_range] + list(u2_ranges)
    for idx in np.ndindex(*([2] * len(grids))):
        u1 = grids[0][idx[0]]
        x = u1 * frame.y_theta
        for k, rng in enumerate(u2_ranges):
            x = x + rng[idx[k + 1]] * frame.basis[k]
        corners.append(x)
    corners = np.array(corners)
    lo = tuple(int(math.floor(c)) - pad for c in corners.min(axis=0))
    hi = tuple(int(math.ceil(c)) + pad for c in corners.max(axis=0))
    return BoxRegion(lo, hi)


def _euclid(frame: DirectionFrame, s: float) -> float:
    """Euclidean length of s*y_theta."""
    return max(float(s) * float(np.linalg.norm(frame.y_theta)), 1.0)


# -- single and batched rays ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class RayApprox:
    start: tuple
    frame: DirectionFrame
    horizon: float
    path: LatticePath  # start -> H^+_{horizon} entry point, inclusive
    censored: bool
    full_path: LatticePath | None = None  # start -> target slab

    @property
    def entry(self) -> tuple:
        return self.path.sites[-1]


def slab_mask(box: BoxRegion, frame: DirectionFrame, level: float, u1: np.ndarray | None = None) -> np.ndarray:
    """Sites of the fattened hyperplane {level <= u1 <= level + mu*sqrt(d)}."""
    u1 = box_linear(box, frame.z_theta) if u1 is None else u1
    return (u1 >= level) & (u1 <= level + frame.fat_width)


def tube_exits_box(box: BoxRegion, frame: DirectionFrame, start, horizon: float, half_width: float) -> bool:
    """Whether the cylinder of the given half-width around start -> start + horizon*y leaves the box."""
    start = np.asarray(start, dtype=float)
    end = start + horizon * frame.y_theta
    # extent of a (d-1)-ball of radius half_width in span(basis) along each axis
    spread = half_width * np.sqrt((frame.basis**2).sum(axis=0))
    lo = np.minimum(start, end) - spread
    hi = np.maximum(start, end) + spread
    return bool(np.any(lo < np.asarray(box.lo)) or np.any(hi > np.asarray(box.hi)))


def approx_theta_ray(
    config: PassageConfig,
    start: Sequence[int],
    frame: DirectionFrame,
    horizon: float,
    kappa: float = DEFAULT_KAPPA,
    *,
    guard: int = DEFAULT_GUARD,
    model: ScalingModel | None = None,
) -> RayApprox:
    """Geodesic from ``start`` to the fattened hyperplane at level kappa*horizon.

    Only its prefix up to the H^+_{horizon} entry point is returned as the ray.
    ``censored`` is set when the geodesic touches the guard shell, or when a
    tube of half-width 8*Delta(horizon) around the straight ray leaves the box.
    """
    if kappa < 2:
        raise ValueError("overshoot factor must be at least 2")
    box = config.box
    start = tuple(int(c) for c in start)
    if not box.contains(start):
        raise OutOfBox(f"start {start} outside box")
    base = float(np.dot(start, frame.z_theta))
    level = base + kappa * horizon
    targets = np.flatnonzero(slab_mask(box, frame, level))
    if targets.size == 0:
        raise NoEntry(f"box does not contain the target slab at level {level}")
    s = box.index(start)
    dist, parent, _, hit = _kernels.dijkstra(
        np.ascontiguousarray(config.weights),
        np.asarray(box.strides, dtype=np.int64),
        np.array([s], dtype=np.int64),
        targets.astype(np.int64),
        1,
    )
    if hit < 0:
        raise NoEntry("target slab unreachable from start")
    chain = _kernels.trace_to_root(parent, hit)[::-1]
    sites = box.sites_of(chain)
    u1 = np.asarray(sites, dtype=float) @ frame.z_theta
    k = int(np.argmax(u1 >= base + horizon))
    if u1[k] < base + horizon:
        raise NoEntry("geodesic never reaches the horizon")
    shell = box.shell_mask(guard)
    touched = bool(shell[chain].any())
    if model is not None:
        touched = touched or tube_exits_box(box, frame, start, horizon, 8 * delta(model, _euclid(frame, horizon)))
    return RayApprox(start, frame, float(horizon), LatticePath(sites[: k + 1]), touched, LatticePath(sites))


@dataclass(eq=False)
class RayForest:
    """Geodesics from many starts to one target slab, as a single reverse tree."""

    box: BoxRegion
    frame: DirectionFrame
    level: float  # target slab level (kappa * horizon)
    parent: np.ndarray
    dist: np.ndarray
    u1: np.ndarray
    shell: np.ndarray
    starts: np.ndarray  # flat indices

    def walk(self, level: float) -> tuple:
        """(entry index or -1, touched, root index) for every start."""
        return _kernels.walk_entries(self.parent, self.u1, self.shell, self.starts, level)

    def chain(self, start_index: int) -> np.ndarray:
        return _kernels.trace_to_root(self.parent, start_index)

    def path(self, start_index: int) -> LatticePath:
        return LatticePath(self.box.sites_of(self.chain(start_index)))


def ray_forest(
    config: PassageConfig,
    frame: DirectionFrame,
    level: float,
    starts: np.ndarray,
    *,
    guard: int = DEFAULT_GUARD,
    u1: np.ndarray | None = None,
    shell: np.ndarray | None = None,
) -> RayForest:
    """Reverse tree from the fattened hyperplane at ``level``, stopped once all starts settle."""
    box = config.box
    u1 = box_linear(box, frame.z_theta) if u1 is None else u1
    shell = box.shell_mask(guard).astype(np.bool_) if shell is None else shell
    sources = np.flatnonzero(slab_mask(box, frame, level, u1)).astype(np.int64)
    if sources.size == 0:
        raise NoEntry(f"box does not contain the target slab at level {level}")
    starts = np.asarray(starts, dtype=np.int64)
    dist, parent, _, _ = _kernels.dijkstra(
        np.ascontiguousarray(config.weights), np.asarray(box.strides, dtype=np.int64), sources, starts, 2
    )
    return RayForest(box, frame, float(level), parent, dist, u1, shell, starts)


def prefix_stability(
    config: PassageConfig,
    frame: DirectionFrame,
    horizon: float,
    starts: Sequence[Sequence[int]],
    kappas: tuple = (2.0, 4.0),
    fraction: float = 0.25,
) -> float:
    """Share of starts whose ray prefixes up to H^+_{fraction*horizon} agree across overshoots."""
    box = config.box
    idx = np.array([box.index(tuple(s)) for s in starts], dtype=np.int64)
    u1 = box_linear(box, frame.z_theta)
    forests = [ray_forest(config, frame, k * horizon, idx, u1=u1) for k in kappas]
    agree = 0
    for i in idx:
        prefixes = []
        for f in forests:
            ch = f.chain(int(i))
            cut = np.flatnonzero(u1[ch] >= fraction * horizon)
            prefixes.append(tuple(ch[: cut[0] + 1]) if cut.size else None)
        if prefixes[0] is not None and all(p == prefixes[0] for p in prefixes):
            agree += 1
    return agree / len(idx)


# -- crossing density ----------------------------------------------------------


@dataclass
class CrossingDensityEstimate:
    s: float
    window: tuple  # per-u2-coordinate half-open intervals [lo, hi)
    volume: float
    counts: list  # distinct entry points per replica
    density: float
    se: float
    sector_eps: float = 0.0
    censored: int = 0  # censored rays whose entry fell in the window, all replicas
    in_window: int = 0  # all rays (censored or not) whose entry fell in the window
    starts: int = 0

    @property
    def replicas(self) -> int:
        return len(self.counts)

    @property
    def entry_count(self) -> int:
        return int(sum(self.counts))


def _normalize_window(window, d: int) -> tuple:
    if d == 2 and len(window) == 2 and not hasattr(window[0], "__len__"):
        window = (tuple(window),)
    window = tuple((float(a), float(b)) for a, b in window)
    if len(window) != d - 1 or any(not a < b for a, b in window):
        raise ValueError(f"window must give d-1 = {d - 1} nonempty intervals")
    return window


def sector_directions(frame: DirectionFrame, eps: float, spacing: float) -> list:
    """Grid of unit directions within angle eps of theta with the given angular spacing."""
    if eps <= 0:
        return [frame.theta]
    if spacing > eps / 4:
        raise UnderResolvedSector(f"grid spacing {spacing:.4g} exceeds eps/4 = {eps / 4:.4g}")
    theta = frame.theta
    tangents = [b - (b @ theta) * theta for b in frame.basis]
    tangents = [t / np.linalg.norm(t) for t in tangents]
    m = int(math.floor(eps / spacing))
    steps = [k * spacing for k in range(-m, m + 1)]
    out = []
    for combo in np.ndindex(*([len(steps)] * len(tangents))):
        offs = [steps[c] for c in combo]
        if math.hypot(*offs) > eps + 1e-12:
            continue
        v = theta.copy()
        for t, a in zip(tangents, offs):
            v = v + math.tan(a) * t
        out.append(v / np.linalg.norm(v))
    return out


def crossing_geometry(
    frame: DirectionFrame,
    s: float,
    window,
    kappa: float,
    model: ScalingModel | None,
    start_pad: float | None = None,
) -> tuple:
    """(box, start band pad) for a crossing-density run at level s.

    The start band extends start_pad (default 4*Delta(s)) beyond the window
    on each side; the box adds 4*Delta(kappa*s) more for the rays' wandering
    and 2*Delta(s) behind the start hyperplane.
    """
    model = model or CONSERVATIVE_MODEL
    window = _normalize_window(window, frame.d)
    pad = 4 * delta(model, _euclid(frame, s)) if start_pad is None else float(start_pad)
    tube = 4 * delta(model, _euclid(frame, kappa * s))
    behind = 2 * delta(model, _euclid(frame, s)) * float(np.linalg.norm(frame.z_theta))
    u1_range = (-frame.fat_width - behind, kappa * s + frame.fat_width + 1)
    u2_ranges = [(a - pad - tube, b + pad + tube) for a, b in window]
    return theta_box(frame, u1_range, u2_ranges), pad


def _replica_entries(config, frames, s, level_factor, window, band_pad, guard, main):
    """Distinct in-window H^+_s entry points (uncensored) plus censoring tallies for one config."""
    box = config.box
    u1 = box_linear(box, main.z_theta)
    W = u2_vectors(main)
    u2 = [box_linear(box, w) for w in W]
    shell = box.shell_mask(guard).astype(np.bool_)
    band = (u1 >= -main.fat_width) & (u1 <= 0)
    for k, (a, b) in enumerate(window):
        band &= (u2[k] >= a - band_pad) & (u2[k] < b + band_pad)
    starts = np.flatnonzero(band).astype(np.int64)
    entries = set()
    censored_in = 0
    in_window = 0
    for fr in frames:
        u1_f = u1 if fr is main else box_linear(box, fr.z_theta)
        forest = ray_forest(config, fr, level_factor * s, starts, guard=guard, u1=u1_f, shell=shell)
        if fr is not main:
            forest.u1 = u1  # entry points are always taken w.r.t. the main hyperplanes
        entry, touched, _ = forest.walk(s)
        for e, t in zip(entry, touched):
            if e < 0:
                continue
            if all(a <= u2[k][e] < b for k, (a, b) in enumerate(window)):
                in_window += 1
                if t:
                    censored_in += 1
                else:
                    entries.add(int(e))
    return entries, censored_in, in_window, int(starts.size)


def crossing_density(
    spec: DistributionSpec,
    frame: DirectionFrame,
    s: float,
    window,
    replicas: int,
    seed: int,
    *,
    kappa: float = DEFAULT_KAPPA,
    sector_eps: float = 0.0,
    sector_spacing: float | None = None,
    shape=None,
    model: ScalingModel | None = None,
    start_pad: float | None = None,
    guard: int = DEFAULT_GUARD,
    threads: int | None = None,
    force: bool = False,
) -> CrossingDensityEstimate:
    """Mean number of distinct H^+_s entry points per unit window volume.

    In sector mode (``sector_eps > 0``) rays are taken for a grid of
    directions within angle eps of theta, each needing a frame from ``shape``;
    their entry points are pooled with set semantics.
    """
    if not spec.continuous and not force:
        raise NonContinuousSpec("crossing densities need continuous weights (pass force=True)")
    window = _normalize_window(window, frame.d)
    volume = float(np.prod([b - a for a, b in window]))
    if sector_eps > 0:
        if shape is None:
            raise ValueError("sector mode needs a shape estimate to build frames")
        spacing = sector_eps / 4 if sector_spacing is None else sector_spacing
        frames = [frame] + [
            build_frame(t, shape) for t in sector_directions(frame, sector_eps, spacing) if not np.allclose(t, frame.theta)
        ]
    else:
        frames = [frame]
    box, band_pad = crossing_geometry(frame, s, window, kappa, model, start_pad)

    def one(k: int):
        config = sample_config(box, spec, derive_seed(seed, f"crossing:{s}", k))
        return _replica_entries(config, frames, s, kappa, window, band_pad, guard, frame)

    results = ordered_map(one, range(replicas), threads)
    counts = [len(r[0]) for r in results]
    censored = sum(r[1] for r in results)
    in_window = sum(r[2] for r in results)
    if in_window and censored / in_window > MAX_DISCARD:
        raise BoundaryContamination(
            f"crossing density at s={s}: {censored}/{in_window} in-window rays touched the boundary"
        )
    dens = np.array(counts, dtype=float) / volume
    se = float(dens.std(ddof=1) / math.sqrt(len(dens))) if len(dens) > 1 else math.nan
    return CrossingDensityEstimate(
        float(s), window, volume, counts, float(dens.mean()), se, float(sector_eps), censored, in_window,
        results[0][3] if results else 0,
    )


def count_entries(entries: Sequence[Sequence[float]], window) -> int:
    """Distinct points (given by their u2 coordinates) falling in a half-open window."""
    d1 = len(window)
    seen = {tuple(e) for e in entries}
    return sum(1 for e in seen if all(a <= e[k] < b for k, (a, b) in enumerate(window[:d1])))


# -- midpoint probability ------------------------------------------------------


@dataclass
class MidpointEstimate:
    u: tuple
    v: tuple
    replicas: int
    hits: int
    p: float
    ci: tuple
    se: float
    discarded: int = 0


def clopper_pearson(hits: int, n: int, level: float = 0.95) -> tuple:
    alpha = 1 - level
    lo = 0.0 if hits == 0 else float(stats.beta.ppf(alpha / 2, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(stats.beta.ppf(1 - alpha / 2, hits + 1, n - hits))
    return lo, hi


def midpoint_probability(
    spec: DistributionSpec,
    u: Sequence[int],
    v: Sequence[int],
    replicas: int,
    seed: int,
    *,
    through: Sequence[int] | None = None,
    model: ScalingModel | None = None,
    guard: int = DEFAULT_GUARD,
    threads: int | None = None,
    force: bool = False,
) -> MidpointEstimate:
    """Fraction of configurations whose geodesic from u to v passes through ``through`` (the origin)."""
    if not spec.continuous and not force:
        raise NonContinuousSpec("midpoint probabilities need continuous weights (pass force=True)")
    u = tuple(int(c) for c in u)
    v = tuple(int(c) for c in v)
    z = tuple([0] * len(u)) if through is None else tuple(int(c) for c in through)
    box = corridor_box(v, model, origin=u)
    for p in (u, v, z):
        if not box.contains(p):
            raise OutOfBox(f"{p} outside the experiment box")
    iu, iv, iz = box.index(u), box.index(v), box.index(z)
    src, dst = min(iu, iv), max(iu, iv)
    shell = box.shell_mask(guard).astype(bool)
    strides = np.asarray(box.strides, dtype=np.int64)

    def one(k: int):
        config = sample_config(box, spec, derive_seed(seed, "midpoint", k))
        _, parent, _, _ = _kernels.dijkstra(
            config.weights, strides, np.array([src], dtype=np.int64), np.array([dst], dtype=np.int64), 1
        )
        chain = _kernels.trace_to_root(parent, dst)
        return bool(shell[chain].any()), bool((chain == iz).any())

    out = ordered_map(one, range(replicas), threads)
    discarded = sum(1 for t, _ in out if t)
    if replicas and discarded / replicas > MAX_DISCARD:
        raise BoundaryContamination(f"midpoint: {discarded}/{replicas} geodesics touched the boundary")
    used = replicas - discarded
    hits = sum(1 for t, h in out if h and not t)
    p = hits / used if used else math.nan
    se = math.sqrt(p * (1 - p) / used) if used else math.nan
    return MidpointEstimate(u, v, used, hits, p, clopper_pearson(hits, used), se, discarded)
