"""Planar coalescence structure: start sites, sources, gaps and coalescence sites.

Everything here is two-dimensional.  The start hyperplane belongs to a
rationally oriented direction theta~ whose normal is proportional to an
integer vector (q, p) with |q| >= |p|, which gives exactly one start site per
integer height.  Positions along that line are measured in height units: a
point is projected along y_theta~ onto the line and its second coordinate
is read off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import BadOrientation, BoundaryContamination, Censored, MissingSide, NonContinuousSpec
from .geometry import DirectionFrame, ScalingModel, delta, frame_from_normal
from .lattice import BoxRegion, DistributionSpec, PassageConfig, sample_config
from .rays import _euclid, box_linear, clopper_pearson, ray_forest, theta_box
from .scaling import CONSERVATIVE_MODEL, DEFAULT_GUARD, MAX_DISCARD, fit_power_law
from .seeding import derive_seed, ordered_map

MAX_DENOMINATOR = 32


@dataclass(frozen=True, eq=False)
class RationalFrame:
    """A frame whose normal is a positive multiple of the integer vector (q, p)."""

    frame: DirectionFrame
    q: int
    p: int

    def form(self, x) -> np.ndarray:
        """Integer-valued q*x1 + p*x2 (exact sign for lattice sites)."""
        x = np.asarray(x)
        return self.q * x[..., 0] + self.p * x[..., 1]

    def u1(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.frame.z_theta

    def height(self, x) -> np.ndarray:
        """Projected position along the start line, in height units."""
        x = np.asarray(x, dtype=float)
        return x[..., 1] - (x @ self.frame.z_theta) * self.frame.y_theta[1]


def _require_2d(frame: DirectionFrame) -> None:
    if frame.d != 2:
        raise BadOrientation("coalescence structure is only defined in d=2")


def snap_rational_frame(frame: DirectionFrame, max_denominator: int = MAX_DENOMINATOR) -> RationalFrame:
    """theta~: normal snapped to the nearest rational slope with bounded denominator.

    The snapped normal keeps the length of z_theta; y is theta rescaled onto
    {x . z = 1}, so theta~ shares theta's direction of travel.
    """
    _require_2d(frame)
    z = frame.z_theta
    if abs(z[0]) >= abs(z[1]):
        f = Fraction(float(z[1] / z[0])).limit_denominator(max_denominator)
        q, p = f.denominator, f.numerator
        if z[0] < 0:
            q, p = -q, -p
    else:
        f = Fraction(float(z[0] / z[1])).limit_denominator(max_denominator)
        p, q = f.denominator, f.numerator
        if z[1] < 0:
            q, p = -q, -p
    vec = np.array([q, p], dtype=float)
    z_new = vec / np.linalg.norm(vec) * float(np.linalg.norm(z))
    return RationalFrame(frame_from_normal(z_new, frame.mu, theta=frame.theta), int(q), int(p))


def rational_axis_frame(mu: float) -> RationalFrame:
    """theta = theta~ = e_1 for a lattice-symmetric shape with g(e_1) = mu."""
    return RationalFrame(frame_from_normal([mu, 0.0], mu, theta=[1.0, 0.0]), 1, 0)


def enumerate_start_sites(rframe: RationalFrame, heights: Sequence[int] | range) -> list:
    """One start site per integer height: the site of H^-_0 whose horizontal neighbour is in the open H^+_0."""
    q, p = rframe.q, rframe.p
    if q == 0 or abs(q) < abs(p):
        raise BadOrientation(f"normal ({q}, {p}) has slope below 1; start sites are not one per height")
    out = []
    for k in heights:
        k = int(k)
        if q > 0:
            x1 = (-p * k) // q  # floor(-pk/q)
        else:
            x1 = -((p * k) // q)  # ceil(-pk/q) for q < 0
        out.append((int(x1), k))
    return out


# -- per-start rows ------------------------------------------------------------


@dataclass(frozen=True)
class StartSiteRow:
    z: tuple
    is_source: bool
    V: tuple | None
    W: tuple | None
    censored: bool
    z_pos: float
    V_pos: float | None
    W_pos: float | None


def sources_and_entries(
    config: PassageConfig,
    frame: DirectionFrame,
    rframe: RationalFrame,
    r: float,
    start_sites: Sequence[Sequence[int]],
    kappa: float = 4.0,
    *,
    guard: int = DEFAULT_GUARD,
) -> list:
    """Rows (z, is_source, V_z, W_z) for every start site from one reverse tree.

    Rays are geodesics to the theta-slab at level kappa*r.  V_z is the last
    site of z's ray in H^-_{theta~,0}; W_z is the first H^+_{theta~,r} site
    after V_z.  Rows whose ray touches the guard shell are marked censored.
    """
    _require_2d(frame)
    box = config.box
    starts = [tuple(int(c) for c in s) for s in start_sites]
    idx = np.array([box.index(s) for s in starts], dtype=np.int64)
    shell = box.shell_mask(guard).astype(np.bool_)
    forest = ray_forest(config, frame, kappa * r, idx, shell=shell)
    coords_form = box_linear(box, [rframe.q, rframe.p])
    scale = float(np.linalg.norm(rframe.frame.z_theta) / math.hypot(rframe.q, rframe.p))
    u1t = coords_form * scale  # sign is exact: the integer form times a positive constant
    V, W, touched, _ = _kernels.scan_sources(forest.parent, u1t, shell, idx, float(r))
    rows = []
    for s, v, w, t in zip(starts, V, W, touched):
        Vs = box.site(v) if v >= 0 else None
        Ws = box.site(w) if w >= 0 else None
        cens = bool(t) or Vs is None or Ws is None
        rows.append(
            StartSiteRow(
                s,
                Vs == s,
                Vs,
                Ws,
                cens,
                float(rframe.height(s)),
                None if Vs is None else float(rframe.height(Vs)),
                None if Ws is None else float(rframe.height(Ws)),
            )
        )
    return rows


# -- gaps and entry intervals --------------------------------------------------


@dataclass(frozen=True)
class GapRecord:
    lo: float
    hi: float
    kind: str = "gap"
    G_min: tuple | None = None
    G_max: tuple | None = None
    G_min_pos: float | None = None
    G_max_pos: float | None = None

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class EntryInterval:
    lo: float
    hi: float
    W: tuple
    sources: tuple = field(default=())


def find_gaps(rows: Sequence[StartSiteRow], r: float | None = None) -> tuple:
    """Gaps between consecutive sources with distinct W, and the entry intervals between gaps.

    Censored rows are ignored.  ``r`` is accepted for symmetry with the
    construction and recorded nowhere else.
    """
    src = sorted((row for row in rows if row.is_source and not row.censored), key=lambda row: row.z_pos)
    gaps, intervals = [], []
    if not src:
        return gaps, intervals
    group = [src[0]]
    for a, b in zip(src, src[1:]):
        if a.W != b.W:
            gaps.append(GapRecord(a.z_pos, b.z_pos))
            intervals.append(EntryInterval(group[0].z_pos, group[-1].z_pos, group[0].W, tuple(g.z for g in group)))
            group = [b]
        else:
            group.append(b)
    intervals.append(EntryInterval(group[0].z_pos, group[-1].z_pos, group[0].W, tuple(g.z for g in group)))
    return gaps, intervals


def duality_holds(rows: Sequence[StartSiteRow], intervals: Sequence[EntryInterval]) -> bool:
    """W_v = W_w exactly when v, w lie in the same entry interval, for all uncensored sources."""
    label = {}
    for k, iv in enumerate(intervals):
        for z in iv.sources:
            label[z] = k
    w_to_labels: dict = {}
    label_to_w: dict = {}
    for row in rows:
        if row.is_source and not row.censored:
            k = label[row.z]
            w_to_labels.setdefault(row.W, set()).add(k)
            label_to_w.setdefault(k, set()).add(row.W)
    return all(len(s) == 1 for s in w_to_labels.values()) and all(len(s) == 1 for s in label_to_w.values())


def entries_monotone(rows: Sequence[StartSiteRow], sources_only: bool = True) -> bool:
    """Projected W positions are weakly increasing in start order (uncensored rows).

    Planarity orders the sources only: a non-source ray may pass behind the
    start line and re-emerge above a higher start (that is what V_z records).
    """
    good = sorted(
        (row for row in rows if not row.censored and (row.is_source or not sources_only)), key=lambda row: row.z_pos
    )
    pos = [row.W_pos for row in good]
    return all(a <= b + 1e-9 for a, b in zip(pos, pos[1:]))


def enlarge_gap(rows: Sequence[StartSiteRow], gap: GapRecord) -> GapRecord:
    """Grow a gap by the start sites whose rays jump across it.

    G_min is the lowest start whose V lies at or above the gap's top, G_max
    the highest start whose V lies at or below its bottom.  If G_min < G_max
    the enlarged gap is the hull of the gap and (G_min, G_max).
    """
    good = sorted((row for row in rows if not row.censored), key=lambda row: row.z_pos)
    if not good:
        raise MissingSide("no uncensored start rows")
    above = [row for row in good if row.V_pos >= gap.hi - 1e-9]
    below = [row for row in good if row.V_pos <= gap.lo + 1e-9]
    if not above or not below:
        raise MissingSide("gap has no source on one side")
    g_min, g_max = above[0], below[-1]
    if g_min is good[0]:
        raise MissingSide("lowest scanned start already jumps above the gap; G_min may lie further down")
    if g_max is good[-1] and g_max.z_pos > gap.lo + 1e-9:
        raise MissingSide("highest scanned start still jumps below the gap; G_max may lie further up")
    lo, hi = gap.lo, gap.hi
    if g_min.z_pos < g_max.z_pos:
        lo, hi = min(lo, g_min.z_pos), max(hi, g_max.z_pos)
    return GapRecord(lo, hi, "enlarged", g_min.z, g_max.z, g_min.z_pos, g_max.z_pos)


def jump_size(rows: Sequence[StartSiteRow], enlarged: GapRecord) -> float:
    """max |z - V_z| over z in {G_min, G_max}, in height units."""
    by_z = {row.z: row for row in rows}
    return max(abs(by_z[z].z_pos - by_z[z].V_pos) for z in (enlarged.G_min, enlarged.G_max))


# -- coalescence ---------------------------------------------------------------


@dataclass(frozen=True)
class CoalescenceRecord:
    x: tuple
    y: tuple
    coalesced: bool
    U: tuple | None
    U1: float | None
    horizon: float
    reentered: bool = False  # merged ray returns to H^-_{theta~,0} after U


def _record_from_chains(box, chain_x, chain_y, rframe, horizon, x, y) -> CoalescenceRecord:
    common = set(chain_y.tolist())
    U = next((int(v) for v in chain_x if int(v) in common), -1)
    if U < 0:
        return CoalescenceRecord(x, y, False, None, None, horizon)
    Us = box.site(U)
    U1 = float(rframe.u1(Us))
    after = chain_x[np.flatnonzero(chain_x == U)[0] :]
    reentered = bool(np.any(rframe.form(np.array(box.sites_of(after[1:]))) <= 0)) if after.size > 1 else False
    return CoalescenceRecord(x, y, U1 < horizon, Us, U1, horizon, reentered)


def coalescence_site(
    config: PassageConfig,
    x: Sequence[int],
    y: Sequence[int],
    frame: DirectionFrame,
    horizon: float,
    kappa: float = 4.0,
    *,
    rframe: RationalFrame | None = None,
    guard: int = DEFAULT_GUARD,
) -> CoalescenceRecord:
    """First site from which the approximate theta-rays from x and y coincide.

    ``coalesced`` is false when they do not merge before H_{theta~,horizon};
    U and U1 are still filled in if they merge later on the way to the slab.
    """
    _require_2d(frame)
    x, y = tuple(int(c) for c in x), tuple(int(c) for c in y)
    if x == y:
        raise ValueError("x and y must differ")
    rframe = rframe or snap_rational_frame(frame)
    box = config.box
    a, b = sorted([x, y])  # symmetric in (x, y)
    idx = np.array([box.index(a), box.index(b)], dtype=np.int64)
    forest = ray_forest(config, frame, kappa * horizon, idx, guard=guard)
    ca, cb = forest.chain(int(idx[0])), forest.chain(int(idx[1]))
    if forest.shell[ca].any() or forest.shell[cb].any():
        raise Censored(f"ray from {x} or {y} touched the box boundary")
    rec = _record_from_chains(box, ca, cb, rframe, float(horizon), a, b)
    return CoalescenceRecord(x, y, rec.coalesced, rec.U, rec.U1, rec.horizon, rec.reentered)


@dataclass
class CoalescenceTail:
    separation: int
    r_grid: list
    pairs: int  # uncensored + censored pair samples
    censored: int  # boundary contact or no merge before the target slab
    rows: list  # (r, P_main, P_pessimistic, P_optimistic, CI low, CI high, cluster SE)
    slope: float | None
    slope_se: float | None
    slope_pessimistic: float | None
    slope_optimistic: float | None
    pairs_per_replica: int
    reentered: int = 0
    U1: list = field(default_factory=list)  # per pair, None if censored
    touched: int = 0


def _pair_layout(separation: int, pairs: int, spacing: int) -> list:
    return [(j * spacing, j * spacing + separation) for j in range(pairs)]


def tail_geometry(
    rframe: RationalFrame,
    frame: DirectionFrame,
    separation: int,
    r_max: float,
    kappa: float,
    pairs: int,
    spacing: int,
    model: ScalingModel | None,
) -> BoxRegion:
    model = model or CONSERVATIVE_MODEL
    heights = (0, (pairs - 1) * spacing + separation)
    tube = 4 * delta(model, _euclid(frame, kappa * r_max))
    behind = 2 * delta(model, _euclid(frame, r_max)) * float(np.linalg.norm(frame.z_theta))
    u1_range = (-behind - frame.fat_width, kappa * r_max + frame.fat_width + 1)
    # heights are second coordinates; convert the height span to a u2 span
    starts = enumerate_start_sites(rframe, heights)
    u2 = [float(frame.basis[0] @ (np.asarray(s, float) - (np.asarray(s, float) @ frame.z_theta) * frame.y_theta)) for s in starts]
    return theta_box(frame, u1_range, [(min(u2) - tube, max(u2) + tube)])


def coalescence_tail(
    spec: DistributionSpec,
    separation: int,
    r_grid: Sequence[float],
    replicas: int,
    seed: int,
    *,
    frame: DirectionFrame,
    rframe: RationalFrame | None = None,
    kappa: float = 4.0,
    pairs_per_replica: int = 1,
    pair_spacing: int | None = None,
    model: ScalingModel | None = None,
    guard: int = DEFAULT_GUARD,
    threads: int | None = None,
    force: bool = False,
) -> CoalescenceTail:
    """P(U1 >= r) for start sites ``separation`` heights apart, with censoring bracketed.

    Each replica places ``pairs_per_replica`` start pairs along the start
    line, ``pair_spacing`` heights apart, and serves all of them from one
    reverse tree.  Censored pairs (boundary contact, or no merge before the
    target slab) count as U1 >= r in the main and optimistic columns and as
    U1 < r in the pessimistic one.
    """
    _require_2d(frame)
    if not spec.continuous and not force:
        raise NonContinuousSpec("coalescence needs continuous weights (pass force=True)")
    rframe = rframe or snap_rational_frame(frame)
    r_grid = sorted(float(r) for r in r_grid)
    r_max = r_grid[-1]
    model_ = model or CONSERVATIVE_MODEL
    spacing = pair_spacing or max(4 * separation, int(math.ceil(2 * delta(model_, _euclid(frame, r_max)))))
    layout = _pair_layout(separation, pairs_per_replica, spacing)
    box = tail_geometry(rframe, frame, separation, r_max, kappa, pairs_per_replica, spacing, model)
    heights = sorted({h for pair in layout for h in pair})
    starts = enumerate_start_sites(rframe, heights)
    site_of = dict(zip(heights, starts))
    idx = np.array([box.index(s) for s in starts], dtype=np.int64)
    pos = {h: k for k, h in enumerate(heights)}
    shell = box.shell_mask(guard).astype(np.bool_)
    u1 = box_linear(box, frame.z_theta)

    def one(k: int):
        config = sample_config(box, spec, derive_seed(seed, f"coalesce:{separation}", k))
        forest = ray_forest(config, frame, kappa * r_max, idx, u1=u1, shell=shell)
        out = []
        for hx, hy in layout:
            ca, cb = forest.chain(int(idx[pos[hx]])), forest.chain(int(idx[pos[hy]]))
            if shell[ca].any() or shell[cb].any():
                out.append((None, False, True))
                continue
            rec = _record_from_chains(box, ca, cb, rframe, r_max, site_of[hx], site_of[hy])
            out.append((rec.U1, rec.reentered, False))
        return out

    per_rep = ordered_map(one, range(replicas), threads)
    flat = [u for rep in per_rep for u, _, _ in rep]
    reentered = sum(1 for rep in per_rep for _, re, _ in rep if re)
    touched = sum(1 for rep in per_rep for _, _, t in rep if t)
    n = len(flat)
    censored = sum(1 for u in flat if u is None)
    if n and touched / n > MAX_DISCARD:
        raise BoundaryContamination(f"coalescence tail: {touched}/{n} pairs touched the box boundary")
    rows = []
    for r in r_grid:
        known = sum(1 for u in flat if u is not None and u >= r)
        p_opt = (known + censored) / n
        p_pess = known / n
        per = [sum(1 for u, _, _ in rep if u is None or u >= r) / len(rep) for rep in per_rep]
        cse = float(np.std(per, ddof=1) / math.sqrt(len(per))) if len(per) > 1 else math.nan
        lo, hi = clopper_pearson(known + censored, n)
        rows.append((r, p_opt, p_pess, p_opt, lo, hi, cse))

    def slope(col):
        ys = [row[col] for row in rows]
        if len(rows) < 3 or r_grid[0] <= 0 or not all(y > 0 for y in ys):
            return None, None
        _, b, se, _ = fit_power_law(r_grid, ys)
        return b, se

    s_main, s_se = slope(1)
    s_pess, _ = slope(2)
    s_opt, _ = slope(3)
    return CoalescenceTail(
        separation, r_grid, n, censored, rows, s_main, s_se, s_pess, s_opt, pairs_per_replica, reentered, flat, touched
    )
