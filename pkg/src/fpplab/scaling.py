"""Monte Carlo estimates of the time constant, limit shape, sigma_r and the exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import BoundaryContamination, DegenerateShape, FitDegenerate
from .geometry import DirectionFrame, ScalingModel, axis_frame, delta
from .lattice import BoxRegion, DistributionSpec, sample_config
from .seeding import derive_seed, ordered_map

#: Width model used for box sizing before anything has been fitted.  It
#: overestimates sigma_r for the standard continuous laws, so boxes err wide.
CONSERVATIVE_MODEL = ScalingModel(1.0, 1.0 / 3.0)
DEFAULT_MARGIN = 0.25
DEFAULT_GUARD = 1
MAX_DISCARD = 0.05


# -- box sizing ----------------------------------------------------------------


def corridor_box(
    target: Sequence[float],
    model: ScalingModel | None = None,
    margin: float = DEFAULT_MARGIN,
    width_factor: float = 8.0,
    origin: Sequence[float] | None = None,
) -> BoxRegion:
    """Box around the segment origin -> target: length r(1+2*margin), width max(8*Delta(r), r/2).

    The box is the lattice bounding box of that cylinder, so for off-axis
    segments it is somewhat larger than the cylinder itself.
    """
    model = model or CONSERVATIVE_MODEL
    target = np.asarray(target, dtype=float)
    origin = np.zeros_like(target) if origin is None else np.asarray(origin, dtype=float)
    seg = target - origin
    r = float(np.linalg.norm(seg))
    if r == 0:
        raise ValueError("degenerate corridor")
    t = seg / r
    half_w = 0.5 * max(width_factor * delta(model, r), r / 2.0)
    a0, a1 = -margin * r, (1.0 + margin) * r
    lo, hi = [], []
    for i in range(t.size):
        ends = (origin[i] + a0 * t[i], origin[i] + a1 * t[i])
        spread = half_w * math.sqrt(max(0.0, 1.0 - t[i] ** 2))
        lo.append(int(math.floor(min(ends) - spread)) - 1)
        hi.append(int(math.ceil(max(ends) + spread)) + 1)
    return BoxRegion(tuple(lo), tuple(hi))


def _replica_seed(seed: int, tag: str, k: int) -> int:
    return derive_seed(seed, tag, k)


# -- radial sampling core ------------------------------------------------------


@dataclass
class RadialSamples:
    """Per-replica passage times to a list of targets from the origin.

    Entries are NaN where the geodesic touched the boundary guard.
    """

    targets: list
    times: np.ndarray  # (replicas, targets)
    wander: np.ndarray  # max |u2| along each geodesic
    touched: np.ndarray  # bool
    continuous: bool


def radial_samples(
    spec: DistributionSpec,
    targets: Sequence[Sequence[int]],
    replicas: int,
    seed: int,
    tag: str,
    *,
    box: BoxRegion | None = None,
    frame: DirectionFrame | None = None,
    model: ScalingModel | None = None,
    guard: int = DEFAULT_GUARD,
    threads: int | None = None,
) -> RadialSamples:
    """One geodesic tree per replica from the origin, stopped once every target is settled."""
    targets = [tuple(int(c) for c in t) for t in targets]
    d = len(targets[0])
    if box is None:
        far = max(targets, key=lambda t: sum(c * c for c in t))
        box = corridor_box(far, model)
    frame = frame or axis_frame(d)
    origin = tuple([0] * d)
    src = np.array([box.index(origin)], dtype=np.int64)
    tgt = np.array([box.index(t) for t in targets], dtype=np.int64)
    shell = box.shell_mask(guard).astype(bool)
    coords = box.coords().astype(float)
    # transverse coordinates of every site, computed once for all replicas
    u2 = np.linalg.norm(
        (coords - np.outer(coords @ frame.z_theta, frame.y_theta)) @ frame.basis.T, axis=1
    )
    strides = np.asarray(box.strides, dtype=np.int64)

    def one(k: int):
        config = sample_config(box, spec, _replica_seed(seed, tag, k))
        dist, parent, _, _ = _kernels.dijkstra(config.weights, strides, src, tgt, 2)
        t = np.empty(len(tgt))
        w = np.empty(len(tgt))
        hit = np.zeros(len(tgt), dtype=bool)
        for j, v in enumerate(tgt):
            chain = _kernels.trace_to_root(parent, v)
            hit[j] = bool(shell[chain].any())
            t[j] = dist[v]
            w[j] = float(u2[chain].max())
        return t, w, hit

    out = ordered_map(one, range(replicas), threads)
    times = np.array([o[0] for o in out]).reshape(replicas, len(tgt))
    wander = np.array([o[1] for o in out]).reshape(replicas, len(tgt))
    touched = np.array([o[2] for o in out]).reshape(replicas, len(tgt))
    times = np.where(touched, np.nan, times)
    wander = np.where(touched, np.nan, wander)
    return RadialSamples(targets, times, wander, touched, spec.continuous)


def _check_discards(touched: np.ndarray, what: str) -> None:
    if touched.size == 0:
        return
    frac = touched.mean(axis=0)
    worst = float(frac.max())
    if worst > MAX_DISCARD:
        raise BoundaryContamination(f"{what}: {worst:.1%} of samples touched the box boundary")


def _mean_se(x: np.ndarray) -> tuple:
    x = x[~np.isnan(x)]
    n = x.size
    if n == 0:
        return math.nan, math.nan, 0
    if n == 1:
        return float(x[0]), math.nan, 1
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)), n


def _std_se(x: np.ndarray) -> tuple:
    """Sample standard deviation and its delta-method SE (kurtosis-aware)."""
    x = x[~np.isnan(x)]
    n = x.size
    if n < 2:
        return math.nan, math.nan, n
    s2 = float(x.var(ddof=1))
    s = math.sqrt(s2)
    if s == 0:
        return 0.0, 0.0, n
    m4 = float(np.mean((x - x.mean()) ** 4))
    var_s2 = max(m4 - s2 * s2 * (n - 3) / (n - 1), 0.0) / n
    return s, math.sqrt(var_s2) / (2 * s), n


HIST_EDGES = np.arange(-4.0, 4.01, 0.5)


def standardized_histogram(x: np.ndarray, edges: np.ndarray = HIST_EDGES) -> list:
    """Counts of (x - mean)/sd between ``edges``, plus underflow and overflow bins at the ends."""
    x = x[~np.isnan(x)]
    counts = np.zeros(len(edges) + 1, dtype=np.int64)
    if x.size >= 2 and x.std() > 0:
        z = (x - x.mean()) / x.std(ddof=1)
        counts = np.bincount(np.searchsorted(edges, z, side="right"), minlength=len(edges) + 1)
    return [int(c) for c in counts]


# -- time constant -------------------------------------------------------------


@dataclass
class MeanTable:
    direction: tuple
    rows: list  # (n, mean T(0, n x)/n, SE, replicas used, discarded)

    def mean(self, n: int) -> float:
        return next(r[1] for r in self.rows if r[0] == n)

    def se(self, n: int) -> float:
        return next(r[2] for r in self.rows if r[0] == n)

    def subadditivity(self, k: float = 3.0) -> list:
        """(n, m_2n - m_n, combined SE, holds) for each n with 2n also tabulated."""
        by_n = {r[0]: r for r in self.rows}
        out = []
        for n in sorted(by_n):
            if 2 * n in by_n:
                a, b = by_n[n], by_n[2 * n]
                se = math.hypot(a[2], b[2])
                out.append((n, b[1] - a[1], se, b[1] <= a[1] + k * se))
        return out


def estimate_time_constant(
    spec: DistributionSpec,
    direction: Sequence[int],
    n_list: Sequence[int],
    replicas: int,
    seed: int,
    *,
    model: ScalingModel | None = None,
    threads: int | None = None,
) -> MeanTable:
    """Empirical E T(0, n x)/n for each n, one tree per replica serving every n."""
    if replicas < 2:
        raise ValueError("need at least two replicas")
    x = tuple(int(c) for c in direction)
    n_list = sorted(set(int(n) for n in n_list))
    targets = [tuple(n * c for c in x) for n in n_list]
    samples = radial_samples(spec, targets, replicas, seed, "time-constant", model=model, threads=threads)
    _check_discards(samples.touched, "time constant")
    rows = []
    for j, n in enumerate(n_list):
        m, se, used = _mean_se(samples.times[:, j] / n)
        rows.append((n, m, se, used, int(samples.touched[:, j].sum())))
    return MeanTable(x, rows)


# -- sigma and transverse wandering --------------------------------------------


def fit_power_law(r: Sequence[float], y: Sequence[float]) -> tuple:
    """Least squares of log y on log r: (prefactor, exponent, exponent SE, residual norm)."""
    lr = np.log(np.asarray(r, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        ly = np.log(np.asarray(y, dtype=float))
    if lr.size < 3:
        raise FitDegenerate(f"need at least 3 points, got {lr.size}")
    if not np.all(np.isfinite(ly)):
        raise FitDegenerate("nonpositive values in power-law fit")
    X = np.column_stack([np.ones_like(lr), lr])
    coef, _, _, _ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    dof = lr.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return math.exp(coef[0]), float(coef[1]), math.sqrt(cov[1, 1]), float(np.linalg.norm(resid))


@dataclass
class SigmaTable:
    rows: list  # (r, sigma_hat, SE, replicas used)
    model: ScalingModel | None
    chi_se: float | None = None
    note: str = ""
    histograms: dict = field(default_factory=dict)  # r -> standardized_histogram counts

    def sigma(self, r: float) -> float:
        return next(row[1] for row in self.rows if row[0] == r)


@dataclass
class TransverseTable:
    rows: list  # (r, mean max |u2|, SE, replicas used)
    xi_direct: float | None
    xi_se: float | None
    continuous: bool
    note: str = ""


def _sigma_table(r_list, times) -> SigmaTable:
    rows = []
    for j, r in enumerate(r_list):
        s, se, n = _std_se(times[:, j])
        rows.append((r, s, se, n))
    if len(rows) < 3:
        raise FitDegenerate(f"need at least 3 radii, got {len(rows)}")
    hist = {r: standardized_histogram(times[:, j]) for j, r in enumerate(r_list)}
    sig = np.array([row[1] for row in rows])
    if np.any(~(sig > 0)):
        return SigmaTable(rows, None, None, "degenerate: zero fluctuations, no fit", hist)
    A, chi, chi_se, resid = fit_power_law(r_list, sig)
    try:
        model = ScalingModel(A, chi, float(min(r_list)), float(max(r_list)), resid)
    except ValueError as exc:
        return SigmaTable(rows, None, chi_se, f"fit outside model range: {exc}", hist)
    return SigmaTable(rows, model, chi_se, histograms=hist)


def _transverse_table(r_list, wander, continuous: bool) -> TransverseTable:
    rows = []
    for j, r in enumerate(r_list):
        m, se, n = _mean_se(wander[:, j])
        rows.append((r, m, se, n))
    if not continuous:
        return TransverseTable(rows, None, None, False, "non-continuous weights: excluded from xi fit")
    means = [row[1] for row in rows]
    if len(rows) < 3 or not all(m > 0 for m in means):
        return TransverseTable(rows, None, None, True, "too few usable radii for a fit")
    _, xi, xi_se, _ = fit_power_law(r_list, means)
    return TransverseTable(rows, xi, xi_se, True)


def _axis_targets(r_list, d):
    return [tuple([int(r)] + [0] * (d - 1)) for r in r_list]


def estimate_scaling(
    spec: DistributionSpec,
    r_list: Sequence[int],
    replicas: int,
    seed: int,
    *,
    d: int = 2,
    model: ScalingModel | None = None,
    threads: int | None = None,
    tag: str = "scaling",
) -> tuple:
    """sigma_r and transverse wandering along e_1 from one shared set of replicas."""
    r_list = sorted(set(int(r) for r in r_list))
    samples = radial_samples(spec, _axis_targets(r_list, d), replicas, seed, tag, model=model, threads=threads)
    _check_discards(samples.touched, "scaling")
    return (
        _sigma_table(r_list, samples.times),
        _transverse_table(r_list, samples.wander, samples.continuous),
    )


def estimate_sigma(
    spec: DistributionSpec,
    r_list: Sequence[int],
    replicas: int,
    seed: int,
    *,
    d: int = 2,
    model: ScalingModel | None = None,
    threads: int | None = None,
) -> SigmaTable:
    """Sample standard deviation of T(0, r e_1) per r and a power-law fit."""
    if len(set(r_list)) < 3:
        raise FitDegenerate(f"need at least 3 radii, got {len(set(r_list))}")
    return estimate_scaling(spec, r_list, replicas, seed, d=d, model=model, threads=threads, tag="sigma")[0]


def measure_transverse_fluctuation(
    spec: DistributionSpec,
    r_list: Sequence[int],
    replicas: int,
    seed: int,
    *,
    d: int = 2,
    model: ScalingModel | None = None,
    threads: int | None = None,
) -> TransverseTable:
    """Mean of the largest transverse excursion of the geodesic 0 -> r e_1, and its log-log slope."""
    r_list = sorted(set(int(r) for r in r_list))
    samples = radial_samples(
        spec, _axis_targets(r_list, d), replicas, seed, "transverse", model=model, threads=threads
    )
    _check_discards(samples.touched, "transverse")
    return _transverse_table(r_list, samples.wander, samples.continuous)


# -- limit shape ---------------------------------------------------------------


def canonical_direction(theta: Sequence[float]) -> tuple:
    """Representative of theta's orbit under coordinate permutations and reflections."""
    a = np.abs(np.asarray(theta, dtype=float))
    a = a / np.linalg.norm(a)
    return tuple(float(c) for c in sorted(a, reverse=True))


def _canon_angle(theta: Sequence[float]) -> float:
    c = canonical_direction(theta)
    return math.atan2(c[1], c[0])  # in [0, pi/4]


@dataclass
class LimitShapeEstimate:
    """Direction table of g(theta) = g on the unit sphere, keyed by canonical direction."""

    d: int
    directions: list  # canonical unit vectors
    g_values: np.ndarray
    g_se: np.ndarray
    spec: DistributionSpec | None = None
    radius: float | None = None
    replicas: int = 0
    raw: list = field(default_factory=list)  # (direction, mean, se) before symmetrization

    def __post_init__(self):
        self.g_values = np.asarray(self.g_values, dtype=float)
        self.g_se = np.asarray(self.g_se, dtype=float)
        if np.any(~(self.g_values > 0)):
            raise DegenerateShape("nonpositive g estimate")
        if self.d == 2:
            ang = np.array([math.atan2(c[1], c[0]) for c in self.directions])
            order = np.argsort(ang)
            self._angles = ang[order]
            self._g_sorted = self.g_values[order]

    @classmethod
    def from_norm(cls, norm, directions: Sequence[Sequence[float]]) -> "LimitShapeEstimate":
        dirs = sorted({canonical_direction(t) for t in directions})
        g = [float(norm(np.array(t))) for t in dirs]
        return cls(len(dirs[0]), dirs, np.array(g), np.zeros(len(g)))

    def G(self, theta: Sequence[float]) -> float:
        """Estimated g on the unit vector along theta."""
        if self.d == 2:
            phi = _canon_angle(theta)
            return float(np.interp(phi, self._angles, self._g_sorted))
        c = np.array(canonical_direction(theta))
        dists = [float(np.linalg.norm(c - np.array(t))) for t in self.directions]
        k = int(np.argmin(dists))
        if dists[k] > 1e-6:
            raise DegenerateShape(f"direction {tuple(c)} not in the shape table")
        return float(self.g_values[k])

    def g(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        n = float(np.linalg.norm(x))
        return 0.0 if n == 0 else n * self.G(x)

    @property
    def mu(self) -> float:
        return self.G(np.eye(self.d)[0])

    def curvature(self) -> list:
        """d=2 only: (angle, second difference of the radius, curvature) per tabulated angle.

        The boundary is r(phi) = 1/g(phi); curvature of a polar curve is
        (r^2 + 2 r'^2 - r r'') / (r^2 + r'^2)^(3/2), positive where the
        boundary is strictly convex.
        """
        if self.d != 2:
            raise ValueError("curvature diagnostic is implemented for d=2")
        ang, g = self._angles, self._g_sorted
        # mirror across phi = 0 and phi = pi/4 so end points have neighbours
        ext_a = np.concatenate([-ang[::-1], ang, math.pi / 2 - ang[::-1]])
        ext_r = np.concatenate([1 / g[::-1], 1 / g, 1 / g[::-1]])
        keep = np.concatenate([[True], np.diff(ext_a) > 1e-12])
        ext_a, ext_r = ext_a[keep], ext_r[keep]
        out = []
        for phi in ang:
            k = int(np.argmin(np.abs(ext_a - phi)))
            if k == 0 or k == ext_a.size - 1:
                continue
            h1, h2 = ext_a[k] - ext_a[k - 1], ext_a[k + 1] - ext_a[k]
            r0, rm, rp = ext_r[k], ext_r[k - 1], ext_r[k + 1]
            d1 = (rp - rm) / (h1 + h2)
            d2 = 2 * (h1 * rp - (h1 + h2) * r0 + h2 * rm) / (h1 * h2 * (h1 + h2))
            kappa = (r0 * r0 + 2 * d1 * d1 - r0 * d2) / (r0 * r0 + d1 * d1) ** 1.5
            out.append((float(phi), float(d2), float(kappa)))
        return out

    def symmetry_violations(self, k: float = 3.0) -> list:
        """Raw directions in the same symmetry orbit whose estimates differ by more than k SE."""
        bad = []
        for i, (ti, mi, si) in enumerate(self.raw):
            for tj, mj, sj in self.raw[i + 1 :]:
                if canonical_direction(ti) == canonical_direction(tj):
                    if abs(mi - mj) > k * math.hypot(si, sj):
                        bad.append((ti, tj, mi - mj))
        return bad


def direction_grid_2d(n: int) -> list:
    """n directions equally spaced in angle over [0, pi/4]."""
    return [(math.cos(a), math.sin(a)) for a in np.linspace(0.0, math.pi / 4, n)]


def estimate_limit_shape(
    spec: DistributionSpec,
    directions: Sequence[Sequence[float]],
    radius: float,
    replicas: int,
    seed: int,
    *,
    margin: float = DEFAULT_MARGIN,
    guard: int = DEFAULT_GUARD,
    threads: int | None = None,
) -> LimitShapeEstimate:
    """g(theta) ~ mean T(0, round(radius*theta))/radius over a cube of half-side radius(1+margin)."""
    directions = [tuple(float(c) for c in t) for t in directions]
    d = len(directions[0])
    unit = [np.asarray(t) / np.linalg.norm(t) for t in directions]
    targets = [tuple(int(math.floor(radius * c + 0.5)) for c in u) for u in unit]
    half = int(math.ceil(radius * (1 + margin))) + 1
    box = BoxRegion(tuple([-half] * d), tuple([half] * d))
    uniq = sorted(set(targets))
    samples = radial_samples(spec, uniq, replicas, seed, "limit-shape", box=box, guard=guard, threads=threads)
    _check_discards(samples.touched, "limit shape")
    col = {t: j for j, t in enumerate(uniq)}
    raw = []
    for u, t in zip(unit, targets):
        m, se, _ = _mean_se(samples.times[:, col[t]] / radius)
        raw.append((tuple(float(c) for c in u), m, se))
    # pool directions sharing a symmetry orbit
    pooled: dict = {}
    for u, m, se in raw:
        pooled.setdefault(canonical_direction(u), []).append((m, se))
    keys = sorted(pooled)
    g = [float(np.mean([m for m, _ in pooled[k]])) for k in keys]
    se = [float(math.sqrt(sum(s * s for _, s in pooled[k])) / len(pooled[k])) for k in keys]
    return LimitShapeEstimate(d, keys, np.array(g), np.array(se), spec, radius, replicas, raw)


# -- Prop. h - g gap -------------------------------------------------------------


@dataclass
class GapReport:
    rows: list  # (n, gap, SE, C_n, within)
    C: float | None
    g_proxy: float


def check_hg_gap(mean_table: MeanTable, sigma_table: SigmaTable) -> GapReport:
    """Compare E T(0,nx)/n - g with sigma_n log n / n, g proxied by the largest-n mean.

    C_n = n * gap / (sigma_n log n); C is their median and each row reports
    whether its gap lies within C * sigma_n * log(n) / n (plus 2 SE).
    """
    rows_m = sorted(mean_table.rows)
    n_max, g_proxy, se_max = rows_m[-1][0], rows_m[-1][1], rows_m[-1][2]
    sig = {row[0]: row[1] for row in sigma_table.rows}
    model = sigma_table.model
    prelim = []
    for n, m, se, _, _ in rows_m:
        gap = m - g_proxy
        gse = 0.0 if n == n_max else math.hypot(se, se_max)
        s = sig.get(n)
        if s is None and model is not None:
            s = model.sigma(n)
        scale = None if not s or n < 2 else s * math.log(n) / n
        c_n = gap / scale if scale else None
        prelim.append((n, gap, gse, c_n, scale))
    cs = [c for n, _, _, c, _ in prelim if c is not None and n != n_max]
    C = float(np.median(cs)) if cs else None
    rows = []
    for n, gap, gse, c_n, scale in prelim:
        if scale is None:
            within = abs(gap) <= 2 * gse + 1e-15
        else:
            within = gap <= (C or 0.0) * scale + 2 * gse + 1e-15
        rows.append((n, gap, gse, c_n, bool(within)))
    return GapReport(rows, C, g_proxy)
