"""Direction frames, theta-coordinates, scaling functions and path diagnostics.

A frame for a direction theta carries the boundary point ``y_theta`` of the
limit shape and the normal ``z_theta`` of its tangent hyperplane, scaled so
that ``y_theta . z_theta = 1``.  Every vector then splits as
``u = u1 * y_theta + (u - u1 * y_theta)`` with ``u1 = u . z_theta``; the
second piece lies in the hyperplane ``z_theta`` annihilates and is expressed
in an orthonormal basis of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import DegenerateShape, LengthMismatch, NoEntry, NonpositiveArg, ZeroVector

_FRAME_TOL = 1e-9


def _ro(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def orthonormal_complement(z: Sequence[float]) -> np.ndarray:
    """Rows form an orthonormal basis of the hyperplane orthogonal to ``z``.

    In d=2 the single row is ``z`` rotated by +90 degrees, so that for a
    normal with positive first coordinate it points up the second axis.
    """
    z = np.asarray(z, dtype=float)
    d = z.size
    nz = np.linalg.norm(z)
    if nz == 0:
        raise ZeroVector("zero normal")
    if d == 2:
        return np.array([[-z[1], z[0]]]) / nz
    q, _ = np.linalg.qr(np.column_stack([z / nz, np.eye(d)]))
    basis = q[:, 1:d].T.copy()
    # fix signs deterministically: largest-magnitude entry positive
    for k in range(basis.shape[0]):
        j = int(np.argmax(np.abs(basis[k])))
        if basis[k, j] < 0:
            basis[k] = -basis[k]
    return basis


@dataclass(frozen=True, eq=False)
class DirectionFrame:
    theta: np.ndarray
    y_theta: np.ndarray
    z_theta: np.ndarray
    basis: np.ndarray
    mu: float = 1.0  # g(e_1); sets the thickness mu*sqrt(d) of fattened hyperplanes

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        theta = theta / np.linalg.norm(theta)
        y, z = np.asarray(self.y_theta, float), np.asarray(self.z_theta, float)
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        d = theta.size
        if y.size != d or z.size != d or basis.shape != (d - 1, d):
            raise DegenerateShape("frame components have inconsistent dimensions")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise DegenerateShape("non-finite frame")
        if abs(float(y @ z) - 1.0) > _FRAME_TOL:
            raise DegenerateShape(f"y.z = {float(y @ z)!r}, expected 1")
        if basis.size and (
            np.abs(basis @ z).max() > _FRAME_TOL * np.linalg.norm(z)
            or np.abs(basis @ basis.T - np.eye(d - 1)).max() > _FRAME_TOL
        ):
            raise DegenerateShape("basis must be orthonormal and orthogonal to z")
        cos_yz = float(y @ z) / (np.linalg.norm(y) * np.linalg.norm(z))
        if cos_yz < 1.0 / math.sqrt(d) - 1e-12:
            raise DegenerateShape(f"angle between y and z too large (cos={cos_yz:.4f})")
        object.__setattr__(self, "theta", _ro(theta))
        object.__setattr__(self, "y_theta", _ro(y))
        object.__setattr__(self, "z_theta", _ro(z))
        object.__setattr__(self, "basis", _ro(basis))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def fat_width(self) -> float:
        return self.mu * math.sqrt(self.d)

    def u1(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.z_theta

    def u2(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - np.multiply.outer(x @ self.z_theta, self.y_theta)) @ self.basis.T

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "y_theta": self.y_theta.tolist(),
            "z_theta": self.z_theta.tolist(),
            "basis": self.basis.tolist(),
            "mu": self.mu,
        }


def axis_frame(d: int, mu: float = 1.0, axis: int = 0) -> DirectionFrame:
    """Frame for a coordinate direction of a lattice-symmetric shape with g(e_1) = mu."""
    e = np.zeros(d)
    e[axis] = 1.0
    others = [np.eye(d)[k] for k in range(d) if k != axis]
    if d == 2:
        others = [orthonormal_complement(e)[0]]
    return DirectionFrame(e, e / mu, mu * e, np.array(others), mu)


def frame_from_normal(z: Sequence[float], mu: float, theta: Sequence[float] | None = None) -> DirectionFrame:
    """Frame with prescribed tangent normal; ``y`` is ``theta`` rescaled onto {x . z = 1}."""
    z = np.asarray(z, dtype=float)
    theta = z / np.linalg.norm(z) if theta is None else np.asarray(theta, dtype=float)
    y = theta / float(theta @ z)
    return DirectionFrame(theta, y, z, orthonormal_complement(z), mu)


class NormShape:
    """A known norm used in place of an estimated limit shape (tests, references)."""

    def __init__(self, norm: Callable, d: int):
        self.norm = norm
        self.d = d

    def g(self, x) -> float:
        return float(self.norm(np.asarray(x, dtype=float)))

    def G(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return self.g(theta / np.linalg.norm(theta))

    @property
    def mu(self) -> float:
        return self.g(np.eye(self.d)[0])


def euclidean_shape(d: int, scale: float = 1.0) -> NormShape:
    return NormShape(lambda x: scale * float(np.linalg.norm(x)), d)


def l1_shape(d: int, scale: float = 1.0) -> NormShape:
    return NormShape(lambda x: scale * float(np.abs(x).sum()), d)


def frame_directions(theta: Sequence[float], h: float = 0.02) -> list:
    """The directions build_frame evaluates: theta and theta +/- h*b for each tangent b."""
    theta = np.asarray(theta, dtype=float)
    theta = theta / np.linalg.norm(theta)
    out = [theta]
    for b in orthonormal_complement(theta):
        for sgn in (1.0, -1.0):
            v = theta + sgn * h * b
            out.append(v / np.linalg.norm(v))
    return out


def build_frame(theta: Sequence[float], shape, h: float = 0.02) -> DirectionFrame:
    """Frame from a shape estimate; the tangent normal is the gradient of g at theta,
    with tangential derivatives taken by central differences on the sphere."""
    theta = np.asarray(theta, dtype=float)
    theta = theta / np.linalg.norm(theta)
    G0 = shape.G(theta)
    if not (np.isfinite(G0) and G0 > 0):
        raise DegenerateShape(f"g(theta) = {G0!r}")
    grad = G0 * theta
    for b in orthonormal_complement(theta):
        vp = theta + h * b
        vm = theta - h * b
        dG = (shape.G(vp / np.linalg.norm(vp)) - shape.G(vm / np.linalg.norm(vm))) / (2 * h)
        grad = grad + dG * b
    if not np.all(np.isfinite(grad)):
        raise DegenerateShape("non-finite tangent normal")
    y = theta / G0
    z = grad / float(y @ grad)
    mu = float(shape.G(np.eye(theta.size)[0]))
    return DirectionFrame(theta, y, z, orthonormal_complement(z), mu)


@dataclass(frozen=True)
class ThetaCoords:
    u1: float
    u2: tuple


def theta_coordinates(frame: DirectionFrame, u: Sequence[float]) -> ThetaCoords:
    u = np.asarray(u, dtype=float)
    u1 = float(u @ frame.z_theta)
    u2 = frame.basis @ (u - u1 * frame.y_theta)
    return ThetaCoords(u1, tuple(float(c) for c in u2))


def from_theta_coordinates(frame: DirectionFrame, tc: ThetaCoords) -> np.ndarray:
    return tc.u1 * frame.y_theta + np.asarray(tc.u2, dtype=float) @ frame.basis


# -- scaling model -----------------------------------------------------------


@dataclass(frozen=True)
class ScalingModel:
    """sigma(r) = A * r**chi, with the derived wandering scale and cost functions."""

    A: float
    chi: float
    r_min: float | None = None
    r_max: float | None = None
    residual: float | None = None
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        if not (self.A > 0 and math.isfinite(self.A)):
            raise NonpositiveArg(f"A must be positive, got {self.A}")
        if not 0 < self.chi < 1:
            raise NonpositiveArg(f"chi must lie in (0, 1), got {self.chi}")

    @property
    def xi(self) -> float:
        return 0.5 * (1.0 + self.chi)

    def sigma(self, r: float) -> float:
        _positive(r)
        return self.A * r**self.chi

    def to_text(self) -> str:
        lines = [f"A = {self.A!r}", f"chi = {self.chi!r}"]
        for key in ("r_min", "r_max", "residual"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key} = {val!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScalingModel":
        vals = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            vals[key.strip()] = float(val)
        return cls(
            vals["A"], vals["chi"], vals.get("r_min"), vals.get("r_max"), vals.get("residual")
        )


def _positive(x: float) -> None:
    if not x > 0:
        raise NonpositiveArg(f"argument must be positive, got {x}")


def delta(model: ScalingModel, r: float) -> float:
    """Transverse wandering scale (r * sigma(r))**(1/2)."""
    _positive(r)
    return math.sqrt(r * model.sigma(r))


def delta_inverse(model: ScalingModel, a: float) -> float:
    _positive(a)
    return (a / math.sqrt(model.A)) ** (1.0 / model.xi)


def xi_fn(model: ScalingModel, s: float) -> float:
    _positive(s)
    return math.sqrt(s * model.sigma(s) * math.log(2.0 + s))


def phi(model: ScalingModel, s: float) -> float:
    _positive(s)
    return s / (model.sigma(s) * math.log(2.0 + s))


def phi_inverse(model: ScalingModel, c: float) -> float:
    _positive(c)
    hi = 1.0
    while phi(model, hi) < c:
        hi *= 2.0
    lo = hi / 2.0
    while phi(model, lo) > c and lo > 1e-300:
        lo /= 2.0
    return optimize.brentq(lambda s: phi(model, s) - c, lo, hi, xtol=1e-14, rtol=1e-14)


def theta_sup_norm(tc: ThetaCoords) -> float:
    return max(abs(tc.u1), float(np.linalg.norm(tc.u2)))


def deviation_cost(model: ScalingModel, frame: DirectionFrame, u: Sequence[float]) -> float:
    """Cost for a theta-directed geodesic from the origin to pass through ``u``."""
    tc = theta_coordinates(frame, u)
    n2 = float(np.linalg.norm(tc.u2))
    if tc.u1 == 0 and n2 == 0:
        raise ZeroVector("deviation cost of the zero vector")
    far = phi(model, theta_sup_norm(tc))
    if tc.u1 < 0:
        return far
    if tc.u1 == 0:
        return far
    width = xi_fn(model, tc.u1)
    if width == 0:  # u1 underflowed: the near term is infinite unless u2 vanishes
        return 0.0 if n2 == 0 else far
    return min(n2 * n2 / width**2, far)


def symmetric_deviation_cost(model: ScalingModel, frame: DirectionFrame, r: float, u: Sequence[float]) -> float:
    """Cost measured from whichever end of the segment 0 -> r*y_theta is nearer in u1."""
    u = np.asarray(u, dtype=float)
    v = u if float(u @ frame.z_theta) <= r / 2 else r * frame.y_theta - u
    if not np.any(v):
        return 0.0
    return deviation_cost(model, frame, v)


@dataclass(frozen=True, eq=False)
class TubeRegion:
    frame: DirectionFrame
    r: float
    c: float
    model: ScalingModel


def tube_contains(region: TubeRegion, u: Sequence[float]) -> bool:
    return symmetric_deviation_cost(region.model, region.frame, region.r, u) <= region.c


# -- path diagnostics ----------------------------------------------------------


def segment_distance(u, x, v) -> float:
    """Euclidean distance from ``u`` to the segment from ``x`` to ``v``."""
    u, x, v = (np.asarray(a, dtype=float) for a in (u, x, v))
    seg = v - x
    t = float(np.clip((u - x) @ seg / (seg @ seg), 0.0, 1.0))
    return float(np.linalg.norm(u - (x + t * seg)))


def fat_triangle_excess(x, u, v, shape) -> tuple:
    """(delta, excess): relative distance of ``u`` from the chord x->v and the extra
    g-length of the detour x->u->v."""
    x, u, v = (np.asarray(a, dtype=float) for a in (x, u, v))
    length = float(np.linalg.norm(v - x))
    if length == 0:
        raise ZeroVector("x and v coincide")
    g = shape.g if hasattr(shape, "g") else shape
    dlt = segment_distance(u, x, v) / length
    excess = g(u - x) + g(v - u) - g(v - x)
    return dlt, float(excess)


def max_backtrack(path, frame: DirectionFrame) -> float:
    """Largest drop of u1 from an earlier site to a later one (0 for monotone paths)."""
    sites = path.sites if hasattr(path, "sites") else path
    if len(sites) == 0:
        raise ValueError("empty path")
    u1 = np.asarray(sites, dtype=float) @ frame.z_theta
    return float(max(0.0, np.max(np.maximum.accumulate(u1) - u1)))


def ell_segments(path, frame: DirectionFrame, ell: float) -> list:
    """Split a path at its successive entry points into H^+ at levels 0, ell, 2*ell, ...

    Returns ``[(segment, i), ...]`` where segment ``i`` runs from the level
    (i-1)*ell entry point to the level i*ell entry point, inclusive.
    """
    from .engine import LatticePath

    if not ell > 0:
        raise NonpositiveArg("ell must be positive")
    sites = path.sites
    u1 = np.asarray(sites, dtype=float) @ frame.z_theta
    reached = np.maximum.accumulate(u1)

    def entry(level):
        k = int(np.searchsorted(reached, level, side="left"))
        return k if k < len(sites) else None

    start = entry(0.0)
    first = entry(ell)
    if start is None or first is None:
        raise NoEntry(f"path ends before the first cut at {ell}")
    out = []
    i = 1
    prev = start
    while True:
        k = entry(i * ell)
        if k is None:
            break
        out.append((LatticePath(sites[prev : k + 1]), i))
        prev = k
        i += 1
    return out


def classify_fast_segments(segments, times, baseline_mean: float, sigma_ell: float, eta: float) -> list:
    """Flag segments whose passage time is at most baseline_mean + (eta/8)*sigma_ell."""
    if len(segments) != len(times):
        raise LengthMismatch(f"{len(segments)} segments but {len(times)} times")
    cut = baseline_mean + eta * sigma_ell / 8.0
    return [bool(t <= cut) for t in times]
