"""Finite boxes of Z^d carrying iid bond passage times.

Weights are a pure function of (seed, absolute bond coordinates): every bond
is hashed independently, so any sub-box of a larger window regenerates the
same numbers without the window ever being stored.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import special

from . import _kernels
from .errors import BoxTooLarge, ChecksumMismatch, InvalidSpec, OutOfBox

Site = tuple  # tuple of ints, length d

DEFAULT_SITE_CAP = 200_000_000

# Stochastic weights are rounded up onto this dyadic grid so that every path
# sum below 2**23 is exact in float64 regardless of summation order.
WEIGHT_QUANTUM = 2.0 ** -30

_MAGIC = b"FPPC"
_FORMAT_VERSION = 1


class Bond(NamedTuple):
    base: tuple
    axis: int


def canonical_bond(u: Sequence[int], v: Sequence[int]) -> Bond:
    """The bond {u, v} in (base, axis) form, base being the smaller endpoint."""
    u = tuple(int(c) for c in u)
    v = tuple(int(c) for c in v)
    if len(u) != len(v):
        raise ValueError("dimension mismatch")
    diff = [b - a for a, b in zip(u, v)]
    nz = [k for k, x in enumerate(diff) if x != 0]
    if len(nz) != 1 or abs(diff[nz[0]]) != 1:
        raise ValueError(f"{u} and {v} are not nearest neighbours")
    axis = nz[0]
    return Bond(u if diff[axis] == 1 else v, axis)


@dataclass(frozen=True)
class BoxRegion:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(c) for c in self.lo)
        hi = tuple(int(c) for c in self.hi)
        if len(lo) != len(hi) or len(lo) not in (1, 2, 3, 4):
            raise InvalidSpec(f"bad box dimensions lo={lo} hi={hi}")
        if any(a > b for a, b in zip(lo, hi)):
            raise InvalidSpec(f"box needs lo <= hi, got lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_shape(cls, shape: Sequence[int], lo: Sequence[int] | None = None) -> "BoxRegion":
        lo = tuple(lo) if lo is not None else (0,) * len(shape)
        return cls(lo, tuple(a + n - 1 for a, n in zip(lo, shape)))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def n_sites(self) -> int:
        return math.prod(self.shape)

    @property
    def strides(self) -> tuple:
        shape = self.shape
        out = [1] * self.d
        for k in range(self.d - 2, -1, -1):
            out[k] = out[k + 1] * shape[k + 1]
        return tuple(out)

    def contains(self, site: Sequence[int]) -> bool:
        return len(site) == self.d and all(a <= c <= b for a, c, b in zip(self.lo, site, self.hi))

    def index(self, site: Sequence[int]) -> int:
        if not self.contains(site):
            raise OutOfBox(f"site {tuple(site)} outside box {self.lo}..{self.hi}")
        return sum((c - a) * s for c, a, s in zip(site, self.lo, self.strides))

    def site(self, index: int) -> tuple:
        out = []
        for a, s in zip(self.lo, self.strides):
            q, index = divmod(int(index), s)
            out.append(a + q)
        return tuple(out)

    def sites_of(self, indices: Iterable[int]) -> list:
        return [self.site(i) for i in indices]

    def coords(self) -> np.ndarray:
        """(N, d) integer coordinates of all sites in flat order."""
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def shell_mask(self, margin: int) -> np.ndarray:
        """Sites within ``margin`` lattice steps of the box boundary (margin 0: empty)."""
        mask = np.zeros(self.shape, dtype=np.uint8)
        if margin > 0:
            for k, n in enumerate(self.shape):
                sl = [slice(None)] * self.d
                sl[k] = slice(0, min(margin, n))
                mask[tuple(sl)] = 1
                sl[k] = slice(max(n - margin, 0), n)
                mask[tuple(sl)] = 1
        return mask.ravel()

    def in_shell(self, site: Sequence[int], margin: int) -> bool:
        return any(c - a < margin or b - c < margin for a, c, b in zip(self.lo, site, self.hi))


@dataclass(frozen=True)
class DistributionSpec:
    """Bond weight law: ``exponential`` (rate), ``uniform`` (a, b), ``gamma`` (shape, scale)
    or the deterministic ``table`` kind used in tests."""

    kind: str
    params: tuple = ()
    table: tuple = ()  # ((base, axis, weight), ...) for kind == "table"
    default: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        k, p = self.kind, self.params
        if k == "exponential":
            if len(p) != 1 or not p[0] > 0 or not math.isfinite(p[0]):
                raise InvalidSpec(f"exponential needs rate > 0, got {p}")
        elif k == "uniform":
            if len(p) != 2 or not (0 <= p[0] < p[1]) or not math.isfinite(p[1]):
                raise InvalidSpec(f"uniform needs 0 <= a < b, got {p}")
        elif k == "gamma":
            if len(p) != 2 or not (p[0] > 0 and p[1] > 0) or not all(map(math.isfinite, p)):
                raise InvalidSpec(f"gamma needs shape > 0 and scale > 0, got {p}")
        elif k == "table":
            for entry in self.table:
                if not (entry[2] >= 0 and math.isfinite(entry[2])):
                    raise InvalidSpec(f"table weights must be finite and >= 0, got {entry}")
            if self.default is not None and not (self.default >= 0 and math.isfinite(self.default)):
                raise InvalidSpec(f"table default must be finite and >= 0, got {self.default}")
        else:
            raise InvalidSpec(f"unknown distribution kind {k!r}")

    @property
    def continuous(self) -> bool:
        return self.kind != "table"

    @property
    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.params[0]
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        if self.kind == "gamma":
            return self.params[0] * self.params[1]
        raise InvalidSpec("table specs have no distributional mean")

    def table_map(self) -> dict:
        return {Bond(tuple(b), int(a)): float(w) for b, a, w in self.table}

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF map from uniforms to (unquantized) weights."""
        if self.kind == "exponential":
            return -np.log1p(-u) / self.params[0]
        if self.kind == "uniform":
            a, b = self.params
            return a + (b - a) * u
        if self.kind == "gamma":
            shape, scale = self.params
            return special.gammaincinv(shape, u) * scale
        raise InvalidSpec("table specs are not sampled")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "params": list(self.params)}
        if self.kind == "table":
            out["table"] = [[list(b), a, w] for b, a, w in self.table]
            out["default"] = self.default
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "DistributionSpec":
        table = tuple((tuple(b), int(a), float(w)) for b, a, w in data.get("table", []))
        return cls(data["kind"], tuple(data.get("params", ())), table, data.get("default"))

    @classmethod
    def parse(cls, text: str) -> "DistributionSpec":
        """Parse ``"exponential:1"``, ``"uniform:0.5,1.5"`` or ``"gamma:2,0.5"``."""
        name, _, rest = text.strip().partition(":")
        try:
            params = tuple(float(x) for x in rest.split(",")) if rest.strip() else ()
        except ValueError as exc:
            raise InvalidSpec(f"cannot parse distribution {text!r}") from exc
        name = name.strip().lower()
        if name == "table":
            raise InvalidSpec("table distributions cannot be given as text")
        if name == "exponential" and not params:
            params = (1.0,)
        return cls(name, params)

    def __str__(self) -> str:
        if self.kind == "table":
            return f"table[{len(self.table)} bonds, default={self.default}]"
        return f"{self.kind}:{','.join(repr(p) for p in self.params)}"


def Exponential(rate: float = 1.0) -> DistributionSpec:
    return DistributionSpec("exponential", (rate,))


def Uniform(a: float, b: float) -> DistributionSpec:
    return DistributionSpec("uniform", (a, b))


def Gamma(shape: float, scale: float) -> DistributionSpec:
    return DistributionSpec("gamma", (shape, scale))


def TestTable(table: Mapping | None = None, default: float | None = None) -> DistributionSpec:
    """Deterministic weights for tests.  Keys are :class:`Bond` or ``(u, v)`` site pairs."""
    entries = {}
    for key, w in (table or {}).items():
        if isinstance(key, Bond):
            bond = Bond(tuple(key.base), int(key.axis))
        else:
            bond = canonical_bond(*key)
        entries[bond] = float(w)
    packed = tuple(sorted((b.base, b.axis, w) for b, w in entries.items()))
    return DistributionSpec("table", (), packed, default)


TestTable.__test__ = False  # keep pytest from collecting it


@dataclass(frozen=True, eq=False)
class PassageConfig:
    box: BoxRegion
    spec: DistributionSpec
    seed: int
    weights: np.ndarray = field(repr=False)  # (d, N); +inf marks bonds leaving the box

    @property
    def d(self) -> int:
        return self.box.d

    def bond_mask(self) -> np.ndarray:
        shape = self.box.shape
        mask = np.zeros((self.d,) + shape, dtype=bool)
        for a in range(self.d):
            sl = [slice(None)] * self.d
            sl[a] = slice(0, shape[a] - 1)
            mask[(a,) + tuple(sl)] = True
        return mask.reshape(self.d, -1)

    def bond_array(self) -> np.ndarray:
        """In-box weights ordered lexicographically by base site, then axis."""
        mask = self.bond_mask()
        return self.weights.T[mask.T]

    def bonds(self) -> list:
        mask = self.bond_mask()
        out = []
        for i, row in enumerate(mask.T):
            base = self.box.site(i)
            out.extend(Bond(base, a) for a in range(self.d) if row[a])
        return out

    def checksum(self) -> bytes:
        data = np.ascontiguousarray(self.bond_array(), dtype="<f8").tobytes()
        return hashlib.sha256(data).digest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PassageConfig):
            return NotImplemented
        return (
            self.box == other.box
            and self.spec == other.spec
            and self.seed == other.seed
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def _check_cap(box: BoxRegion, cap: int | None) -> None:
    cap = DEFAULT_SITE_CAP if cap is None else cap
    if box.n_sites > cap:
        raise BoxTooLarge(f"box has {box.n_sites} sites, cap is {cap}")


def quantize(w: np.ndarray) -> np.ndarray:
    q = np.ceil(w / WEIGHT_QUANTUM)
    return np.maximum(q, 1.0) * WEIGHT_QUANTUM


def sample_config(box: BoxRegion, spec: DistributionSpec, seed: int, *, cap: int | None = None) -> PassageConfig:
    """Draw one weight per in-box bond; a deterministic function of (box, spec, seed)."""
    if not isinstance(spec, DistributionSpec):
        raise InvalidSpec(f"expected a DistributionSpec, got {type(spec).__name__}")
    _check_cap(box, cap)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    d = box.d
    mask = np.zeros((d,) + box.shape, dtype=bool)
    for a in range(d):
        sl = [slice(None)] * d
        sl[a] = slice(0, box.shape[a] - 1)
        mask[(a,) + tuple(sl)] = True
    mask = mask.reshape(d, -1)
    if spec.kind == "table":
        weights = np.full((d, box.n_sites), np.inf)
        table = spec.table_map()
        weights[mask] = np.nan if spec.default is None else spec.default
        for bond, w in table.items():
            if box.contains(bond.base) and box.contains(_step(bond.base, bond.axis)):
                weights[bond.axis, box.index(bond.base)] = w
        if spec.default is None and np.isnan(weights).any():
            missing = int(np.isnan(weights).sum())
            raise InvalidSpec(f"table leaves {missing} in-box bonds without a weight and has no default")
    else:
        u = _kernels.bond_uniforms(
            np.uint64(seed), np.asarray(box.lo, dtype=np.int64), np.asarray(box.shape, dtype=np.int64)
        )
        weights = np.full((d, box.n_sites), np.inf)
        weights[mask] = quantize(spec.transform(u[mask]))
    weights.setflags(write=False)
    return PassageConfig(box, spec, seed, weights)


def _step(site: Sequence[int], axis: int, sign: int = 1) -> tuple:
    s = list(site)
    s[axis] += sign
    return tuple(s)


def bond_weight(config: PassageConfig, bond: Bond) -> float:
    base = tuple(bond.base)
    if not (0 <= bond.axis < config.d) or not config.box.contains(base) or not config.box.contains(
        _step(base, bond.axis)
    ):
        raise OutOfBox(f"bond {bond} not inside box {config.box.lo}..{config.box.hi}")
    return float(config.weights[bond.axis, config.box.index(base)])


def with_weights(config: PassageConfig, weights: np.ndarray) -> PassageConfig:
    """Copy of ``config`` carrying replacement weights (fault injection and tests only)."""
    w = np.array(weights, dtype=np.float64, copy=True)
    if w.shape != config.weights.shape:
        raise ValueError("weight array shape mismatch")
    w.setflags(write=False)
    return PassageConfig(config.box, config.spec, config.seed, w)


def save_config(config: PassageConfig, path) -> None:
    spec_blob = json.dumps(config.spec.to_dict(), sort_keys=True).encode()
    d = config.d
    header = struct.pack("<4sHB", _MAGIC, _FORMAT_VERSION, d)
    header += struct.pack(f"<{d}q{d}q", *config.box.lo, *config.box.hi)
    header += struct.pack("<QI", config.seed, len(spec_blob))
    with open(path, "wb") as fh:
        fh.write(header + spec_blob + config.checksum())


def load_config(path, *, cap: int | None = None) -> PassageConfig:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        magic, version, d = struct.unpack_from("<4sHB", blob, 0)
        if magic != _MAGIC:
            raise ChecksumMismatch(f"{path}: bad magic {magic!r}")
        if version != _FORMAT_VERSION:
            raise ChecksumMismatch(f"{path}: unsupported format version {version}")
        off = struct.calcsize("<4sHB")
        bounds = struct.unpack_from(f"<{d}q{d}q", blob, off)
        off += struct.calcsize(f"<{d}q{d}q")
        seed, nspec = struct.unpack_from("<QI", blob, off)
        off += struct.calcsize("<QI")
        spec = DistributionSpec.from_dict(json.loads(blob[off : off + nspec]))
        off += nspec
        stored = blob[off : off + 32]
    except (struct.error, ValueError, KeyError) as exc:
        raise ChecksumMismatch(f"{path}: truncated or malformed header") from exc
    if len(stored) != 32:
        raise ChecksumMismatch(f"{path}: missing checksum")
    config = sample_config(BoxRegion(bounds[:d], bounds[d:]), spec, seed, cap=cap)
    if config.checksum() != stored:
        raise ChecksumMismatch(f"{path}: regenerated weights do not match stored checksum")
    return config


def read_recipe(path) -> tuple:
    """Parse a ``key = value`` recipe file into (box, spec, seed).

    Keys: ``lo``, ``hi`` (comma separated ints), ``distribution``
    (``exponential:1`` style) and ``seed``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_string("[recipe]\n" + fh.read())
    sec = parser["recipe"]
    try:
        lo = tuple(int(x) for x in sec["lo"].split(","))
        hi = tuple(int(x) for x in sec["hi"].split(","))
        spec = DistributionSpec.parse(sec.get("distribution", "exponential:1"))
        seed = int(sec.get("seed", "0"))
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"{path}: {exc}") from exc
    return BoxRegion(lo, hi), spec, seed
