"""Experiment configs, runners and the JSON-lines / CSV / figure writers."""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .coalescence import coalescence_tail, rational_axis_frame
from .errors import FPPError, InvalidSpec, ValidationError
from .geometry import ScalingModel, axis_frame
from .lattice import DistributionSpec
from .plotting import save_figure
from .rays import crossing_density, midpoint_probability
from .scaling import (
    HIST_EDGES,
    check_hg_gap,
    direction_grid_2d,
    estimate_limit_shape,
    estimate_scaling,
    estimate_time_constant,
)
from .seeding import derive_seed

KINDS = ("shape", "sigma", "transverse", "crossing-density", "coalesce", "midpoint", "hg-gap")


# -- value parsers ----------------------------------------------------------------


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    v = float(text.strip())
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv: Callable) -> Callable:
    def parse(text: str) -> list:
        items = [t for t in text.replace(";", ",").split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return [conv(t) for t in items]

    return parse


@dataclass(frozen=True)
class Field:
    parse: Callable
    required: bool = False
    default: Any = None
    check: Callable | None = None
    rule: str = ""


def _positive(x) -> bool:
    return all(v > 0 for v in x) if isinstance(x, list) else x > 0


COMMON = {
    "kind": Field(str, required=True, check=lambda k: k in KINDS, rule=f"one of {', '.join(KINDS)}"),
    "distribution": Field(str, default="exponential:1"),
    "d": Field(_int, default=2, check=lambda d: d in (2, 3, 4), rule="2, 3 or 4"),
    "replicas": Field(_int, required=True, check=lambda n: n >= 2, rule=">= 2"),
    "seed": Field(_int, default=0, check=lambda s: 0 <= s < 2**64, rule="0 <= seed < 2^64"),
    "force": Field(_bool, default=False),
    "sigma_A": Field(_float, check=_positive, rule="> 0"),
    "sigma_chi": Field(_float, check=lambda c: 0 < c < 1, rule="in (0, 1)"),
}

SCHEMAS = {
    "shape": {
        "radius": Field(_int, required=True, check=_positive, rule="> 0"),
        "directions": Field(_int, default=9, check=lambda n: n >= 2, rule=">= 2"),
    },
    "sigma": {
        "r_list": Field(_list(_int), required=True, check=lambda x: _positive(x) and len(set(x)) >= 3, rule="at least 3 positive radii"),
    },
    "transverse": {
        "r_list": Field(_list(_int), required=True, check=lambda x: _positive(x) and len(set(x)) >= 3, rule="at least 3 positive radii"),
    },
    "hg-gap": {
        "n_list": Field(_list(_int), required=True, check=lambda x: _positive(x) and len(set(x)) >= 3, rule="at least 3 positive n"),
        "direction": Field(_list(_int), default=None),
    },
    "crossing-density": {
        "s_list": Field(_list(_float), required=True, check=_positive, rule="positive levels"),
        "window": Field(_list(_float), default=[-64.0, 64.0], check=lambda w: len(w) == 2 and w[0] < w[1], rule="two increasing numbers"),
        "kappa": Field(_float, default=4.0, check=lambda k: k >= 2, rule=">= 2"),
        "mu": Field(_float, check=_positive, rule="> 0"),
    },
    "coalesce": {
        "separation": Field(_int, required=True, check=_positive, rule="> 0"),
        "r_grid": Field(_list(_float), required=True, check=lambda x: _positive(x) and len(x) >= 2, rule="at least 2 positive radii"),
        "kappa": Field(_float, default=4.0, check=lambda k: k >= 2, rule=">= 2"),
        "pairs_per_replica": Field(_int, default=1, check=_positive, rule="> 0"),
        "mu": Field(_float, check=_positive, rule="> 0"),
    },
    "midpoint": {
        "v_list": Field(_list(_int), required=True, check=lambda x: all(v >= 2 for v in x), rule="integers >= 2"),
    },
}

NEEDS_CONTINUOUS = ("crossing-density", "coalesce", "midpoint")
PLANAR_ONLY = ("crossing-density", "coalesce")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    spec: DistributionSpec
    params: dict  # normalized values of every schema key

    def canonical(self) -> dict:
        out = dict(self.params)
        out["distribution"] = self.spec.to_dict()
        return out

    @property
    def config_hash(self) -> str:
        return config_hash(self.canonical())

    @property
    def seed(self) -> int:
        return self.params["seed"]

    @property
    def replicas(self) -> int:
        return self.params["replicas"]

    def model(self) -> ScalingModel | None:
        A, chi = self.params.get("sigma_A"), self.params.get("sigma_chi")
        if A is None or chi is None:
            return None
        return ScalingModel(A, chi)


def config_hash(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_config_text(text: str, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a key = value experiment description against its schema."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"unreadable config: {exc}") from None
    raw = dict(parser["experiment"])
    raw.pop("output", None)
    if kind is not None:
        if "kind" in raw and raw["kind"].strip() != kind:
            raise ValidationError(f"config kind {raw['kind']!r} does not match subcommand {kind!r}")
        raw["kind"] = kind
    if seed is not None:
        raw["seed"] = str(seed)
    k = raw.get("kind", "").strip()
    if k not in SCHEMAS:
        raise ValidationError(f"kind must be one of {', '.join(KINDS)}, got {k!r}")
    schema = {**COMMON, **SCHEMAS[k]}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ValidationError(f"unknown keys for {k}: {', '.join(unknown)}")
    params = {}
    for name, fld in schema.items():
        if name not in raw:
            if fld.required:
                raise ValidationError(f"missing required key {name!r}")
            params[name] = fld.default
            continue
        try:
            val = fld.parse(raw[name])
        except ValueError as exc:
            raise ValidationError(f"{name}: {exc}") from None
        if fld.check is not None and not fld.check(val):
            raise ValidationError(f"{name} = {raw[name].strip()!r} must be {fld.rule}")
        params[name] = val
    try:
        spec = DistributionSpec.parse(params["distribution"])
    except InvalidSpec as exc:
        raise ValidationError(f"distribution: {exc}") from None
    if (params["sigma_A"] is None) != (params["sigma_chi"] is None):
        raise ValidationError("sigma_A and sigma_chi must be given together")
    if k in NEEDS_CONTINUOUS and not spec.continuous and not params["force"]:
        raise ValidationError(f"{k} needs a continuous distribution (set force = true to override)")
    if k in PLANAR_ONLY and params["d"] != 2:
        raise ValidationError(f"{k} is implemented for d = 2 only")
    if k == "hg-gap":
        direction = params["direction"] or [1] + [0] * (params["d"] - 1)
        if len(direction) != params["d"] or not any(direction):
            raise ValidationError("direction must be a nonzero integer vector of length d")
        params["direction"] = direction
    params.pop("distribution")
    return ExperimentConfig(k, spec, params)


def load_experiment(path, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    return parse_config_text(text, kind, seed)


# -- runners -----------------------------------------------------------------------


def _clean(x):
    """JSON-safe value: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def estimate_mu(spec: DistributionSpec, seed: int, threads: int | None, d: int = 2) -> float:
    """Quick g(e_1) proxy: mean T(0, 256 e_1)/256 over 32 replicas."""
    e1 = [1] + [0] * (d - 1)
    table = estimate_time_constant(spec, e1, [256], 32, derive_seed(seed, "mu", 0), threads=threads)
    return table.rows[0][1]


def _run_shape(cfg, threads):
    p = cfg.params
    if p["d"] == 2:
        dirs = direction_grid_2d(p["directions"])
    else:
        dirs = [tuple(np.eye(p["d"])[0])]
        dirs.append(tuple(np.ones(p["d"]) / math.sqrt(p["d"])))
    est = estimate_limit_shape(cfg.spec, dirs, p["radius"], cfg.replicas, cfg.seed, threads=threads)
    rows = []
    for t, g, se in zip(est.directions, est.g_values, est.g_se):
        rows.append({"direction": list(t), "angle": math.atan2(t[1], t[0]), "g": g, "se": se, "replicas": cfg.replicas})
    extra = {"mu": est.mu}
    if p["d"] == 2:
        extra["curvature"] = [{"angle": a, "second_difference": s, "curvature": k} for a, s, k in est.curvature()]
    return {"rows": rows, "fit": None, "extra": extra}


def _run_scaling(cfg, threads, which):
    st, tt = estimate_scaling(
        cfg.spec, cfg.params["r_list"], cfg.replicas, cfg.seed, d=cfg.params["d"], model=cfg.model(), threads=threads,
        tag=which,
    )
    if which == "sigma":
        rows = [{"r": r, "sigma": s, "se": se, "replicas": n} for r, s, se, n in st.rows]
        m = st.model
        fit = {"prefactor": m.A if m else None, "exponent": m.chi if m else None, "exponent_se": st.chi_se,
               "xi": m.xi if m else None, "residual": m.residual if m else None, "note": st.note}
        extra = {"standardized_histogram": {"edges": [float(e) for e in HIST_EDGES],
                                            "counts": {str(r): c for r, c in st.histograms.items()}}}
    else:
        rows = [{"r": r, "wander": w, "se": se, "replicas": n} for r, w, se, n in tt.rows]
        fit = {"prefactor": None, "exponent": tt.xi_direct, "exponent_se": tt.xi_se, "continuous": tt.continuous,
               "note": tt.note}
        if tt.xi_direct is not None:
            means = [row["wander"] for row in rows]
            rs = [row["r"] for row in rows]
            fit["prefactor"] = math.exp(float(np.mean(np.log(means)) - tt.xi_direct * np.mean(np.log(rs))))
        extra = {}
    return {"rows": rows, "fit": fit, "extra": extra}


def _run_hg_gap(cfg, threads):
    p = cfg.params
    mt = estimate_time_constant(cfg.spec, p["direction"], p["n_list"], cfg.replicas, cfg.seed, model=cfg.model(), threads=threads)
    n_axis = [n for n in p["n_list"]]
    st, _ = estimate_scaling(cfg.spec, n_axis, cfg.replicas, derive_seed(cfg.seed, "hg-sigma", 0), d=p["d"], threads=threads, tag="hg-gap")
    rep = check_hg_gap(mt, st)
    sub = {n: (diff, se, ok) for n, diff, se, ok in mt.subadditivity()}
    rows = []
    for (n, gap, se, c_n, within), row in zip(rep.rows, mt.rows):
        rows.append({
            "n": n, "mean": row[1], "mean_se": row[2], "gap": gap, "se": se, "C_n": c_n, "within": within,
            "subadditive": sub.get(n, (None, None, None))[2], "replicas": row[3], "discarded": row[4],
        })
    return {"rows": rows, "fit": {"C": rep.C, "g_proxy": rep.g_proxy}, "extra": {}}


def _frame_mu(cfg, threads):
    mu = cfg.params.get("mu")
    return (mu, False) if mu is not None else (estimate_mu(cfg.spec, cfg.seed, threads), True)


def _run_crossing(cfg, threads):
    p = cfg.params
    mu, estimated = _frame_mu(cfg, threads)
    frame = axis_frame(2, mu)
    rows = []
    for s in p["s_list"]:
        est = crossing_density(
            cfg.spec, frame, s, tuple(p["window"]), cfg.replicas, derive_seed(cfg.seed, "crossing", int(s * 1000)),
            kappa=p["kappa"], model=cfg.model(), threads=threads, force=p["force"],
        )
        rows.append({
            "s": s, "density": est.density, "se": est.se, "volume": est.volume, "entry_count": est.entry_count,
            "replicas": est.replicas, "censoring": {"censored_in_window": est.censored, "rays_in_window": est.in_window},
            "starts": est.starts,
        })
    fit = None
    if len(rows) >= 3 and all(r["density"] > 0 for r in rows):
        from .scaling import fit_power_law

        a, b, se, _ = fit_power_law([r["s"] for r in rows], [r["density"] for r in rows])
        fit = {"prefactor": a, "exponent": b, "exponent_se": se}
    return {"rows": rows, "fit": fit, "extra": {"mu": mu, "mu_estimated": estimated}}


def _run_coalesce(cfg, threads):
    p = cfg.params
    mu, estimated = _frame_mu(cfg, threads)
    rframe = rational_axis_frame(mu)
    tail = coalescence_tail(
        cfg.spec, p["separation"], p["r_grid"], cfg.replicas, cfg.seed, frame=rframe.frame, rframe=rframe,
        kappa=p["kappa"], pairs_per_replica=p["pairs_per_replica"], model=cfg.model(), threads=threads, force=p["force"],
    )
    rows = [
        {"r": r, "p": pm, "p_pessimistic": pp, "p_optimistic": po, "ci": [lo, hi], "cluster_se": cse,
         "replicas": cfg.replicas, "pairs": tail.pairs,
         "censoring": {"censored": tail.censored, "touched": tail.touched, "reentered": tail.reentered}}
        for r, pm, pp, po, lo, hi, cse in tail.rows
    ]
    fit = {"exponent": tail.slope, "exponent_se": tail.slope_se, "pessimistic": tail.slope_pessimistic,
           "optimistic": tail.slope_optimistic, "prefactor": None}
    if tail.slope is not None:
        rs, ps = [r["r"] for r in rows], [r["p"] for r in rows]
        fit["prefactor"] = math.exp(float(np.mean(np.log(ps)) - tail.slope * np.mean(np.log(rs))))
    return {"rows": rows, "fit": fit, "extra": {"mu": mu, "mu_estimated": estimated}}


def _run_midpoint(cfg, threads):
    p = cfg.params
    d = p["d"]
    rows = []
    for v in p["v_list"]:
        vv = tuple([v] + [0] * (d - 1))
        uu = tuple(-c for c in vv)
        est = midpoint_probability(
            cfg.spec, uu, vv, cfg.replicas, derive_seed(cfg.seed, "midpoint", v), model=cfg.model(), threads=threads,
            force=p["force"],
        )
        rows.append({"v": v, "p": est.p, "se": est.se, "ci": list(est.ci), "hits": est.hits, "replicas": est.replicas,
                     "censoring": {"discarded": est.discarded}})
    return {"rows": rows, "fit": None, "extra": {}}


RUNNERS = {
    "shape": _run_shape,
    "sigma": lambda c, t: _run_scaling(c, t, "sigma"),
    "transverse": lambda c, t: _run_scaling(c, t, "transverse"),
    "hg-gap": _run_hg_gap,
    "crossing-density": _run_crossing,
    "coalesce": _run_coalesce,
    "midpoint": _run_midpoint,
}

PARAM_KEYS = {
    "shape": ("direction",),
    "sigma": ("r",),
    "transverse": ("r",),
    "hg-gap": ("n",),
    "crossing-density": ("s",),
    "coalesce": ("r",),
    "midpoint": ("v",),
}
ESTIMATE_KEY = {
    "shape": "g",
    "sigma": "sigma",
    "transverse": "wander",
    "hg-gap": "gap",
    "crossing-density": "density",
    "coalesce": "p",
    "midpoint": "p",
}


# -- output ------------------------------------------------------------------------


def _dumps(record: dict) -> str:
    return json.dumps(_clean(record), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _next_run_index(jsonl: Path, chash: str) -> int:
    if not jsonl.exists():
        return 1
    count = 0
    with jsonl.open() as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("type") == "run_start" and rec.get("config_hash") == chash:
                count += 1
    return count + 1


# Fixed choices for constants the theory leaves open; recorded with every run.
CONVENTIONS = {
    "C3": 1.0,
    "log": "natural",
    "note": "deviation-cost scale Phi uses C3 = 1; another constant rescales D_theta by a bounded factor",
}


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int | None = None) -> dict:
    """Run, then append one run block to <out>/<kind>.jsonl and write the CSV and figure."""
    result = RUNNERS[cfg.kind](cfg, threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash
    jsonl = out / f"{cfg.kind}.jsonl"
    run_id = f"{chash[:12]}-{_next_run_index(jsonl, chash)}"
    base = {"run_id": run_id, "config_hash": chash, "tool_version": __version__, "experiment": cfg.kind}
    lines = [_dumps({"type": "run_start", **base, "config": cfg.canonical(), "conventions": CONVENTIONS})]
    for row in result["rows"]:
        lines.append(_dumps({
            "type": "result", **base,
            "params": {k: row[k] for k in PARAM_KEYS[cfg.kind]},
            "estimate": row[ESTIMATE_KEY[cfg.kind]],
            "se": row.get("se", row.get("cluster_se")),
            "ci": row.get("ci"),
            "replicas": row.get("replicas"),
            "censoring": row.get("censoring", {}),
            "row": row,
        }))
    lines.append(_dumps({"type": "summary", **base, "fit": result.get("fit"), "extra": result.get("extra")}))
    lines.append(_dumps({"type": "run_end", **base, "records": len(result["rows"])}))
    with jsonl.open("a") as fh:
        fh.write("\n".join(lines) + "\n")
    csv_path = out / f"{cfg.kind}_{run_id}.csv"
    _write_csv(csv_path, result["rows"], chash)
    save_figure(cfg.kind, result, out / f"{cfg.kind}_{run_id}.png")
    return {"run_id": run_id, "jsonl": jsonl, "csv": csv_path, "result": result}


def _flatten(row: dict) -> dict:
    flat = {}
    for k, v in row.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                flat[f"{k}.{k2}"] = v2
        elif isinstance(v, (list, tuple)):
            flat[k] = " ".join(repr(_clean(x)) for x in v)
        else:
            flat[k] = _clean(v)
    return flat


def _write_csv(path: Path, rows: list, chash: str) -> None:
    flat = [_flatten(r) for r in rows]
    keys = []
    for f in flat:
        for k in f:
            if k not in keys:
                keys.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys + ["config_hash"])
        w.writeheader()
        for f in flat:
            w.writerow({**f, "config_hash": chash})


def verify_hashes(jsonl) -> bool:
    """Every record's hash equals the hash recomputed from its run's stored config."""
    stored = {}
    with open(jsonl) as fh:
        records = [json.loads(line) for line in fh]
    for rec in records:
        if rec["type"] == "run_start":
            stored[rec["run_id"]] = config_hash(rec["config"])
    return all(stored.get(rec["run_id"]) == rec["config_hash"] for rec in records)


__all__ = [
    "ExperimentConfig",
    "FPPError",
    "KINDS",
    "load_experiment",
    "parse_config_text",
    "run_experiment",
    "verify_hashes",
]
