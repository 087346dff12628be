"""Property suites runnable from the command line: oracle, metric and duality."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coalescence import (
    duality_holds,
    enlarge_gap,
    entries_monotone,
    enumerate_start_sites,
    find_gaps,
    jump_size,
    rational_axis_frame,
    sources_and_entries,
)
from .engine import geodesic_tree, shortest_passage
from .errors import MissingSide
from .lattice import BoxRegion, Exponential, sample_config, with_weights
from .oracle import brute_force_passage
from .rays import theta_box
from .seeding import derive_seed


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def small_boxes(max_sites: int = 9, max_side: int = 3) -> list:
    """All d=2 box shapes with sides <= max_side and at most max_sites sites."""
    return [
        BoxRegion.from_shape((a, b))
        for a in range(1, max_side + 1)
        for b in range(1, max_side + 1)
        if a * b <= max_sites
    ]


def oracle_suite(seeds: int = 20, boxes: list | None = None) -> list:
    """Point queries against exhaustive enumeration: exact times, identical paths."""
    boxes = boxes or small_boxes()
    spec = Exponential(1.0)
    checked = ties = 0
    time_ok = path_ok = True
    worst = 0.0
    first_bad = ""
    for box in boxes:
        sites = [tuple(s) for s in box.coords()]
        for k in range(seeds):
            config = sample_config(box, spec, derive_seed(0, f"oracle:{box.shape}", k))
            for x, y in itertools.product(sites, sites):
                q = shortest_passage(config, x, y)
                t, path, n_min = brute_force_passage(config, x, y)
                checked += 1
                err = abs(q.time - t)
                worst = max(worst, err)
                if err > 1e-12:
                    time_ok = False
                    first_bad = first_bad or f"{box.shape} seed#{k} {x}->{y}: {q.time} vs {t}"
                if n_min > 1:
                    ties += 1
                elif q.path != path:
                    path_ok = False
                    first_bad = first_bad or f"{box.shape} seed#{k} {x}->{y}: paths differ"
    return [
        Check("oracle: passage times equal enumeration (<= 1e-12)", time_ok, f"{checked} pairs, max error {worst:.3g} {first_bad}"),
        Check("oracle: minimizing paths identical", path_ok, f"{checked - ties} pairs with a unique minimizer {first_bad}"),
    ]


def corrupt_weights(config, fraction: float = 0.2, seed: int = 0):
    """Fault injection: flip a share of the bond weights to large negative values."""
    rng = np.random.default_rng(seed)
    w = np.array(config.weights, dtype=float)
    finite = np.flatnonzero(np.isfinite(w.ravel()))
    pick = rng.choice(finite, size=max(1, int(fraction * finite.size)), replace=False)
    flat = w.ravel()
    flat[pick] = -5.0
    return with_weights(config, flat.reshape(w.shape))


def metric_suite(triples: int = 200, targets: int = 500, side: int = 64, seed: int = 1, fault: bool = False) -> list:
    """Symmetry, triangle inequality and tree/point consistency on one sampled box."""
    box = BoxRegion.from_shape((side, side))
    config = sample_config(box, Exponential(1.0), seed)
    if fault:
        config = corrupt_weights(config)
    rng = np.random.default_rng(seed)

    def rand_site():
        return tuple(int(c) for c in rng.integers(0, side, size=2))

    sym_ok = tri_ok = True
    bad = {"sym": "", "tri": "", "tree": ""}
    for _ in range(triples):
        x, y, z = rand_site(), rand_site(), rand_site()
        txy = shortest_passage(config, x, y).time
        tyx = shortest_passage(config, y, x).time
        tyz = shortest_passage(config, y, z).time
        txz = shortest_passage(config, x, z).time
        if txy != tyx:
            sym_ok = False
            bad["sym"] = bad["sym"] or f"T{x, y} != T{y, x}"
        if not txz <= txy + tyz:
            tri_ok = False
            bad["tri"] = bad["tri"] or f"fails at {x}, {y}, {z}"
    src = rand_site()
    tree = geodesic_tree(config, [src])
    cons_ok = True
    for _ in range(targets):
        v = rand_site()
        if tree.dist(v) != shortest_passage(config, src, v).time:
            cons_ok = False
            bad["tree"] = bad["tree"] or f"mismatch at {v}"
    return [
        Check("metric: symmetry T(x,y) = T(y,x) exact", sym_ok, f"{triples} triples {bad['sym']}"),
        Check("metric: triangle inequality exact", tri_ok, f"{triples} triples {bad['tri']}"),
        Check("metric: geodesic tree equals point queries", cons_ok, f"{targets} targets {bad['tree']}"),
    ]


def duality_suite(configs: int = 100, r: float = 16.0, half_height: int = 64, kappa: float = 4.0, mu: float = 0.42) -> list:
    """Gap/entry-interval duality, W monotonicity, V_z sources and the jump property."""
    rframe = rational_axis_frame(mu)
    frame = rframe.frame
    box = theta_box(frame, (-8.0, kappa * r + frame.fat_width + 2), [(-3 * half_height, 3 * half_height)])
    starts = enumerate_start_sites(rframe, range(-half_height, half_height + 1))
    dual = mono = vsrc = jump = True
    gaps_seen = enlarged = 0
    detail = {"dual": "", "mono": "", "vsrc": "", "jump": ""}
    for k in range(configs):
        config = sample_config(box, Exponential(1.0), derive_seed(0, "duality", k))
        rows = sources_and_entries(config, frame, rframe, r, starts, kappa)
        gaps, intervals = find_gaps(rows, r)
        gaps_seen += len(gaps)
        if not duality_holds(rows, intervals):
            dual = False
            detail["dual"] = detail["dual"] or f"duality fails in config {k}"
        if not entries_monotone(rows):
            mono = False
            detail["mono"] = detail["mono"] or f"W not monotone in config {k}"
        by_z = {row.z: row for row in rows}
        for row in rows:
            if not row.censored and row.V in by_z and not by_z[row.V].is_source:
                vsrc = False
                detail["vsrc"] = detail["vsrc"] or f"V of {row.z} is not a source in config {k}"
        for g in gaps:
            try:
                e = enlarge_gap(rows, g)
            except MissingSide:
                continue
            if e.G_min_pos < e.G_max_pos:
                enlarged += 1
                if jump_size(rows, e) < (e.hi - e.lo) / 2 - 1 - 1e-9:
                    jump = False
                    detail["jump"] = detail["jump"] or f"jump property fails in config {k}"
    return [
        Check("duality: W_v = W_w iff same entry interval", dual, f"{configs} configs, {gaps_seen} gaps {detail['dual']}"),
        Check("duality: W_z weakly monotone in source order", mono, detail["mono"]),
        Check("duality: every V_z is a source", vsrc, detail["vsrc"]),
        Check("duality: jump property on enlarged gaps", jump, f"{enlarged} enlarged gaps {detail['jump']}"),
    ]


SUITES: dict = {"oracle": oracle_suite, "metric": metric_suite, "duality": duality_suite}


def run_suite(name: str, out: Callable = print, **kwargs) -> bool:
    t0 = time.perf_counter()
    checks = SUITES[name](**kwargs)
    for c in checks:
        out(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  ({c.detail.strip()})")
    out(f"suite {name}: {sum(c.passed for c in checks)}/{len(checks)} passed in {time.perf_counter() - t0:.1f}s")
    return all(c.passed for c in checks)
