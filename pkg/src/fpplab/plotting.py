"""Figures for experiment reports (written to files, never shown)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _loglog(ax, xs, ys, errs=None, label=None, marker="o"):
    pts = [(x, y, e) for x, y, e in zip(xs, ys, errs or [None] * len(xs)) if y and y > 0]
    if not pts:
        return
    x, y, e = zip(*pts)
    if errs is not None:
        ax.errorbar(x, y, yerr=[v if v is not None and math.isfinite(v) else 0 for v in e], fmt=marker + "-", label=label, capsize=3)
    else:
        ax.plot(x, y, marker + "-", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")


def _fit_line(ax, xs, prefactor, exponent, label):
    if prefactor is None or exponent is None:
        return
    lo, hi = min(xs), max(xs)
    grid = [lo * (hi / lo) ** (k / 50) for k in range(51)]
    ax.plot(grid, [prefactor * g**exponent for g in grid], "--", label=label)


def save_figure(kind: str, result: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    rows = result.get("rows", [])
    if kind == "shape":
        import numpy as np

        ang = [r["angle"] for r in rows]
        rad = [1.0 / r["g"] for r in rows]
        full_a, full_r = [], []
        for k in range(8):  # unfold the canonical octant by lattice symmetry
            for a, r in zip(ang, rad):
                b = (k // 2) * math.pi / 2 + (a if k % 2 == 0 else math.pi / 2 - a)
                full_a.append(b)
                full_r.append(r)
        order = np.argsort(full_a)
        xs = [full_r[i] * math.cos(full_a[i]) for i in order]
        ys = [full_r[i] * math.sin(full_a[i]) for i in order]
        ax.plot(xs + xs[:1], ys + ys[:1], "o-", ms=3)
        ax.set_aspect("equal")
        ax.set_title("estimated limit shape (unit ball of g)")
    elif kind in ("sigma", "transverse", "hg-gap", "crossing-density", "midpoint", "coalesce", "time-constant"):
        xkey, ykey, ekey = {
            "sigma": ("r", "sigma", "se"),
            "transverse": ("r", "wander", "se"),
            "hg-gap": ("n", "gap", "se"),
            "crossing-density": ("s", "density", "se"),
            "midpoint": ("v", "p", "se"),
            "coalesce": ("r", "p", "cluster_se"),
            "time-constant": ("n", "mean", "se"),
        }[kind]
        xs = [r[xkey] for r in rows]
        ys = [r[ykey] for r in rows]
        es = [r.get(ekey) for r in rows]
        _loglog(ax, xs, ys, es, label=ykey)
        if kind == "coalesce":
            _loglog(ax, xs, [r["p_pessimistic"] for r in rows], label="pessimistic", marker="s")
        fit = result.get("fit") or {}
        if xs and fit.get("exponent") is not None:
            _fit_line(ax, xs, fit.get("prefactor"), fit["exponent"], f"slope {fit['exponent']:.3f}")
        ax.set_xlabel(xkey)
        ax.set_ylabel(ykey)
        ax.set_title(kind)
        ax.legend(fontsize=8)
    else:
        plt.close(fig)
        raise ValueError(f"no figure for {kind}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
