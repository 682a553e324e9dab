#!/usr/bin/env python3
"""Plots loss contours and optimizer trajectories from `kronfisher landscape`.

Usage:
  plot_landscape.py OUT_DIR [-o landscape.png]
  plot_landscape.py OUT_DIR --check

The loss surface is interpolated from the trajectory samples of every
landscape_<optimizer>.json in OUT_DIR onto the union of the exported grids (cubic where the
samples allow it, nearest-neighbour elsewhere). --check validates the files
and the interpolated grid without rendering.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.interpolate import griddata


def load_runs(out_dir):
    runs = []
    for path in sorted(Path(out_dir).glob("landscape_*.json")):
        with open(path) as f:
            runs.append(json.load(f))
    if not runs:
        raise SystemExit(f"no landscape_*.json files in {out_dir}")
    return runs


def surface(runs):
    grids = [r["grid"] for r in runs]
    n = max(g["n"] for g in grids)
    xs = np.linspace(min(g["xmin"] for g in grids), max(g["xmax"] for g in grids), n)
    ys = np.linspace(min(g["ymin"] for g in grids), max(g["ymax"] for g in grids), n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.array([p for r in runs for p in r["w"]], dtype=float)
    vals = np.array([np.nan if v is None else v for r in runs for v in r["loss"]], dtype=float)
    keep = np.isfinite(vals)
    pts, vals = pts[keep], vals[keep]
    z = np.full(gx.shape, np.nan)
    if len(pts) >= 4 and np.linalg.matrix_rank(pts - pts.mean(axis=0)) == 2:
        z = griddata(pts, vals, (gx, gy), method="cubic")
    holes = ~np.isfinite(z)
    z[holes] = griddata(pts, vals, (gx[holes], gy[holes]), method="nearest")
    return gx, gy, z


def check(runs, z):
    problems = []
    n = max(r["grid"]["n"] for r in runs)
    for r in runs:
        if len(r["w"]) != len(r["loss"]):
            problems.append(f"{r['optimizer']}: {len(r['w'])} points but {len(r['loss'])} losses")
        g = r["grid"]
        for x, y in r["w"]:
            if not (g["xmin"] <= x <= g["xmax"] and g["ymin"] <= y <= g["ymax"]):
                problems.append(f"{r['optimizer']}: point ({x}, {y}) outside the grid")
    if z.shape != (n, n):
        problems.append(f"grid shape {z.shape}, expected ({n}, {n})")
    if not np.all(np.isfinite(z)):
        problems.append("interpolated surface has non-finite values")
    return problems


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("-o", "--output", default=None)
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()

    runs = load_runs(args.out_dir)
    gx, gy, z = surface(runs)
    if args.check:
        problems = check(runs, z)
        for p in problems:
            print("FAIL", p)
        print(f"{len(runs)} trajectories, {z.shape[0]}x{z.shape[1]} grid:",
              "failed" if problems else "ok")
        return 1 if problems else 0

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    cs = ax.contourf(gx, gy, z, levels=30, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="training loss")
    for r in runs:
        w = np.array(r["w"])
        ax.plot(w[:, 0], w[:, 1], marker="o", markersize=3, label=r["optimizer"])
        ax.plot(*w[-1], marker="*", markersize=12, color="white", markeredgecolor="black")
    ax.set_xlabel("w[0]")
    ax.set_ylabel("w[1]")
    ax.legend()
    fig.tight_layout()
    out = args.output or str(Path(args.out_dir) / "landscape.png")
    fig.savefig(out, dpi=150)
    print("wrote", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
