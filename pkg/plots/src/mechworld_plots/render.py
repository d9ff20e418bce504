"""Render mechworld metrics CSVs into figures.

Four figure kinds, all reading the CSV schemas the experiment CLI writes:

  heatmap            <matrices/disentanglement_*.csv>  mode-vs-mechanism counts
  rollout_curves     <metrics/rollout_<sel>.csv ...>   per-step error curves
  adaptation_curves  <metrics/adaptation.csv ...>      error vs adaptation budget
  usage_timeline     <metrics/rollout_*_trace.csv>     chosen mechanism over time

No numbers are computed here beyond row normalization and the standard
error of the mean; all science values come from the experiment pipeline.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("heatmap", "rollout_curves", "adaptation_curves", "usage_timeline")


class SchemaError(Exception):
    """A CSV does not match the documented column contract."""


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such input file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"empty CSV: {path}")
    return rows[0], rows[1:]


def _require_columns(header, needed, path):
    for col in needed:
        if col not in header:
            raise SchemaError(f"{path} is missing column {col!r}")


def sem(values):
    """Standard error of the mean (sample standard deviation over sqrt(n))."""
    values = np.asarray(values, dtype=np.float64)
    if values.size <= 1:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


def load_count_matrix(path):
    header, rows = _read_csv(path)
    if not header or header[0] != "mode":
        raise SchemaError(f"{path} is missing column 'mode'")
    names = [row[0] for row in rows]
    try:
        counts = np.array([[float(v) for v in row[1:]] for row in rows])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric count cell ({exc})") from None
    if counts.ndim != 2 or counts.shape[1] != len(header) - 1:
        raise SchemaError(f"{path}: ragged count rows")
    return names, [h for h in header[1:]], counts


def render_heatmap(inputs, out_path, title=None):
    names, mech_labels, counts = load_count_matrix(inputs[0])
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(sums > 0, counts / np.maximum(sums, 1), 0.0)
    fig, ax = plt.subplots(figsize=(1.2 * len(mech_labels) + 2, 0.8 * len(names) + 2))
    ax.imshow(probs, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(mech_labels)), mech_labels)
    ax.set_yticks(range(len(names)), [n.lower() for n in names])
    ax.set_xlabel("mechanism")
    ax.set_ylabel("ground-truth mode")
    for r in range(probs.shape[0]):
        for c in range(probs.shape[1]):
            colour = "white" if probs[r, c] < 0.5 else "black"
            ax.text(c, r, f"{probs[r, c]:.2f}", ha="center", va="center", color=colour, fontsize=9)
    ax.set_title(title or "winning mechanism by ground-truth mode")
    fig.tight_layout()
    fig.savefig(out_path, metadata=_clean_metadata(out_path))
    plt.close(fig)
    return probs.shape


def load_rollout_curve(path):
    header, rows = _read_csv(path)
    _require_columns(header, ["episode", "step", "mse"], path)
    step_col = header.index("step")
    mse_col = header.index("mse")
    by_step = {}
    for row in rows:
        by_step.setdefault(int(row[step_col]), []).append(float(row[mse_col]))
    steps = sorted(by_step)
    mean = np.array([np.mean(by_step[s]) for s in steps])
    band = np.array([sem(by_step[s]) for s in steps])
    return np.array(steps), mean, band


def render_rollout_curves(inputs, out_path, title=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in inputs:
        steps, mean, band = load_rollout_curve(path)
        label = Path(path).stem.replace("rollout_", "")
        ax.plot(steps, mean, marker="o", markersize=3, label=label)
        ax.fill_between(steps, mean - band, mean + band, alpha=0.25)
    ax.set_xlabel("rollout step")
    ax.set_ylabel("mean squared error")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title(title or "rollout error by selection strategy")
    fig.tight_layout()
    fig.savefig(out_path, metadata=_clean_metadata(out_path))
    plt.close(fig)


def load_adaptation_rows(paths):
    """Merge adaptation CSVs (one per seed) into {(method, n): [mean_mse...]}."""
    grouped = {}
    for path in paths:
        header, rows = _read_csv(path)
        _require_columns(header, ["method", "n_episodes", "seed", "mean_mse"], path)
        m_col = header.index("method")
        n_col = header.index("n_episodes")
        v_col = header.index("mean_mse")
        for row in rows:
            key = (row[m_col], int(row[n_col]))
            grouped.setdefault(key, []).append(float(row[v_col]))
    return grouped


def render_adaptation_curves(inputs, out_path, title=None):
    grouped = load_adaptation_rows(inputs)
    methods = sorted({method for method, _ in grouped})
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        budgets = sorted(n for m, n in grouped if m == method and n > 0)
        mean = np.array([np.mean(grouped[(method, n)]) for n in budgets])
        band = np.array([sem(grouped[(method, n)]) for n in budgets])
        ax.plot(budgets, mean, marker="o", label=method)
        ax.fill_between(budgets, mean - band, mean + band, alpha=0.25)
        if (method, 0) in grouped:
            floor = np.mean(grouped[(method, 0)])
            ax.axhline(floor, linestyle="--", linewidth=1, alpha=0.6,
                       label=f"{method} (no adaptation)")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("adaptation episodes")
    ax.set_ylabel("mean rollout error")
    ax.legend()
    ax.set_title(title or "adaptation efficiency")
    fig.tight_layout()
    fig.savefig(out_path, metadata=_clean_metadata(out_path))
    plt.close(fig)


def load_trace(path, episode):
    header, rows = _read_csv(path)
    _require_columns(header, ["episode", "step", "object", "mechanism"], path)
    e_col = header.index("episode")
    s_col = header.index("step")
    o_col = header.index("object")
    m_col = header.index("mechanism")
    picked = [r for r in rows if int(r[e_col]) == episode]
    if not picked:
        raise SchemaError(f"{path} has no rows for episode {episode}")
    n_steps = max(int(r[s_col]) for r in picked)
    n_obj = max(int(r[o_col]) for r in picked) + 1
    grid = np.full((n_obj, n_steps), -1, dtype=int)
    for r in picked:
        grid[int(r[o_col]), int(r[s_col]) - 1] = int(r[m_col])
    return grid


def render_usage_timeline(inputs, out_path, title=None, episode=0):
    grid = load_trace(inputs[0], episode)
    n_mech = int(grid.max()) + 1
    fig, ax = plt.subplots(figsize=(8, 1.0 + 0.6 * grid.shape[0]))
    cmap = plt.get_cmap("tab10", max(n_mech, 2))
    im = ax.imshow(grid, cmap=cmap, vmin=-0.5, vmax=max(n_mech, 2) - 0.5, aspect="auto",
                   interpolation="nearest")
    ax.set_xlabel("rollout step")
    ax.set_ylabel("object")
    ax.set_yticks(range(grid.shape[0]))
    cbar = fig.colorbar(im, ax=ax, ticks=range(n_mech))
    cbar.set_label("selected mechanism")
    ax.set_title(title or f"mechanism usage, episode {episode}")
    fig.tight_layout()
    fig.savefig(out_path, metadata=_clean_metadata(out_path))
    plt.close(fig)


def _clean_metadata(out_path):
    # keep PNG/SVG output free of creation timestamps so reruns are stable
    suffix = Path(out_path).suffix.lower()
    if suffix == ".png":
        return {"Software": "mechworld-plots"}
    if suffix == ".svg":
        return {"Date": None}
    return None


def render(kind, inputs, out_path, title=None, episode=0):
    out_path = Path(out_path)
    if out_path.suffix.lower() not in (".png", ".svg"):
        raise SchemaError(f"unsupported output format {out_path.suffix!r} (use .png or .svg)")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if kind == "heatmap":
        return render_heatmap(inputs, out_path, title)
    if kind == "rollout_curves":
        return render_rollout_curves(inputs, out_path, title)
    if kind == "adaptation_curves":
        return render_adaptation_curves(inputs, out_path, title)
    if kind == "usage_timeline":
        return render_usage_timeline(inputs, out_path, title, episode)
    raise SchemaError(f"unknown figure kind {kind!r}")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="render", description="Render mechworld CSV outputs as figures."
    )
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        help="input CSV (repeatable for multi-curve figures)")
    parser.add_argument("--out", required=True, help="output image (.png or .svg)")
    parser.add_argument("--title", help="figure title override")
    parser.add_argument("--episode", type=int, default=0,
                        help="episode index for usage_timeline")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out, title=args.title, episode=args.episode)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
