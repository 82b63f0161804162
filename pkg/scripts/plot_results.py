#!/usr/bin/env python3
"""Render figures from the CSV files the CLI emits.

Usage:
    python scripts/plot_results.py <output_dir> [--save <dir>]

Reads whichever of training_stats.csv, eval_basis.csv, eval_costs.csv and
compare_costs.csv exist in <output_dir> and writes PNG figures next to
them (or to --save). Kept out of the package so the library itself has no
plotting dependency.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    header = rows[0]
    cols = {h: [float(r[i]) for r in rows[1:]] for i, h in enumerate(header)}
    return header, cols


def plot_training(path, save_dir):
    _, cols = read_csv(path)
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    ax[0].plot(cols["iteration"], cols["mean_cost"], label="mean")
    ax[0].plot(cols["iteration"], cols["best_cost"], label="best")
    ax[0].set_xlabel("iteration")
    ax[0].set_ylabel("trajectory cost")
    ax[0].legend()
    ax[1].plot(cols["iteration"], cols["ess"])
    ax[1].set_xlabel("iteration")
    ax[1].set_ylabel("effective sample size")
    fig.tight_layout()
    fig.savefig(save_dir / "training_curves.png", dpi=150)
    print(f"wrote {save_dir / 'training_curves.png'}")


def plot_basis(path, save_dir):
    header, cols = read_csv(path)
    labels = [h[:-5] for h in header if h.endswith("_mean")]
    t = cols["time"]
    fig, ax = plt.subplots(figsize=(8, 5))
    for lab in labels:
        if lab == "II":
            continue
        mean = cols[f"{lab}_mean"]
        band = cols[f"{lab}_2sigma"]
        (line,) = ax.plot(t, mean, lw=1.2, label=lab)
        ax.fill_between(
            t,
            [m - b for m, b in zip(mean, band)],
            [m + b for m, b in zip(mean, band)],
            alpha=0.15,
            color=line.get_color(),
        )
    ax.set_xlabel("time")
    ax.set_ylabel("basis expectation")
    ax.legend(ncol=5, fontsize=7)
    fig.tight_layout()
    fig.savefig(save_dir / "basis_expectations.png", dpi=150)
    print(f"wrote {save_dir / 'basis_expectations.png'}")


def plot_costs(path, save_dir, stem):
    header, cols = read_csv(path)
    arms = sorted({h.split("Jstate_mean_")[1] for h in header if h.startswith("Jstate_mean_")})
    suffixes = [f"_{a}" for a in arms] if arms else [""]
    names = arms if arms else ["policy"]
    t = cols["time"]
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    for which, axis in zip(("Jstate", "Jcontrol"), ax):
        for name, suf in zip(names, suffixes):
            mean = cols[f"{which}_mean{suf}"]
            band = cols[f"{which}_1sigma{suf}"]
            (line,) = axis.plot(t, mean, label=name)
            axis.fill_between(
                t,
                [m - b for m, b in zip(mean, band)],
                [m + b for m, b in zip(mean, band)],
                alpha=0.2,
                color=line.get_color(),
            )
        axis.set_xlabel("time")
        axis.set_ylabel(f"cumulative {which}")
        axis.legend()
    fig.tight_layout()
    fig.savefig(save_dir / f"{stem}.png", dpi=150)
    print(f"wrote {save_dir / f'{stem}.png'}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("output_dir", type=Path)
    ap.add_argument("--save", type=Path, default=None)
    args = ap.parse_args()
    save_dir = args.save or args.output_dir
    save_dir.mkdir(parents=True, exist_ok=True)

    targets = {
        "training_stats.csv": plot_training,
        "eval_basis.csv": plot_basis,
    }
    for name, fn in targets.items():
        path = args.output_dir / name
        if path.exists():
            fn(path, save_dir)
    for name, stem in (("eval_costs.csv", "cost_curves"), ("compare_costs.csv", "cost_comparison")):
        path = args.output_dir / name
        if path.exists():
            plot_costs(path, save_dir, stem)


if __name__ == "__main__":
    main()
