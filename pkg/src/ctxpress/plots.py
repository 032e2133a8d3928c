"""Convenience SVG renderings of the CSV outputs (the CSVs are the surface)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import read_metrics_csv


def plot_metrics(metrics_csv, out_dir) -> list:
    """Mean budget vs quality per swept ratio, and quality vs context length."""
    rows = read_metrics_csv(metrics_csv)
    out_dir = Path(out_dir)
    made = []

    by_variant_r = defaultdict(list)
    for r in rows:
        by_variant_r[(r["variant"], float(r["r"]))].append(r)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    series = defaultdict(list)
    for (variant, r), subset in sorted(by_variant_r.items()):
        mean_k = sum(float(x["k"]) for x in subset) / len(subset)
        rouge = sum(float(x["rouge_l_f"]) for x in subset) / len(subset)
        f1 = sum(float(x["f1"]) for x in subset) / len(subset)
        series[variant].append((mean_k, rouge, f1, r))
    for variant, points in series.items():
        points.sort()
        ax1.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=variant)
        ax2.plot([p[0] for p in points], [p[2] for p in points], marker="s", label=variant)
    ax1.set_xlabel("mean compressed tokens k")
    ax1.set_ylabel("reconstruction ROUGE-L-F")
    ax2.set_xlabel("mean compressed tokens k")
    ax2.set_ylabel("answer F1")
    for ax in (ax1, ax2):
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    path = out_dir / "quality_vs_k.svg"
    fig.savefig(path)
    plt.close(fig)
    made.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    lengths = [float(r["cr"]) * float(r["k"]) for r in rows]
    rouges = [float(r["rouge_l_f"]) for r in rows]
    ax.scatter(lengths, rouges, s=8, alpha=0.5)
    ax.set_xlabel("context tokens")
    ax.set_ylabel("reconstruction ROUGE-L-F")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "quality_vs_length.svg"
    fig.savefig(path)
    plt.close(fig)
    made.append(path)
    return made


def plot_probe(probe_csv, out_dir) -> list:
    """Gold vs predicted length scatter, one color per granularity."""
    import csv

    with Path(probe_csv).open("r", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    by_gran = defaultdict(list)
    for r in rows:
        by_gran[r["granularity"]].append((float(r["l_rel"]), float(r["l_hat"])))
    for gran, pts in sorted(by_gran.items()):
        ax.scatter([p[0] for p in pts], [p[1] for p in pts], s=10, alpha=0.6, label=gran)
    lim = max((max(p) for pts in by_gran.values() for p in pts), default=1.0)
    ax.plot([0, lim], [0, lim], color="gray", lw=1, ls="--")
    ax.set_xlabel("gold relevant length")
    ax.set_ylabel("predicted length")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(out_dir) / "probe_scatter.svg"
    fig.savefig(path)
    plt.close(fig)
    return [path]
