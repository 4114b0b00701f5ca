"""Metric-vs-environments series: CSV export and PNG figures."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .evaluation.episode import METRICS, aggregate

CSV_FIELDS = ("environments", "episodes") + METRICS


def environment_curve(results, rng: np.random.Generator, counts=None) -> list[dict]:
    """Aggregate metrics over growing sets of environments.

    Environments are added in one random order drawn from ``rng``; ``counts``
    defaults to every prefix size 1..n.
    """
    results = list(results)
    envs = sorted({r.scene_id for r in results})
    order = [envs[i] for i in rng.permutation(len(envs))]
    counts = range(1, len(envs) + 1) if counts is None else counts
    rows = []
    for k in counts:
        keep = set(order[:k])
        sub = [r for r in results if r.scene_id in keep]
        if not sub:
            continue
        agg = aggregate(sub)
        rows.append({"environments": k, "episodes": agg["episodes"], **{m: agg[m] for m in METRICS}})
    return rows


def write_curve_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in CSV_FIELDS})


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k in ("environments", "episodes") else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def plot_curves(rows, path, metrics=METRICS, title: str | None = None) -> Path:
    """Line plot of each metric against the number of environments, saved to ``path``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.ticker import MaxNLocator

    rows = list(rows)
    if not rows:
        raise ValueError("no rows to plot")
    x = [r["environments"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for m in metrics:
        ax.plot(x, [r[m] for r in rows], marker="o", ms=3, label=m)
    ax.set_xlabel("environments")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("score (%)")
    ax.set_ylim(0, 105)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
