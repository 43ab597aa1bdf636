"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def pretty_axes(width=6.0, height=None):
    height = height or width * 0.62
    fig, ax = plt.subplots(figsize=(width, height))
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_ssim_by_af(aggregates, path, title=""):
    """Mean SSIM against AF, one line per sampling pattern."""
    lines = defaultdict(dict)
    for a in aggregates:
        if a.ssim_mean is not None:
            lines[a.pattern].setdefault(a.af, []).append(a.ssim_adj)
    fig, ax = pretty_axes()
    for pattern, by_af in sorted(lines.items()):
        afs = sorted(by_af)
        ax.plot(afs, [np.mean(by_af[f]) for f in afs], "o-", label=pattern)
    ax.set_xlabel("acceleration factor")
    ax.set_ylabel("SSIM (success-rate adjusted)")
    if title:
        ax.set_title(title)
    if lines:
        ax.legend(frameon=False)
    return _save(fig, path)


def plot_leaderboard(entries, path):
    fig, ax = pretty_axes(width=max(4.0, 0.9 * len(entries) + 2))
    teams = [e.team for e in entries]
    vals = [e.ssim_adj_overall for e in entries]
    bars = ax.bar(range(len(teams)), vals, color="0.55")
    for bar, e in zip(bars, entries):
        ax.annotate(str(e.final_rank), (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=9)
    ax.set_xticks(range(len(teams)), teams, rotation=30, ha="right")
    ax.set_ylabel("overall adjusted SSIM")
    lo = min(vals) if vals else 0.0
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    return _save(fig, path)


def plot_reader_vs_metric(x, z, fit, path, xlabel="SSIM"):
    """Median reader Z against an objective metric with the cubic fit overlaid."""
    fig, ax = pretty_axes()
    ax.scatter(x, z, s=14, color="0.3")
    if fit is not None and len(x):
        grid = np.linspace(min(x), max(x), 200)
        ax.plot(grid, fit(grid), color="C3", lw=1.5, label="cubic fit")
        ax.legend(frameon=False)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("median reader Z")
    return _save(fig, path)


def plot_throughput(records, path):
    by_method = defaultdict(list)
    for r in records:
        by_method[r.method].append(r.throughput)
    methods = sorted(by_method)
    fig, ax = pretty_axes()
    ax.bar(range(len(methods)), [np.median(by_method[m]) for m in methods], color="0.55")
    ax.set_xticks(range(len(methods)), methods)
    ax.set_ylabel("throughput (slices/s)")
    ax.set_yscale("log")
    return _save(fig, path)
