"""Figures rendered next to the CSV outputs of ``simulate`` and ``sweep``.

The figures only read the rows that were already written to CSV, so they add
nothing that the delimited output does not contain.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_steps_to_silence(rows, path, title=""):
    """Box plot of steps to silence per population size.

    ``rows`` are simulate summary rows as dicts; runs that never went silent
    are counted in the tick label but not drawn.
    """
    by_n = defaultdict(list)
    missing = defaultdict(int)
    for r in rows:
        n = int(r["n"])
        if r["steps_to_silence"] in ("", None):
            missing[n] += 1
        else:
            by_n[n].append(int(r["steps_to_silence"]))
    ns = sorted(set(by_n) | set(missing))
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    data = [by_n[n] or [float("nan")] for n in ns]
    ax.boxplot(data, positions=range(len(ns)), widths=0.6)
    ax.set_xticks(range(len(ns)))
    ax.set_xticklabels([f"{n}" + (f"\n({missing[n]} open)" if missing[n] else "") for n in ns])
    ax.set_xlabel("n (agents)")
    ax.set_ylabel("steps to silence")
    ax.set_yscale("symlog")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_group_balance(rows, path, title=""):
    """Histogram of max-min group size difference at the end of each run."""
    spread = defaultdict(int)
    for r in rows:
        counts = [int(c) for c in str(r["final_group_counts"]).split(";") if c != ""]
        spread[max(counts) - min(counts) if counts else 0] += 1
    xs = sorted(spread)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.bar([str(x) for x in xs], [spread[x] for x in xs], color="tab:blue")
    ax.set_xlabel("max - min group size at end of run")
    ax.set_ylabel("runs")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


_STATUS_COLOR = {"Proved": "tab:green", "Refuted": "tab:red", "Inconclusive": "tab:gray",
                 "Error": "black"}


def plot_sweep(rows, path, title=""):
    """Reachable configurations per instance, colored by verdict."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    seen = set()
    for r in rows:
        nodes = r.get("nodes")
        if nodes in ("", None):
            continue
        status = r["status"]
        label = status if status not in seen else None
        seen.add(status)
        ax.scatter(int(r["P"]) + 0.1 * int(r["n"]) - 0.05, int(nodes),
                   color=_STATUS_COLOR.get(status, "tab:purple"), label=label, s=18)
    ax.set_yscale("log")
    ax.set_xlabel("P (n offsets within each column)")
    ax.set_ylabel("reachable configurations")
    if seen:
        ax.legend(loc="upper left")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
