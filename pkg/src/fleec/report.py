"""CSV output and comparison figures for benchmark runs."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import RunMetrics

CSV_FIELDS = [
    "system",
    "alpha",
    "threads",
    "read_ratio",
    "ops",
    "throughput",
    "p50_ns",
    "p95_ns",
    "p99_ns",
    "hit_ratio",
    "evictions",
    "epoch_advances",
    "expansions",
]


def emit_csv(path: str, rows: list[RunMetrics], append: bool = False) -> None:
    """Write rows; a header is emitted unless appending to a non-empty file."""
    write_header = True
    if append and os.path.exists(path) and os.path.getsize(path) > 0:
        write_header = False
    mode = "a" if append else "w"
    with open(path, mode, newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction="ignore")
        if write_header:
            w.writeheader()
        for r in rows:
            d = dict(r.__dict__)
            d["alpha"] = f"{r.alpha:g}"
            d["read_ratio"] = f"{r.read_ratio:g}"
            d["throughput"] = f"{r.throughput:.1f}"
            d["hit_ratio"] = f"{r.hit_ratio:.6f}"
            w.writerow(d)


def read_csv(path: str) -> list[dict]:
    """Rows back as dicts with numeric fields parsed."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            parsed = dict(row)
            for k in ("alpha", "read_ratio", "throughput", "hit_ratio"):
                parsed[k] = float(row[k])
            for k in ("threads", "ops", "p50_ns", "p95_ns", "p99_ns",
                      "evictions", "epoch_advances", "expansions"):
                parsed[k] = int(row[k])
            out.append(parsed)
    return out


def _by_system_alpha(rows: list[dict]) -> dict:
    best: dict = defaultdict(dict)
    for r in rows:
        best[r["system"]][r["alpha"]] = r
    return best


def render_figures(csv_path: str, out_dir: str | None = None) -> list[str]:
    """Render throughput and speedup charts next to the CSV; returns paths."""
    rows = read_csv(csv_path)
    if out_dir is None:
        out_dir = os.path.dirname(os.path.abspath(csv_path))
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(csv_path))[0]
    grouped = _by_system_alpha(rows)
    written = []

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for system, by_alpha in sorted(grouped.items()):
        alphas = sorted(by_alpha)
        tputs = [by_alpha[a]["throughput"] / 1e6 for a in alphas]
        ax.plot(alphas, tputs, marker="o", label=system)
    ax.set_xlabel("zipf alpha")
    ax.set_ylabel("throughput (Mops/s)")
    ax.set_title("Throughput vs. skew")
    ax.grid(True, alpha=0.3)
    ax.legend()
    p = os.path.join(out_dir, f"{stem}_throughput.png")
    fig.savefig(p, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(p)

    fleec = grouped.get("fleec", {})
    base = grouped.get("baseline", {})
    common = sorted(set(fleec) & set(base))
    if common:
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        speedups = [fleec[a]["throughput"] / base[a]["throughput"] for a in common]
        ax.plot(common, speedups, marker="s", color="tab:green")
        ax.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
        ax.set_xlabel("zipf alpha")
        ax.set_ylabel("speedup over locked baseline")
        ax.set_title("Lock-free speedup vs. skew")
        ax.grid(True, alpha=0.3)
        p = os.path.join(out_dir, f"{stem}_speedup.png")
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(p)
    return written
