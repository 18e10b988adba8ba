"""Static SVG plots drawn from the CSV outputs."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids keep repeated renders identical
matplotlib.rcParams["svg.hashsalt"] = "regap"


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_fig1(theory_csv: Path, sim_csv: Path | None, out: Path) -> None:
    """Loss against ``sigma`` per ``delta``: theory lines and simulated medians."""
    rows = _read(theory_csv)
    by_delta = defaultdict(list)
    for r in rows:
        by_delta[float(r["delta"])].append(r)
    sims = defaultdict(list)
    if sim_csv is not None and Path(sim_csv).is_file():
        for r in _read(sim_csv):
            sims[(float(r["delta"]), r["method"])].append((float(r["sigma"]), float(r["median_loss"])))
    deltas = sorted(by_delta)
    fig, axes = plt.subplots(1, len(deltas), figsize=(3.2 * len(deltas), 3.0), squeeze=False)
    styles = {"risk_stat": ("Bayes", "k:"), "risk_amp": ("AMP", "C0-"), "risk_cvx": ("convex", "C1--")}
    for ax, d in zip(axes[0], deltas):
        rs = sorted(by_delta[d], key=lambda r: float(r["sigma"]))
        sig = [float(r["sigma"]) for r in rs]
        for col, (label, style) in styles.items():
            ax.plot(sig, [float(r[col]) for r in rs], style, label=label)
        for method, marker in (("amp", "o"), ("convex", "s")):
            pts = sorted(sims.get((d, method), []))
            if pts:
                ax.plot(*zip(*pts), marker, mfc="none", label=f"{method} (sim)")
        ax.set_title(f"delta = {d:g}")
        ax.set_xlabel("sigma")
    axes[0][0].set_ylabel("squared error")
    axes[0][0].legend(fontsize=7)
    _save(fig, out)


def plot_table1(summary_csv: Path, out: Path) -> None:
    """Per-replicate relative errors of each method."""
    rows = [r for r in _read(summary_csv) if r["replicate"].isdigit()]
    methods = sorted({r["method"] for r in rows})
    fig, ax = plt.subplots(figsize=(4.0, 3.0))
    for i, m in enumerate(methods):
        vals = [float(r["relative_loss"]) for r in rows if r["method"] == m]
        ax.plot([i] * len(vals), vals, "o", mfc="none")
    ax.set_xticks(range(len(methods)), methods)
    ax.set_ylabel("relative error")
    _save(fig, out)
