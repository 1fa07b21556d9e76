"""PNG figures written next to the CSV reports.

Uses the non-interactive Agg backend; nothing here is needed for the numbers.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_attack(records, path):
    """Modified-point counts and Chamfer distances of successful attacks."""
    ok = [r for r in records if r.get("success") and "metrics" in r]
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(7, 2.8))
    if ok:
        pts = np.array([r["metrics"]["n_modified"] for r in ok])
        cds = np.array([r["metrics"]["cd"] for r in ok])
        a0.hist(pts, bins=np.arange(pts.max() + 2) - 0.5, color="0.35")
        a1.hist(cds, bins=20, color="0.35")
    a0.set_xlabel("modified points")
    a0.set_ylabel("samples")
    a1.set_xlabel("Chamfer distance")
    n = len(records)
    fig.suptitle(f"{len(ok)}/{n} successful" if n else "no samples")
    return _save(fig, path)


def plot_sweep(rows, path):
    """ASR and mean CD against the subset size cap."""
    t = [int(r.method) for r in rows]
    fig, ax = plt.subplots(figsize=(4, 2.8))
    ax.plot(t, [r.asr for r in rows], "o-", color="k")
    ax.set_xscale("log")
    ax.set_xticks(t)
    ax.set_xticklabels([str(v) for v in t])
    ax.set_xlabel("t_max")
    ax.set_ylabel("ASR (%)")
    ax.set_ylim(0, 105)
    ax2 = ax.twinx()
    ax2.plot(t, [r.cd for r in rows], "s--", color="tab:red")
    ax2.set_ylabel("mean CD", color="tab:red")
    return _save(fig, path)


def plot_histogram(rows, path):
    """Cooperative and counteractive partner counts per point."""
    fig, ax = plt.subplots(figsize=(4.5, 2.8))
    if rows:
        v = np.array([r[0] for r in rows])
        ax.bar(v - 0.2, [r[1] for r in rows], width=0.4, label="cooperative", color="tab:blue")
        ax.bar(v + 0.2, [r[2] for r in rows], width=0.4, label="counteractive", color="tab:orange")
        ax.legend(frameon=False)
    ax.set_xlabel("partner count")
    ax.set_ylabel("points")
    return _save(fig, path)
