"""Report figures rendered next to the JSON/CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsReport  # noqa: E402


def plot_iou_curve(report: MetricsReport, path: Path) -> None:
    ks = sorted(report.iou_at_k)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [report.iou_at_k[k] for k in ks], marker="o", ms=3)
    ax.set_xlabel("clicks")
    ax.set_ylabel("mean IoU")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_noc_bars(noc_values: dict[int, list[int]], path: Path) -> None:
    """Histogram of per-instance NoC per quality level."""
    fig, axes = plt.subplots(1, len(noc_values), figsize=(3.2 * len(noc_values), 3),
                             sharey=True)
    if len(noc_values) == 1:
        axes = [axes]
    for ax, (q, vals) in zip(axes, sorted(noc_values.items())):
        ax.hist(vals, bins=range(1, max(vals) + 2), align="left", rwidth=0.85)
        ax.set_title(f"NoC@{q}")
        ax.set_xlabel("clicks")
    axes[0].set_ylabel("instances")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ap_sweep(table: dict[int, dict], path: Path) -> None:
    budgets = sorted(table)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, label in (("ap", "AP"), ("ap50", "AP50"), ("ap25", "AP25")):
        vals = [table[b][key] for b in budgets]
        if any(v is None for v in vals):
            continue
        ax.plot(budgets, vals, marker="o", ms=3, label=label)
    ax.set_xlabel("click budget")
    ax.set_ylabel("average precision")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
