"""Figure rendering for the report path: one PNG next to each CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

CONTROLLER_COLORS = {"bp_star": "tab:blue", "bp": "tab:orange", "fixed": "tab:green"}
CONTROLLER_LABELS = {"bp_star": "routing-aware (bp_star)", "bp": "aggregated (bp)",
                     "fixed": "fixed cycle"}


def plot_trajectory(slots, total_queue, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(slots, total_queue, lw=0.8)
    ax.set_xlabel("slot")
    ax.set_ylabel("total queued vehicles")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_sweep(probes_by_controller: dict[str, list], x_max: dict[str, float],
               path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, probes in probes_by_controller.items():
        color = CONTROLLER_COLORS.get(name, "gray")
        xs = [p.x for p in probes]
        slopes = [max(p.slope, 1e-4) for p in probes]
        marks = ["o" if p.stable else "x" for p in probes]
        for x, s, m in zip(xs, slopes, marks):
            ax.scatter([x], [s], marker=m, color=color)
        ax.axvline(x_max[name], color=color, ls="--", lw=1,
                   label=f"{CONTROLLER_LABELS.get(name, name)}: x_max={x_max[name]:.4f}")
    ax.set_yscale("log")
    ax.set_xlabel("arrival scaling x")
    ax.set_ylabel("fitted queue slope (veh/slot)")
    ax.set_title("frontier probes (o stable, x unstable)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_samples(ratios: list[float], mean: float, std: float, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.scatter(ratios, np.zeros(len(ratios)), marker="o", color="tab:blue",
               label="per-sample performance")
    ax.scatter([mean], [0.12], marker="v", color="tab:red", label=f"mean = {mean:.3f}")
    ax.errorbar([mean], [0.12], xerr=[std], color="tab:red", capsize=4)
    ax.set_xlim(0, 1.05)
    ax.set_ylim(-0.15, 0.3)
    ax.set_yticks([])
    ax.set_xlabel("performance = x_max(bp) / x_max(bp_star)")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_drift(rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    controllers = sorted({r["controller"] for r in rows})
    for name in controllers:
        sub = [r for r in rows if r["controller"] == name]
        lam = [r["lambda"] for r in sub]
        mean = [r["mean_drift"] for r in sub]
        half = [r["halfwidth"] for r in sub]
        ax.errorbar(lam, mean, yerr=half, marker="o", capsize=3,
                    color=CONTROLLER_COLORS.get(name, "gray"),
                    label=CONTROLLER_LABELS.get(name, name))
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("per-node arrival rate")
    ax.set_ylabel("one-slot Lyapunov drift")
    ax.set_title("heavy-load drift estimates (95% CI)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
