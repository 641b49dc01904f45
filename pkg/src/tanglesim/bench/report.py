"""Figures rendered next to ``summary.csv``."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .rollout import Outcome  # noqa: E402


def _cells(records) -> dict:
    cells: dict = {}
    for r in records:
        cells.setdefault((r.tier, r.arm), []).append(r)
    return dict(sorted(cells.items()))


def plot_rates(reports: dict, path) -> None:
    """Knot-K success and verification rates per (arm, tier) cell."""
    keys = list(reports)
    k_max = max(r.k_max for r in reports.values())
    labels = [f"K={k}" for k in range(1, k_max + 1)] + ["verified"]
    x = np.arange(len(labels))
    width = 0.8 / max(len(keys), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (arm, tier) in enumerate(keys):
        r = reports[(arm, tier)]
        vals = [r.success_rates.get(k, np.nan) for k in range(1, k_max + 1)] + [r.verification_rate]
        ax.bar(x + (i - (len(keys) - 1) / 2) * width, vals, width, label=f"tier {tier} {arm}")
    ax.set_xticks(x, labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("fraction of rollouts")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_outcomes(records, path) -> None:
    cells = _cells(records)
    outcomes = [o.value for o in Outcome]
    fig, ax = plt.subplots(figsize=(7, 4))
    bottom = np.zeros(len(cells))
    names = [f"tier {t}\n{a}" for t, a in cells]
    for o in outcomes:
        counts = np.array([sum(r.outcome.value == o for r in rs) for rs in cells.values()], float)
        ax.bar(names, counts, bottom=bottom, label=o)
        bottom += counts
    ax.set_ylabel("rollouts")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_knot_curves(records, path) -> None:
    """Remaining knot count against sim time, one line per rollout."""
    cells = _cells(records)
    fig, axes = plt.subplots(1, max(len(cells), 1), figsize=(4 * max(len(cells), 1), 3.5), squeeze=False)
    for ax, ((tier, arm), rs) in zip(axes[0], cells.items()):
        for r in rs:
            t = [0.0] + [s.sim_clock for s in r.steps]
            k = [r.k0] + [s.k_t for s in r.steps]
            ax.step(t, k, where="post", alpha=0.4, lw=1)
        ax.set_title(f"tier {tier} {arm}", fontsize=9)
        ax.set_xlabel("sim time (s)")
        ax.set_ylabel("knots")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_report(records, reports: dict, out_dir) -> list[Path]:
    """Write the report figures into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "rates.png", out / "outcomes.png", out / "knots_over_time.png"]
    plot_rates(reports, paths[0])
    plot_outcomes(records, paths[1])
    plot_knot_curves(records, paths[2])
    return paths
