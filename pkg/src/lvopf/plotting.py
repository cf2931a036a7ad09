"""Static figures for power-flow, dispatch and study results (PNG via Agg)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PHASE_COLORS = {"a": "tab:orange", "b": "tab:green", "c": "tab:blue"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def voltage_profile(node_ids, magnitudes, path, *, limits=None, title="Voltage profile") -> Path:
    """|V| per phase against node; ``magnitudes`` has shape (n_nodes, 3)."""
    mags = np.asarray(magnitudes, float)
    x = np.arange(len(node_ids))
    fig, ax = plt.subplots(figsize=(7, 3.8))
    for k, ph in enumerate("abc"):
        ax.plot(x, mags[:, k], marker="o", ms=3, color=PHASE_COLORS[ph], label=f"phase {ph}")
    if limits is not None:
        for v in limits:
            ax.axhline(v, color="grey", ls="--", lw=0.8)
    ax.set_xticks(x, [str(i) for i in node_ids], fontsize=7)
    ax.set_xlabel("node")
    ax.set_ylabel("|V| (pu)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def inverter_dispatch(labels, s_kva, p_kw, q_kvar, path, *, title="Inverter dispatch") -> Path:
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(8, 3.8))
    w = 0.38
    ax.bar(x - w / 2, p_kw, w, label="P (kW)", color="tab:orange")
    ax.bar(x + w / 2, q_kvar, w, label="Q (kvar)", color="tab:blue")
    ax.scatter(x - w / 2, s_kva, marker="_", s=120, color="black", label="available (kVA)", zorder=3)
    ax.axhline(0, color="black", lw=0.6)
    ax.set_xticks(x, labels, rotation=60, fontsize=7)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def curtailment_bars(scenarios, series: dict, path, *, ylabel="curtailment (%)",
                     title="PV curtailment") -> Path:
    """Grouped bars; ``series`` maps a label to one value per scenario (NaN = missing)."""
    x = np.arange(len(scenarios))
    n = max(len(series), 1)
    w = 0.8 / n
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    for k, (label, values) in enumerate(series.items()):
        vals = np.asarray(values, float)
        bars = ax.bar(x + (k - (n - 1) / 2) * w, np.nan_to_num(vals), w, label=label)
        for rect, v in zip(bars, vals):
            if np.isfinite(v):
                ax.annotate(f"{v:.1f}", (rect.get_x() + rect.get_width() / 2, rect.get_height()),
                            ha="center", va="bottom", fontsize=7)
    ax.set_xticks(x, scenarios)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)
