"""Figures for audit reports and parameter sweeps (written to files, never shown)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .attacks import ATTACKS, AuditReport  # noqa: E402

STYLE = {
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "figure.dpi": 120,
}
VARIANT_STYLE = {"num": ("tab:blue", "o"), "all": ("tab:green", "s"), "baseline": ("tab:red", "^")}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_audit(report: AuditReport, path) -> Path:
    """Candidate-set size distribution per attack, and breaches per release."""
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.4))
        sizes = [np.asarray(report.ci_sizes[a]) for a in ATTACKS]
        top = max((int(s.max()) for s in sizes if s.size), default=1)
        bins = np.unique(np.geomspace(1, max(top, 2) + 1, 30).astype(int))
        for attack, s in zip(ATTACKS, sizes):
            if s.size:
                left.hist(np.maximum(s, 1), bins=bins, histtype="step", label=f"{attack} (n={s.size})")
        left.axvline(report.k, color="k", ls="--", lw=0.8, label=f"k={report.k}")
        left.set_xscale("log")
        left.set_xlabel("candidate set size after pruning")
        left.set_ylabel("targets")
        left.legend(frameon=False)

        idx = sorted(report.per_release)
        x = np.arange(len(idx))
        rec = [report.per_release[i].record_breaches for i in idx]
        att = [report.per_release[i].attribute_breaches for i in idx]
        right.bar(x - 0.2, rec, 0.4, label="record")
        right.bar(x + 0.2, att, 0.4, label="attribute")
        right.set_xticks(x, [f"R_{i}" for i in idx])
        right.set_ylabel("breaches")
        right.legend(frameon=False)
        fig.suptitle(f"audit, background {'on' if report.background else 'off'}")
        return _save(fig, path)


def plot_sweep(rows: Sequence[Mapping], path, metrics: Sequence[str] = ("nil", "rr", "ar_rev")) -> Path:
    """One panel per metric against epsilon; the noise-free variant is drawn as a flat line."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            for variant, (color, marker) in VARIANT_STYLE.items():
                pts = sorted((r["epsilon"], r[metric]) for r in rows
                             if r["variant"] == variant and r.get(metric) is not None)
                if not pts:
                    continue
                eps, vals = zip(*pts)
                if variant == "baseline":
                    ax.axhline(float(np.mean(vals)), color=color, ls="--", label=variant)
                else:
                    ax.plot(eps, vals, color=color, marker=marker, label=variant)
            ax.set_xscale("log")
            ax.set_xlabel("epsilon")
            ax.set_title(metric)
        axes[0][0].legend(frameon=False)
        return _save(fig, path)
