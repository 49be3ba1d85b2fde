"""Figure rendering for evaluation reports and training logs.

Everything draws through the Agg backend and writes straight to files, so
the module is safe in headless batch runs.
"""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalkit import COLUMN_ORDER, MetricReport, normalized_components


def render_metrics_figure(report: MetricReport, path) -> None:
    """Bar chart of the normalized composite components plus the final score."""
    comps = normalized_components(report)
    names = [c for c in ("accuracy", "chatgpt", "bleu", "rouge_l", "cider", "match") if c in comps]
    values = [comps[n] for n in names]
    names.append("final")
    values.append(report.final)

    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(range(len(names)), values, color="#4878a8")
    bars[-1].set_color("#a84848")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("normalized score")
    ax.set_title("evaluation metrics")
    for x, v in enumerate(values):
        ax.text(x, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(log: Sequence[dict], path) -> None:
    """Loss components and learning rate over training steps."""
    steps = [e["step"] for e in log]
    loss_keys = sorted(k for k in (log[0] if log else {}) if k.startswith("loss_"))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    if log:
        ax1.plot(steps, [e["loss"] for e in log], label="total", color="black", lw=1.5)
        for key in loss_keys:
            ax1.plot(steps, [e.get(key) for e in log], label=key[5:], lw=0.8, alpha=0.7)
        ax2.plot(steps, [e["lr"] for e in log], color="#4878a8")
    ax1.set_yscale("log")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=7, ncol=2)
    ax2.set_ylabel("learning rate")
    ax2.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_tsv(report: MetricReport, path, extra: Optional[dict] = None) -> None:
    """Tab-delimited metric table: one header line, one value line."""
    d = report.as_dict()
    if extra:
        d.update(extra)
    cols = [c for c in COLUMN_ORDER if c in d]
    cols += [c for c in d if c not in cols]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(cols) + "\n")
        fh.write("\t".join(repr(float(d[c])) if isinstance(d[c], (int, float)) else str(d[c]) for c in cols) + "\n")
