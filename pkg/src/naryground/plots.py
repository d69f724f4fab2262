"""Static figures and machine-readable summaries for training/eval runs."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import EvalReport

SPLIT_FIELDS = ("overall_acc", "hard_acc", "easy_acc", "rn_ge2_acc", "rn_le1_acc")


def plot_loss_curves(curves: dict, out_path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    epochs = range(len(curves["train_loss"]))
    ax1.plot(epochs, curves["train_loss"], label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, curves["val_acc"], label="val accuracy", color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_split_bars(reports: dict[str, EvalReport], out_path) -> None:
    """Grouped bars: one group per split, one bar per report."""
    names = list(reports)
    width = 0.8 / max(1, len(names))
    fig, ax = plt.subplots(figsize=(10, 4.5))
    for pos, name in enumerate(names):
        report = reports[name]
        values = [getattr(report, f) for f in SPLIT_FIELDS]
        xs = [i + pos * width for i in range(len(SPLIT_FIELDS))]
        heights = [v if v is not None else 0.0 for v in values]
        ax.bar(xs, heights, width=width, label=name)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(SPLIT_FIELDS))])
    ax.set_xticklabels([f.removesuffix("_acc") for f in SPLIT_FIELDS])
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def summary_table(reports: dict[str, EvalReport]) -> dict:
    """Split accuracies copied verbatim from the reports."""
    return {
        name: {f: getattr(report, f) for f in SPLIT_FIELDS}
        for name, report in reports.items()
    }


def plot_report_files(report_paths, out_dir) -> dict:
    """Render figures + summary for one or more report files; curves files
    stored next to a report (<name>.curves.json) are plotted as well."""
    os.makedirs(out_dir, exist_ok=True)
    reports: dict[str, EvalReport] = {}
    for path in report_paths:
        name = os.path.splitext(os.path.basename(path))[0]
        with open(path, "r", encoding="utf-8") as fh:
            reports[name] = EvalReport.from_json(fh.read())
        curves_path = str(path) + ".curves.json"
        if os.path.exists(curves_path):
            with open(curves_path, "r", encoding="utf-8") as fh:
                plot_loss_curves(json.load(fh), os.path.join(out_dir, f"{name}_curves.png"))
    plot_split_bars(reports, os.path.join(out_dir, "accuracy_by_split.png"))
    summary = summary_table(reports)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
