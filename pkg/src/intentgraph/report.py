"""Report rendering: delimited outputs plus matplotlib figures beside them.

Every write_* function emits one CSV (or JSON/JSONL); every plot_* function
renders the matching figure to a file. Report files are deterministic for a
fixed seed: volatile values such as wall-clock time are never serialized.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .graph import StatsReport
from .harness import CVReport, RunReport
from .metrics import RocCurve
from .model import Prediction

METRIC_COLUMNS = (
    "transition_micro_auc", "transition_macro_auc",
    "transition_coverage_error", "transition_lrap",
    "concept_micro_auc", "concept_macro_auc",
    "concept_coverage_error", "concept_lrap",
    "mean_energy", "median_energy",
)


def _ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)


def write_summary_csv(path, reports: list[RunReport]) -> None:
    """One row per run: variant, seed, split hash, and the metric suite."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "split_sha", "best_epoch", *METRIC_COLUMNS])
        for r in reports:
            writer.writerow([
                r.variant, r.seed, r.split_sha, r.best_epoch,
                *(f"{r.test_metrics[c]:.6f}" if c in r.test_metrics else "" for c in METRIC_COLUMNS),
            ])


def write_per_label_auc_csv(path, reports: list[RunReport]) -> None:
    """Per-transition AUC table: one row per transition, one column per variant."""
    variants = [r.variant for r in reports]
    names: list[str] = []
    for r in reports:
        for name in r.per_label_auc:
            if name not in names:
                names.append(name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept_transition", *variants])
        for name in names:
            row = [name]
            for r in reports:
                auc = r.per_label_auc.get(name)
                row.append("" if auc is None else f"{auc:.6f}")
            writer.writerow(row)


def write_history_csv(path, report: RunReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "validation_metric"])
        for s in report.epoch_stats:
            writer.writerow([s.epoch, f"{s.train_loss:.6f}", f"{s.val_metric:.6f}"])


def write_roc_points_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in zip(curve.fpr, curve.tpr, curve.thresholds):
            writer.writerow([f"{fpr:.6f}", f"{tpr:.6f}", f"{thr:.6f}" if np.isfinite(thr) else "inf"])


def write_stats_csv(path, stats: StatsReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "name", "count"])
        writer.writerows(stats.rows())


def write_report_json(path, report: RunReport) -> None:
    payload = {
        "variant": report.variant,
        "seed": report.seed,
        "best_epoch": report.best_epoch,
        "n_train": report.n_train,
        "n_validation": report.n_validation,
        "n_test": report.n_test,
        "split_sha": report.split_sha,
        "test_metrics": report.test_metrics,
        "per_label_auc": report.per_label_auc,
        "epochs": [
            {"epoch": s.epoch, "train_loss": s.train_loss, "validation_metric": s.val_metric}
            for s in report.epoch_stats
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def write_cv_json(path, cv: CVReport) -> None:
    payload = {
        "folds": cv.folds,
        "pooled_metrics": cv.pooled_metrics,
        "per_label_auc": cv.per_label_auc,
        "fold_metrics": [r.test_metrics for r in cv.fold_reports],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def write_predictions_jsonl(path, predictions: list[Prediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "concept_probs": [round(float(x), 8) for x in p.concept_probs],
                "transition_probs": [round(float(x), 8) for x in p.transition_probs],
                "token_scores": [round(float(x), 8) for x in p.token_scores],
            }) + "\n")


# ---------------------------------------------------------------------------
# figures


def plot_roc_curves(curves: dict[str, tuple[RocCurve, float]], path) -> None:
    """Overlayed ROC curves, one per labelled run (e.g. per variant)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (curve, auc) in curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f"{label} (AUC {auc:.4f})")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("transition inference ROC")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_variant_comparison(reports: list[RunReport], path) -> None:
    """Grouped bars of micro/macro transition AUC per variant."""
    variants = [r.variant for r in reports]
    micro = [r.test_metrics.get("transition_micro_auc", np.nan) for r in reports]
    macro = [r.test_metrics.get("transition_macro_auc", np.nan) for r in reports]
    x = np.arange(len(variants))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, micro, width=0.4, label="micro-AUC")
    ax.bar(x + 0.2, macro, width=0.4, label="macro-AUC")
    ax.set_xticks(x)
    ax.set_xticklabels(variants, rotation=20)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("AUC")
    ax.set_title("variant comparison")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_curve(report: RunReport, path) -> None:
    epochs = [s.epoch for s in report.epoch_stats]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(epochs, [s.train_loss for s in report.epoch_stats])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, [s.val_metric for s in report.epoch_stats], color="tab:orange")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation micro-AUC")
    fig.suptitle(f"{report.variant} (seed {report.seed})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_graph_stats(stats: StatsReport, path, top: int = 15) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, counts, title in (
        (ax1, stats.concept_counts, "concept mentions"),
        (ax2, stats.transition_counts, "transition activations"),
    ):
        items = list(counts.items())[:top]
        ax.barh([name for name, _ in reversed(items)], [c for _, c in reversed(items)])
        ax.set_title(title)
        ax.tick_params(axis="y", labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_run_report(report_dir, report: RunReport,
                      roc: dict[str, tuple[RocCurve, float]] | None = None) -> None:
    """Standard per-run bundle: JSON + history CSV + per-label CSV + figures."""
    _ensure_dir(report_dir)
    write_report_json(os.path.join(report_dir, "report.json"), report)
    write_summary_csv(os.path.join(report_dir, "summary.csv"), [report])
    write_per_label_auc_csv(os.path.join(report_dir, "per_transition_auc.csv"), [report])
    if report.epoch_stats:
        write_history_csv(os.path.join(report_dir, "history.csv"), report)
        plot_training_curve(report, os.path.join(report_dir, "training_curve.png"))
    if roc:
        for label, (curve, _) in roc.items():
            write_roc_points_csv(os.path.join(report_dir, f"roc_{label}.csv"), curve)
        plot_roc_curves(roc, os.path.join(report_dir, "roc_curves.png"))
