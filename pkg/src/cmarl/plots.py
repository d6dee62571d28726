"""CSV tables and static figures from a run's artifacts."""

import csv
import os
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import STRATA
from .logger import get_logger
from .metrics import MetricsRecord, read_metrics
from .pipeline import EvalReport, read_eval_report

logger = get_logger(__name__)

EVAL_REPORTS = (("N=1", "eval_n1.json"), ("TTS", "eval_tts.json"), ("copy baseline", "copy_baseline.json"))


def _write_csv(path: str, rows: Sequence[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def metrics_rows(records: Sequence[MetricsRecord]) -> List[dict]:
    return [
        {
            "phase": r.phase,
            "step": r.step,
            "mean_reward": r.mean_reward,
            "mean_format": r.mean_format,
            "mean_accuracy": r.mean_accuracy,
            "mean_entropy": r.mean_entropy,
            "mean_kl": r.mean_kl,
            "grad_norm": r.grad_norm,
        }
        for r in records
    ]


def eval_rows(reports: Dict[str, EvalReport]) -> List[dict]:
    rows = []
    for label, report in reports.items():
        row = {"run": label, "overall": report.overall_accuracy, "tts_samples": report.tts_samples}
        for stratum in STRATA:
            row[f"acc_{stratum.value}"] = report.accuracy_by_difficulty[stratum]
            row[f"n_{stratum.value}"] = report.n_by_difficulty[stratum]
        rows.append(row)
    return rows


def plot_training_curves(records: Sequence[MetricsRecord], path: str) -> None:
    fig, (ax_reward, ax_entropy) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    offset = 0
    for phase in dict.fromkeys(r.phase for r in records):
        points = [r for r in records if r.phase == phase]
        steps = [offset + r.step for r in points]
        ax_reward.plot(steps, [r.mean_reward for r in points], label=phase)
        ax_entropy.plot(steps, [r.mean_entropy for r in points], label=phase)
        offset = max(steps) + 1
    ax_reward.set_ylabel("mean reward")
    ax_entropy.set_ylabel("mean token entropy")
    ax_entropy.set_xlabel("training step")
    ax_reward.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_difficulty_bars(reports: Dict[str, EvalReport], path: str) -> None:
    labels = [s.title for s in STRATA] + ["Overall"]
    width = 0.8 / max(len(reports), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, (name, report) in enumerate(reports.items()):
        values = [report.accuracy_by_difficulty[s] for s in STRATA] + [report.overall_accuracy]
        ax.bar([x + i * width for x in range(len(labels))], values, width, label=name)
    ax.set_xticks([x + width * (len(reports) - 1) / 2 for x in range(len(labels))])
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_theory(rows: Sequence[dict], path: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.hist([float(r["cl_error_sq"]) for r in rows], bins=30, alpha=0.7, label="curriculum ||cl - theta*||^2")
    ax.hist([float(r["rg_error"]) for r in rows], bins=30, alpha=0.7, label="pooled ||rg - theta*||")
    ax.set_xlabel("error")
    ax.set_ylabel("trials")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_report(output_dir: str) -> List[str]:
    """Write every table and figure the available artifacts allow; returns written paths."""
    reports_dir = os.path.join(output_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    written = []

    records = read_metrics(os.path.join(output_dir, "metrics.jsonl"))
    if records:
        _write_csv(os.path.join(reports_dir, "metrics.csv"), metrics_rows(records))
        plot_training_curves(records, os.path.join(reports_dir, "training_curves.png"))
        written += [os.path.join(reports_dir, "metrics.csv"), os.path.join(reports_dir, "training_curves.png")]

    reports = {}
    for label, name in EVAL_REPORTS:
        path = os.path.join(reports_dir, name)
        if os.path.exists(path):
            reports[label] = read_eval_report(path)
    if reports:
        _write_csv(os.path.join(reports_dir, "eval.csv"), eval_rows(reports))
        plot_difficulty_bars(reports, os.path.join(reports_dir, "accuracy_by_difficulty.png"))
        written += [os.path.join(reports_dir, "eval.csv"), os.path.join(reports_dir, "accuracy_by_difficulty.png")]

    theory_csv = os.path.join(reports_dir, "theory.csv")
    if os.path.exists(theory_csv):
        with open(theory_csv, newline="") as f:
            rows = list(csv.DictReader(f))
        if rows:
            plot_theory(rows, os.path.join(reports_dir, "theory_errors.png"))
            written.append(os.path.join(reports_dir, "theory_errors.png"))

    if not written:
        logger.warning(f"No artifacts to report under {output_dir}")
    for path in written:
        logger.info(f"Wrote {path}")
    return written
