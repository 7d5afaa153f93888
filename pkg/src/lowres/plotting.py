"""Figure rendering for benchmark reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import EvalReport

RANDOM_GUESS = 0.25


def render_subject_figure(
    report: EvalReport,
    path,
    other: EvalReport | None = None,
    label_a: str = "run A",
    label_b: str = "run B",
) -> None:
    """Horizontal per-subject accuracy bars, with the random-guess line.

    With a second report, bars are drawn side by side per subject.
    """
    subjects = sorted(set(report.per_subject) | (set(other.per_subject) if other else set()))
    if not subjects:
        raise ValueError("report has no subjects")
    acc_a = [report.per_subject[s].accuracy if s in report.per_subject else 0.0
             for s in subjects]
    ys = range(len(subjects))
    height = max(3.0, 0.3 * len(subjects) + 1.2)
    fig, ax = plt.subplots(figsize=(9, height))
    if other is None:
        ax.barh(list(ys), acc_a, height=0.7, color="#3b6ea5")
    else:
        acc_b = [other.per_subject[s].accuracy if s in other.per_subject else 0.0
                 for s in subjects]
        ax.barh([y + 0.2 for y in ys], acc_a, height=0.38, color="#3b6ea5", label=label_a)
        ax.barh([y - 0.2 for y in ys], acc_b, height=0.38, color="#c2803d", label=label_b)
        ax.legend(loc="lower right")
    ax.axvline(RANDOM_GUESS, color="gray", linestyle="--", linewidth=1,
               label="random guess")
    ax.set_yticks(list(ys))
    ax.set_yticklabels(subjects, fontsize=8)
    ax.set_xlabel("accuracy")
    ax.set_xlim(0, 1)
    ax.invert_yaxis()
    ax.set_title("Per-subject multiple-choice accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
