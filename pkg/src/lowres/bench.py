"""Translated multiple-choice benchmark construction and scoring.

Answer keys, subjects, and item order are conserved through
translation; scoring parses the first standalone choice letter from a
free-form response and aggregates micro, macro, and non-STEM accuracies.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .tokenizer import TokenizerModel
from .translate import TranslationFailed, translate_text

logger = logging.getLogger(__name__)

# Standard MMLU STEM subjects, plus formal logic; overridable per run.
DEFAULT_STEM_SUBJECTS = (
    "abstract_algebra",
    "astronomy",
    "college_biology",
    "college_chemistry",
    "college_computer_science",
    "college_mathematics",
    "college_physics",
    "computer_security",
    "conceptual_physics",
    "electrical_engineering",
    "elementary_mathematics",
    "formal_logic",
    "high_school_biology",
    "high_school_chemistry",
    "high_school_computer_science",
    "high_school_mathematics",
    "high_school_physics",
    "high_school_statistics",
    "machine_learning",
)

DEFAULT_PROMPT_TEMPLATE = (
    "{question}\nA. {a}\nB. {b}\nC. {c}\nD. {d}\nAnswer:"
)

DEFAULT_LABELS = "ABCD"


class PromptTemplateError(ValueError):
    """The prompt template is missing a required placeholder."""


@dataclass(frozen=True)
class MMLUItem:
    subject: str
    question: str
    choices: tuple[str, str, str, str]
    answer: int

    def __post_init__(self):
        if len(self.choices) != 4 or any(not c for c in self.choices):
            raise ValueError("exactly 4 nonempty choices required")
        if self.answer not in (0, 1, 2, 3):
            raise ValueError(f"answer index {self.answer} out of range")


@dataclass
class SubjectTally:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


@dataclass
class EvalReport:
    per_subject: dict[str, SubjectTally]
    overall_micro: float
    overall_macro: float
    non_stem_micro: float | None
    stem_subjects: tuple[str, ...]
    labels: dict = field(default_factory=dict)


def item_from_dict(obj: dict) -> MMLUItem:
    return MMLUItem(
        subject=obj["subject"],
        question=obj["question"],
        choices=tuple(obj["choices"]),
        answer=int(obj["answer"]),
    )


def item_to_dict(item: MMLUItem) -> dict:
    return {
        "subject": item.subject,
        "question": item.question,
        "choices": list(item.choices),
        "answer": item.answer,
    }


def read_items(path) -> list[MMLUItem]:
    from .corpus import iter_jsonl

    return [item_from_dict(obj) for obj in iter_jsonl(path)]


def build_translated_benchmark(
    items: Sequence[MMLUItem],
    backend,
    counter: TokenizerModel,
    **pipeline_kwargs,
) -> tuple[list[MMLUItem], int]:
    """Translate question and choices; subject/answer copied verbatim.

    Items whose fields cannot be fully translated are dropped and
    counted; order of the survivors is preserved.
    """
    out: list[MMLUItem] = []
    dropped = 0
    for item in items:
        try:
            question = translate_text(item.question, backend, counter, **pipeline_kwargs)
            choices = tuple(
                translate_text(c, backend, counter, **pipeline_kwargs)
                for c in item.choices
            )
        except TranslationFailed as e:
            dropped += 1
            logger.warning("dropping item (%s): %s", item.subject, e)
            continue
        out.append(MMLUItem(item.subject, question, choices, item.answer))
    return out, dropped


def format_mc_prompt(item: MMLUItem, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    for name in ("question", "a", "b", "c", "d"):
        if "{" + name + "}" not in template:
            raise PromptTemplateError(f"template missing placeholder {{{name}}}")
    return template.format(
        question=item.question,
        a=item.choices[0],
        b=item.choices[1],
        c=item.choices[2],
        d=item.choices[3],
    )


def parse_choice(response: str, labels: str = DEFAULT_LABELS) -> int | None:
    """Index of the first standalone choice letter, or None."""
    pattern = re.compile(
        r"\b([" + re.escape(labels) + r"])\b", re.IGNORECASE
    )
    m = pattern.search(response)
    if m is None:
        return None
    return labels.upper().index(m.group(1).upper())


def score(
    items: Sequence[MMLUItem],
    responses: Sequence[str],
    labels: str = DEFAULT_LABELS,
) -> tuple[list[bool], dict[str, SubjectTally]]:
    """Per-item correctness and per-subject tallies.

    Unparseable responses count as incorrect.
    """
    if len(items) != len(responses):
        raise ValueError(
            f"length mismatch: {len(items)} items vs {len(responses)} responses"
        )
    correctness: list[bool] = []
    fragments: dict[str, SubjectTally] = {}
    for item, response in zip(items, responses):
        parsed = parse_choice(response, labels=labels)
        ok = parsed == item.answer
        correctness.append(ok)
        tally = fragments.setdefault(item.subject, SubjectTally())
        tally.total += 1
        if ok:
            tally.correct += 1
    return correctness, fragments


def aggregate(
    fragments: dict[str, SubjectTally],
    stem_subjects: Iterable[str] = DEFAULT_STEM_SUBJECTS,
    labels: dict | None = None,
) -> EvalReport:
    """Micro (item-weighted), macro (subject mean), and non-STEM scores."""
    if not fragments:
        raise ValueError("no report fragments to aggregate")
    stem = tuple(sorted(set(stem_subjects)))
    total = sum(t.total for t in fragments.values())
    correct = sum(t.correct for t in fragments.values())
    non_stem = {s: t for s, t in fragments.items() if s not in stem}
    non_stem_total = sum(t.total for t in non_stem.values())
    return EvalReport(
        per_subject=dict(sorted(fragments.items())),
        overall_micro=correct / total,
        overall_macro=sum(t.accuracy for t in fragments.values()) / len(fragments),
        non_stem_micro=(
            sum(t.correct for t in non_stem.values()) / non_stem_total
            if non_stem_total
            else None
        ),
        stem_subjects=stem,
        labels=dict(labels or {}),
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "per_subject": {
            s: {"correct": t.correct, "total": t.total, "accuracy": t.accuracy}
            for s, t in report.per_subject.items()
        },
        "overall_micro": report.overall_micro,
        "overall_macro": report.overall_macro,
        "non_stem_micro": report.non_stem_micro,
        "stem_subjects": list(report.stem_subjects),
        "labels": report.labels,
    }


def report_from_dict(data: dict) -> EvalReport:
    return EvalReport(
        per_subject={
            s: SubjectTally(v["correct"], v["total"])
            for s, v in data["per_subject"].items()
        },
        overall_micro=data["overall_micro"],
        overall_macro=data["overall_macro"],
        non_stem_micro=data.get("non_stem_micro"),
        stem_subjects=tuple(data.get("stem_subjects", ())),
        labels=data.get("labels", {}),
    )


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        return report_from_dict(json.load(f))


def export_subject_csv(report: EvalReport, path, other: EvalReport | None = None) -> None:
    """Per-subject CSV, rows sorted by subject.

    Single report: subject,correct,total,accuracy. With a second
    report: subject,acc_a,acc_b side by side. Accuracies are printed at
    full float precision.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if other is None:
            f.write("subject,correct,total,accuracy\n")
            for subject in sorted(report.per_subject):
                t = report.per_subject[subject]
                f.write(f"{subject},{t.correct},{t.total},{t.accuracy!r}\n")
        else:
            f.write("subject,acc_a,acc_b\n")
            for subject in sorted(set(report.per_subject) | set(other.per_subject)):
                a = report.per_subject.get(subject, SubjectTally()).accuracy
                b = other.per_subject.get(subject, SubjectTally()).accuracy
                f.write(f"{subject},{a!r},{b!r}\n")
