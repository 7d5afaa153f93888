import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lowres.bench import (
    DEFAULT_STEM_SUBJECTS,
    EvalReport,
    MMLUItem,
    PromptTemplateError,
    SubjectTally,
    aggregate,
    build_translated_benchmark,
    export_subject_csv,
    format_mc_prompt,
    item_from_dict,
    item_to_dict,
    load_report,
    parse_choice,
    save_report,
    score,
)
from lowres.plotting import render_subject_figure
from lowres.translate import TAG_PREFIX, FlakyBackend, TagBackend


def make_item(subject="anatomy", answer=0, question="Q?"):
    return MMLUItem(subject, question, ("w", "x", "y", "z"), answer)


class TestItems:
    def test_dict_roundtrip(self):
        item = make_item(answer=2)
        assert item_from_dict(item_to_dict(item)) == item

    def test_wrong_choice_count(self):
        with pytest.raises(ValueError, match="4 nonempty choices"):
            MMLUItem("s", "q", ("a", "b", "c"), 0)

    def test_answer_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            MMLUItem("s", "q", ("a", "b", "c", "d"), 4)


class TestTranslatedBenchmark:
    def test_key_conserved(self, byte_model):
        items = [make_item(answer=i % 4, question=f"Question {i}?")
                 for i in range(8)]
        out, dropped = build_translated_benchmark(items, TagBackend(), byte_model,
                                                  backoff_base=0)
        assert dropped == 0
        assert [o.answer for o in out] == [i.answer for i in items]
        assert [o.subject for o in out] == [i.subject for i in items]
        assert all(o.question.startswith(TAG_PREFIX) for o in out)
        assert all(c.startswith(TAG_PREFIX) for o in out for c in o.choices)

    def test_failed_items_dropped_and_counted(self, byte_model):
        items = [make_item(question=f"Question {i}?") for i in range(3)]
        # Enough injected failures to sink the first item only.
        backend = FlakyBackend(4, TagBackend())
        out, dropped = build_translated_benchmark(items, backend, byte_model,
                                                  max_retries=0, backoff_base=0)
        assert dropped >= 1
        assert len(out) + dropped == 3


class TestPrompt:
    def test_default_template(self):
        item = MMLUItem("s", "Pick one.", ("al", "be", "ga", "de"), 1)
        assert format_mc_prompt(item) == (
            "Pick one.\nA. al\nB. be\nC. ga\nD. de\nAnswer:"
        )

    def test_missing_placeholder(self):
        with pytest.raises(PromptTemplateError, match="{d}"):
            format_mc_prompt(make_item(), template="{question} {a} {b} {c}")


class TestParseChoice:
    @pytest.mark.parametrize("response,expected", [
        ("B", 1),
        ("The answer is C.", 2),
        ("d", 3),
        ("A. because...", 0),
        ("BAD", None),
        ("", None),
        ("1", None),
        ("cab", None),
        ("answer: (D)", 3),
    ])
    def test_cases(self, response, expected):
        assert parse_choice(response) == expected

    def test_first_match_wins(self):
        assert parse_choice("A or maybe B") == 0

    @given(st.text(max_size=30))
    def test_never_raises(self, response):
        out = parse_choice(response)
        assert out is None or out in (0, 1, 2, 3)


class TestScore:
    def test_correctness_and_tallies(self):
        items = [make_item("anatomy", 0), make_item("anatomy", 1),
                 make_item("virology", 2)]
        correctness, frags = score(items, ["A", "C", "C"])
        assert correctness == [True, False, True]
        assert (frags["anatomy"].correct, frags["anatomy"].total) == (1, 2)
        assert (frags["virology"].correct, frags["virology"].total) == (1, 1)

    def test_unparseable_counts_wrong(self):
        correctness, _ = score([make_item(answer=0)], ["no letter here"])
        assert correctness == [False]

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch: 1 items vs 2"):
            score([make_item()], ["A", "B"])


class TestAggregate:
    def fragments(self):
        return {
            "anatomy": SubjectTally(3, 4),
            "astronomy": SubjectTally(1, 4),
            "virology": SubjectTally(2, 2),
        }

    def test_micro_macro_non_stem(self):
        report = aggregate(self.fragments())
        assert report.overall_micro == 6 / 10
        assert report.overall_macro == (0.75 + 0.25 + 1.0) / 3
        # astronomy is STEM; anatomy and virology are not.
        assert report.non_stem_micro == 5 / 6

    def test_non_stem_none_when_all_stem(self):
        report = aggregate({"astronomy": SubjectTally(1, 4)})
        assert report.non_stem_micro is None

    def test_formal_logic_is_stem(self):
        assert "formal_logic" in DEFAULT_STEM_SUBJECTS
        report = aggregate({"formal_logic": SubjectTally(1, 2)})
        assert report.non_stem_micro is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no report fragments"):
            aggregate({})

    def test_report_file_roundtrip(self, tmp_path):
        report = aggregate(self.fragments(), labels={"model": "base"})
        path = tmp_path / "report.json"
        save_report(report, path)
        loaded = load_report(path)
        assert loaded == report


class TestCsvExport:
    def test_single_report(self, tmp_path):
        report = aggregate({"anatomy": SubjectTally(1, 3),
                            "virology": SubjectTally(2, 2)})
        path = tmp_path / "subjects.csv"
        export_subject_csv(report, path)
        rows = list(csv.reader(path.read_text().splitlines()))
        assert rows[0] == ["subject", "correct", "total", "accuracy"]
        assert rows[1] == ["anatomy", "1", "3", repr(1 / 3)]
        assert rows[2] == ["virology", "2", "2", "1.0"]

    def test_dual_report(self, tmp_path):
        a = aggregate({"anatomy": SubjectTally(1, 4)})
        b = aggregate({"anatomy": SubjectTally(3, 4),
                       "virology": SubjectTally(1, 2)})
        path = tmp_path / "subjects.csv"
        export_subject_csv(a, path, other=b)
        rows = list(csv.reader(path.read_text().splitlines()))
        assert rows[0] == ["subject", "acc_a", "acc_b"]
        assert rows[1] == ["anatomy", "0.25", "0.75"]
        assert rows[2] == ["virology", "0.0", "0.5"]

    def test_full_precision(self, tmp_path):
        report = aggregate({"anatomy": SubjectTally(1, 3)})
        path = tmp_path / "subjects.csv"
        export_subject_csv(report, path)
        value = path.read_text().splitlines()[1].split(",")[3]
        assert float(value) == 1 / 3


class TestFigure:
    def test_single_report_rendered(self, tmp_path):
        report = aggregate({"anatomy": SubjectTally(1, 4),
                            "virology": SubjectTally(3, 4)})
        path = tmp_path / "subjects.png"
        render_subject_figure(report, path)
        assert path.exists() and path.stat().st_size > 0

    def test_comparison_rendered(self, tmp_path):
        a = aggregate({"anatomy": SubjectTally(1, 4)})
        b = aggregate({"anatomy": SubjectTally(2, 4)})
        path = tmp_path / "cmp.png"
        render_subject_figure(a, path, other=b, label_a="base", label_b="tuned")
        assert path.exists() and path.stat().st_size > 0
