"""Form-correctness checking and correct-rate reporting.

A generated poem is correct in form only when its line count, every per-line
character count, and the stanza-break position all match the expected form
spec. Rates aggregate per form; unterminated or unparseable generations
count as incorrect.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusError, Sample
from .forms import FormRegistry, FormSpec, SlotKind, expected_token_skeleton

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    """Unusable generation records or mismatched reports."""


@dataclass(frozen=True)
class SlotDiff:
    """First point where the observed body deviates from the expected pattern."""

    index: int
    expected: SlotKind | None
    observed: SlotKind | None


@dataclass
class FormCheckResult:
    expected: FormSpec
    observed_line_lengths: tuple[int, ...] | None
    observed_stanza_break: int | None
    verdict: bool
    diff: SlotDiff | None
    note: str | None = None


def _observed_skeleton(sample: Sample) -> list[SlotKind]:
    slots: list[SlotKind] = []
    for index, line in enumerate(sample.body_lines, start=1):
        slots.extend([SlotKind.CHARACTER] * len(line))
        if index == len(sample.body_lines):
            break
        if sample.stanza_break is not None and index == sample.stanza_break:
            slots.append(SlotKind.STANZA_SEP)
        else:
            slots.append(SlotKind.LINE_SEP)
    return slots


def _first_mismatch(expected: list[SlotKind], observed: list[SlotKind]) -> SlotDiff | None:
    for i, (e, o) in enumerate(zip(expected, observed)):
        if e is not o:
            return SlotDiff(i, e, o)
    if len(expected) != len(observed):
        i = min(len(expected), len(observed))
        return SlotDiff(
            i,
            expected[i] if i < len(expected) else None,
            observed[i] if i < len(observed) else None,
        )
    return None


def check_form(
    sample: Sample | None, spec: FormSpec, parse_error: str | None = None
) -> FormCheckResult:
    """Verdict on whether a poem's structure fully matches the form spec.

    A None sample (parse failure) is automatically incorrect.
    """
    if sample is None:
        return FormCheckResult(
            expected=spec,
            observed_line_lengths=None,
            observed_stanza_break=None,
            verdict=False,
            diff=SlotDiff(0, SlotKind.CHARACTER, None),
            note=parse_error or "unparseable sample",
        )
    observed_lengths = tuple(len(line) for line in sample.body_lines)
    verdict = (
        observed_lengths == spec.line_lengths
        and sample.stanza_break == spec.stanza_break
    )
    diff = None
    if not verdict:
        diff = _first_mismatch(expected_token_skeleton(spec), _observed_skeleton(sample))
    return FormCheckResult(
        expected=spec,
        observed_line_lengths=observed_lengths,
        observed_stanza_break=sample.stanza_break,
        verdict=verdict,
        diff=diff,
    )


@dataclass
class GenerationRecord:
    """The part of a generation the evaluator needs."""

    form_name: str
    sample: Sample | None
    terminated: bool
    parse_error: str | None = None


def record_from_json(data: dict) -> GenerationRecord:
    for key in ("form", "terminated", "parse_ok"):
        if key not in data:
            raise EvaluationError(f"generation record missing field {key!r}")
    sample = None
    error = None
    if data["parse_ok"]:
        try:
            sample = Sample(
                form_name=data["form"],
                title=data.get("title", ""),
                body_lines=tuple(data["body"]),
                stanza_break=data.get("stanza_break"),
            )
        except (CorpusError, TypeError) as exc:
            raise EvaluationError(f"invalid generation record: {exc}") from None
    else:
        error = "generation did not parse"
    return GenerationRecord(data["form"], sample, bool(data["terminated"]), error)


def load_generation_records(path: str | Path) -> list[GenerationRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (json.JSONDecodeError, EvaluationError) as exc:
                raise EvaluationError(f"line {lineno}: {exc}") from None
    return records


@dataclass
class FormRate:
    form: str
    body_length: int
    generated: int
    correct: int

    @property
    def rate(self) -> float:
        return self.correct / self.generated


@dataclass
class CorrectRateReport:
    mode: str
    rows: list[FormRate]

    def rate_of(self, form: str) -> float:
        for row in self.rows:
            if row.form == form:
                return row.rate
        raise EvaluationError(f"form {form!r} not in report")

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["form", "length_of_body", "n_generated", "n_correct", "rate"])
            for row in self.rows:
                writer.writerow(
                    [row.form, row.body_length, row.generated, row.correct, f"{row.rate:.6f}"]
                )

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "forms": [
                {
                    "form": r.form,
                    "length_of_body": r.body_length,
                    "n_generated": r.generated,
                    "n_correct": r.correct,
                    "rate": r.rate,
                }
                for r in self.rows
            ],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), ensure_ascii=False, indent=2),
            encoding="utf-8",
        )

    @classmethod
    def from_json_dict(cls, data: dict) -> "CorrectRateReport":
        rows = [
            FormRate(r["form"], r["length_of_body"], r["n_generated"], r["n_correct"])
            for r in data["forms"]
        ]
        return cls(data.get("mode", ""), rows)


def correct_rate(
    records: Iterable,
    registry: FormRegistry,
    mode: str = "",
    expected_forms: Sequence[str] | None = None,
) -> CorrectRateReport:
    """Per-form correct-in-form rates over generation records.

    Records need form_name, sample (None when unparseable), and terminated
    attributes; order does not matter. Expected forms with zero generations
    are omitted with a warning.
    """
    generated: dict[str, int] = {}
    correct: dict[str, int] = {}
    for record in records:
        spec = registry.lookup(record.form_name)
        generated[record.form_name] = generated.get(record.form_name, 0) + 1
        ok = (
            record.terminated
            and record.sample is not None
            and check_form(record.sample, spec).verdict
        )
        if ok:
            correct[record.form_name] = correct.get(record.form_name, 0) + 1
    if expected_forms is not None:
        for form in expected_forms:
            if form not in generated:
                logger.warning("form %r has no generations; omitted from report", form)
    rows = [
        FormRate(form, registry.lookup(form).body_length, n, correct.get(form, 0))
        for form, n in sorted(generated.items())
    ]
    return CorrectRateReport(mode, rows)


@dataclass
class RateDelta:
    form: str
    rate_a: float
    rate_b: float

    @property
    def delta_points(self) -> float:
        """Rate change in percentage points, report B minus report A."""
        return (self.rate_b - self.rate_a) * 100.0


@dataclass
class ComparisonReport:
    deltas: list[RateDelta]

    def sign_summary(self) -> dict[str, int]:
        summary = {"positive": 0, "zero": 0, "negative": 0}
        for d in self.deltas:
            if d.delta_points > 0:
                summary["positive"] += 1
            elif d.delta_points < 0:
                summary["negative"] += 1
            else:
                summary["zero"] += 1
        return summary

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["form", "rate_a", "rate_b", "delta_points"])
            for d in self.deltas:
                writer.writerow(
                    [d.form, f"{d.rate_a:.6f}", f"{d.rate_b:.6f}", f"{d.delta_points:.2f}"]
                )


def ab_compare(
    report_a: CorrectRateReport, report_b: CorrectRateReport
) -> ComparisonReport:
    """Per-form rate deltas between two reports, over their shared forms."""
    rates_a = {r.form: r.rate for r in report_a.rows}
    deltas = [
        RateDelta(r.form, rates_a[r.form], r.rate)
        for r in report_b.rows
        if r.form in rates_a
    ]
    if not deltas:
        raise EvaluationError("reports share no forms to compare")
    return ComparisonReport(deltas)
