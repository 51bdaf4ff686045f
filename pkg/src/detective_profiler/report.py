"""Render profiles and evaluation reports as Markdown, CSV, or JSON tables."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Sequence
from fractions import Fraction

from .errors import ValidationError
from .evaluation import UNPARSED, EvalReport
from .pipeline import CharacterProfile

FORMATS = ("markdown", "csv", "json")
EMPTY_PROFILE_ROW = "no consistent traits"


def _fixed(scaled: int, decimals: int) -> str:
    whole, frac = divmod(scaled, 10**decimals)
    return f"{whole}.{frac:0{decimals}d}" if decimals else str(whole)


def percent_half_up(value: Fraction, decimals: int) -> str:
    """``value`` as a percentage, rounded half-up; exact for any rational."""
    return _fixed(math.floor(Fraction(value) * 100 * 10**decimals + Fraction(1, 2)), decimals)


def percent_truncated(value: Fraction, decimals: int) -> str:
    """``value`` as a percentage with extra digits dropped (10/15 -> "66.6")."""
    return _fixed(math.floor(Fraction(value) * 100 * 10**decimals), decimals)


def trait_score(value: Fraction) -> str:
    return percent_truncated(value, 1)


def class_accuracy(correct: int, total: int) -> str:
    acc = Fraction(correct, total) if total else Fraction(0)
    return f"{percent_half_up(acc, 1)}% ({correct}/{total})"


def overall_accuracy(correct: int, total: int) -> str:
    acc = Fraction(correct, total) if total else Fraction(0)
    return f"{percent_half_up(acc, 2)}%"


def short_name(name: str) -> str:
    """Column header in the confusion matrix: "Hercule Poirot" -> "H. Poirot"."""
    words = name.split()
    return name if len(words) < 2 else f"{words[0][0]}. {words[-1]}"


def _md_cell(text: str) -> str:
    return text.replace("|", "\\|")


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(_md_cell(h) for h in header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(_md_cell(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def _csv(rows: Sequence[Sequence[object]]) -> str:
    out = io.StringIO()
    csv.writer(out).writerows(rows)
    return out.getvalue()


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ValidationError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def render_trait_table(profiles: Sequence[CharacterProfile], fmt: str = "markdown") -> str:
    _check_format(fmt)
    if fmt == "json":
        doc = {"profiles": [
            {
                "character": p.character,
                "traits": [
                    {"label": g.label, "score": trait_score(g.consensus_score),
                     "supporters": len(g.supporting_models), "total_models": p.total_models}
                    for g in p.groups
                ],
            }
            for p in profiles
        ]}
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"

    rows: list[list[str]] = []
    for p in profiles:
        if not p.groups:
            rows.append([p.character, EMPTY_PROFILE_ROW, ""])
        for i, g in enumerate(p.groups):
            name = p.character if fmt == "csv" or i == 0 else ""
            rows.append([name, g.label, trait_score(g.consensus_score)])
    if fmt == "csv":
        return _csv([["detective", "trait", "score_percent"], *rows])
    return _md_table(["Detective", "Trait Description", "Score (%)"], rows)


def _confusion_columns(report: EvalReport) -> list[str]:
    return report.columns if report.unparsed_total else list(report.roster)


def render_confusion_matrix(report: EvalReport, fmt: str = "markdown") -> str:
    """Actual rows by predicted columns; the UNPARSED column appears only when used."""
    _check_format(fmt)
    cols = _confusion_columns(report)
    rows = [[a, *(str(report.confusion[a][c]) for c in cols)] for a in report.roster]
    if fmt == "json":
        doc = {"columns": cols, "rows": [{"actual": a, "counts": [report.confusion[a][c] for c in cols]}
                                         for a in report.roster]}
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        return _csv([["actual\\predicted", *cols], *rows])
    header = ["Actual \\ Predicted", *(c if c == UNPARSED else short_name(c) for c in cols)]
    return _md_table(header, rows)


def render_eval_report(report: EvalReport, fmt: str = "markdown") -> str:
    _check_format(fmt)
    overall = report.overall
    if fmt == "json":
        doc = {
            "per_class": [
                {"character": c, "correct": s.correct, "total": s.total,
                 "accuracy_percent": percent_half_up(s.accuracy, 1)}
                for c, s in report.per_class.items()
            ],
            "overall": {"correct": overall.correct, "total": overall.total,
                        "accuracy_percent": percent_half_up(overall.accuracy, 2)},
            "confusion": json.loads(render_confusion_matrix(report, "json")),
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        rows = [["detective", "correct", "total", "accuracy_percent"]]
        rows += [[c, s.correct, s.total, percent_half_up(s.accuracy, 1)] for c, s in report.per_class.items()]
        rows.append(["Overall", overall.correct, overall.total, percent_half_up(overall.accuracy, 2)])
        return _csv(rows) + "\r\n" + render_confusion_matrix(report, "csv")

    accuracy = _md_table(
        ["Detective", "Accuracy (Correct / Total)"],
        [[c, class_accuracy(s.correct, s.total)] for c, s in report.per_class.items()],
    )
    summary = f"Overall accuracy: {overall_accuracy(overall.correct, overall.total)} ({overall.correct}/{overall.total})\n"
    return accuracy + "\n" + summary + "\n" + render_confusion_matrix(report, "markdown")
