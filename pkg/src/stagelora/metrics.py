"""Per-class and overall accuracy, confusion counts and accuracy tables."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import CompatibilityError, ContractError, DataError
from .parsing import Category, NoPerson, ParseFailure, Prediction

NO_PERSON_COL = "NoPerson"
PARSE_FAILURE_COL = "ParseFailure"


@dataclass(frozen=True)
class EvalPair:
    id: str
    gold: str
    predicted: Prediction
    lenient: bool = False


def prediction_column(pred: Prediction) -> str:
    if isinstance(pred, Category):
        return pred.name
    if isinstance(pred, NoPerson):
        return NO_PERSON_COL
    if isinstance(pred, ParseFailure):
        return PARSE_FAILURE_COL
    raise TypeError(f"not a prediction: {pred!r}")


@dataclass
class ClassStats:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)


@dataclass
class EvalReport:
    labels: tuple[str, ...]
    per_class: dict[str, ClassStats]
    confusion: dict[str, Counter]
    lenient_count: int = 0
    lenient_by_class: dict[str, int] = field(default_factory=dict)

    @property
    def columns(self) -> tuple[str, ...]:
        return self.labels + (NO_PERSON_COL, PARSE_FAILURE_COL)

    @property
    def correct(self) -> int:
        return sum(s.correct for s in self.per_class.values())

    @property
    def total(self) -> int:
        return sum(s.total for s in self.per_class.values())

    @property
    def overall_accuracy(self) -> Fraction:
        """Micro accuracy: total correct over total pairs."""
        return Fraction(self.correct, self.total) if self.total else Fraction(0)

    @property
    def macro_accuracy(self) -> Fraction:
        present = [s.accuracy for s in self.per_class.values() if s.total]
        return sum(present, Fraction(0)) / len(present) if present else Fraction(0)

    def column_total(self, col: str) -> int:
        return sum(row[col] for row in self.confusion.values())


def evaluate(pairs: Sequence[EvalPair], labels: Sequence[str]) -> EvalReport:
    labels = tuple(labels)
    if not pairs:
        raise ContractError("cannot evaluate an empty list of pairs")
    if len(set(labels)) != len(labels):
        raise ContractError("evaluation labels contain duplicates")
    label_set = set(labels)
    per_class = {label: ClassStats() for label in labels}
    confusion = {label: Counter() for label in labels}
    lenient_by_class = {label: 0 for label in labels}
    for p in pairs:
        if p.gold not in label_set:
            raise DataError(f"pair {p.id!r}: gold label {p.gold!r} not in the evaluation label set")
        col = prediction_column(p.predicted)
        if isinstance(p.predicted, Category) and col not in label_set:
            raise DataError(f"pair {p.id!r}: predicted category {col!r} not in the evaluation label set")
        stats = per_class[p.gold]
        stats.total += 1
        stats.correct += col == p.gold
        confusion[p.gold][col] += 1
        lenient_by_class[p.gold] += bool(p.lenient)
    return EvalReport(labels, per_class, confusion, sum(lenient_by_class.values()), lenient_by_class)


def percent(acc: Fraction | float) -> str:
    return f"{float(acc) * 100:.2f}"


def _rows(report: EvalReport) -> list[tuple[str, ClassStats]]:
    rows = [(label, report.per_class[label]) for label in report.labels]
    rows.append(("Overall", ClassStats(report.correct, report.total)))
    return rows


def render_text(report: EvalReport) -> str:
    rows = _rows(report)
    width = max(len("Emotion"), *(len(name) for name, _ in rows))
    lines = [f"{'Emotion':<{width}}  {'Accuracy (%)':>12}  {'Correct':>7}  {'Total':>7}"]
    lines.append("-" * len(lines[0]))
    for name, s in rows:
        if name == "Overall":
            lines.append("-" * len(lines[0]))
        lines.append(f"{name:<{width}}  {percent(s.accuracy):>12}  {s.correct:>7}  {s.total:>7}")
    extras = [
        f"{NO_PERSON_COL}={report.column_total(NO_PERSON_COL)}",
        f"{PARSE_FAILURE_COL}={report.column_total(PARSE_FAILURE_COL)}",
        f"lenient={report.lenient_count}",
    ]
    lines.append(" ".join(extras))
    return "\n".join(lines) + "\n"


def render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    cols = report.columns
    writer.writerow(["emotion", "accuracy_pct", "correct", "total", "lenient", *(f"pred:{c}" for c in cols)])
    for label in report.labels:
        s = report.per_class[label]
        row = report.confusion[label]
        writer.writerow(
            [label, percent(s.accuracy), s.correct, s.total, report.lenient_by_class.get(label, 0), *(row[c] for c in cols)]
        )
    writer.writerow(
        [
            "Overall",
            percent(report.overall_accuracy),
            report.correct,
            report.total,
            report.lenient_count,
            *(report.column_total(c) for c in cols),
        ]
    )
    return buf.getvalue()


def render_table(report: EvalReport, format: str = "text") -> str:
    if format == "text":
        return render_text(report)
    if format == "csv":
        return render_csv(report)
    raise ContractError(f"unknown table format {format!r}")


def parse_csv_report(text: str) -> EvalReport:
    """Rebuild the counts of a report from :func:`render_csv` output."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:5] != ["emotion", "accuracy_pct", "correct", "total", "lenient"]:
        raise DataError("not a report CSV (bad header)")
    cols = [h[len("pred:") :] for h in rows[0][5:]]
    labels = []
    per_class, confusion, lenient = {}, {}, {}
    overall = None
    for row in rows[1:]:
        if not row:
            continue
        try:
            name, correct, total, n_len = row[0], int(row[2]), int(row[3]), int(row[4])
            counts = [int(v) for v in row[5:]]
        except (ValueError, IndexError) as exc:
            raise DataError(f"bad report row {row!r}: {exc}") from None
        if name == "Overall":
            overall = (correct, total)
            continue
        labels.append(name)
        per_class[name] = ClassStats(correct, total)
        confusion[name] = Counter({c: n for c, n in zip(cols, counts) if n})
        lenient[name] = n_len
    report = EvalReport(tuple(labels), per_class, confusion, sum(lenient.values()), lenient)
    if overall is not None and overall != (report.correct, report.total):
        raise DataError(f"Overall row {overall} disagrees with per-class sums ({report.correct}, {report.total})")
    return report


def check_compatible(net_labels: Iterable[str], net_dim: int, manifest_labels: Iterable[str], manifest_dim: int) -> None:
    if net_dim != manifest_dim:
        raise CompatibilityError(f"checkpoint expects {net_dim} features, manifest declares {manifest_dim}")
    a, b = set(net_labels), set(manifest_labels)
    if a != b:
        missing, extra = sorted(b - a), sorted(a - b)
        raise CompatibilityError(f"label sets differ: manifest-only {missing}, checkpoint-only {extra}")
