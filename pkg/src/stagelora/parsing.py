"""Parse model transcripts of the form ``Analysis: ... Conclusion: ...``.

:func:`parse` accepts only the exact output template. :func:`parse_lenient`
falls back to scanning for a category mention when the template is broken
and marks the result as lenient.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .categories import normalize, resolve
from .errors import ContractError, DataError

ANALYSIS_MARKER = "Analysis:"
CONCLUSION_MARKER = "Conclusion:"

_NO_PERSON_RE = re.compile(r"There is no one in the image\.?")
_PERSON_RE = re.compile(r"The facial expression of the person in the image is '([^'\n]*)'\.?")
_NO_PERSON_SCAN_RE = re.compile(r"there\s+is\s+no\s+one\s+in\s+the\s+image", re.IGNORECASE)


@dataclass(frozen=True)
class Category:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class NoPerson:
    def __str__(self) -> str:
        return "NoPerson"


@dataclass(frozen=True)
class ParseFailure:
    reason: str = ""

    def __str__(self) -> str:
        return "ParseFailure"


Verdict = Union[Category, NoPerson]
Prediction = Union[Category, NoPerson, ParseFailure]


@dataclass(frozen=True)
class ParsedResponse:
    analysis: str
    verdict: Verdict
    lenient: bool = False
    raw_analysis: str = ""

    def to_record(self) -> dict:
        kind = "no_person" if isinstance(self.verdict, NoPerson) else "category"
        rec = {"verdict": kind, "lenient": self.lenient, "analysis": self.analysis}
        if isinstance(self.verdict, Category):
            rec["category"] = self.verdict.name
        return rec


class ParseError(DataError):
    """Base for transcript parse failures; ``fragment`` is the offending text."""

    def __init__(self, message: str, fragment: str):
        super().__init__(f"{message}: {fragment!r}")
        self.fragment = fragment


class MissingAnalysis(ParseError):
    pass


class MissingConclusion(ParseError):
    pass


class MalformedConclusion(ParseError):
    pass


class UnknownCategory(ParseError):
    def __init__(self, name: str):
        super().__init__("unknown category", name)
        self.name = name


class NoMatch(ParseError):
    pass


def _check_categories(active_categories: Iterable[str]) -> tuple[str, ...]:
    cats = tuple(active_categories)
    if not cats:
        raise ContractError("active category set is empty")
    return cats


def parse(transcript: str, active_categories: Sequence[str]) -> ParsedResponse:
    cats = _check_categories(active_categories)
    body = transcript.lstrip()
    if not body.startswith(ANALYSIS_MARKER):
        raise MissingAnalysis("transcript does not start with 'Analysis:'", transcript[:80])
    start = len(transcript) - len(body) + len(ANALYSIS_MARKER)
    cut = transcript.rfind(CONCLUSION_MARKER)
    if cut < start:
        raise MissingConclusion("no 'Conclusion:' after the analysis", transcript[start:][:80])
    raw_analysis = transcript[start:cut]
    conclusion = transcript[cut + len(CONCLUSION_MARKER) :].strip()

    if _NO_PERSON_RE.fullmatch(conclusion):
        return ParsedResponse(raw_analysis.strip(), NoPerson(), False, raw_analysis)
    m = _PERSON_RE.fullmatch(conclusion)
    if m is None:
        raise MalformedConclusion("conclusion does not follow either template", conclusion)
    name = resolve(m.group(1), cats)
    if name is None:
        raise UnknownCategory(m.group(1))
    return ParsedResponse(raw_analysis.strip(), Category(name), False, raw_analysis)


def _scan_categories(text: str, cats: Sequence[str]) -> str | None:
    """Category with the last mention in ``text``; longest name wins at equal start."""
    haystack = normalize(text)
    best: tuple[int, int, str] | None = None
    for c in cats:
        pattern = r"(?<!\w)" + re.escape(normalize(c)) + r"(?!\w)"
        for m in re.finditer(pattern, haystack):
            key = (m.start(), m.end() - m.start(), c)
            if best is None or key[:2] > best[:2]:
                best = key
    return best[2] if best else None


def parse_lenient(transcript: str, active_categories: Sequence[str]) -> ParsedResponse:
    cats = _check_categories(active_categories)
    try:
        return parse(transcript, cats)
    except ParseError:
        pass
    cut = transcript.rfind("Conclusion")
    region = transcript[cut:] if cut >= 0 else transcript
    analysis = transcript[:cut].strip() if cut >= 0 else ""
    if analysis.startswith(ANALYSIS_MARKER):
        analysis = analysis[len(ANALYSIS_MARKER) :].strip()
    name = _scan_categories(region, cats)
    if name is not None:
        return ParsedResponse(analysis, Category(name), True, analysis)
    if _NO_PERSON_SCAN_RE.search(transcript):
        return ParsedResponse(analysis, NoPerson(), True, analysis)
    raise NoMatch("no category or no-person sentence found", transcript[-80:])


def to_prediction(transcript: str, active_categories: Sequence[str], lenient: bool = False) -> tuple[Prediction, bool]:
    """Prediction for evaluation; parse errors become :class:`ParseFailure`."""
    try:
        parsed = (parse_lenient if lenient else parse)(transcript, active_categories)
    except ParseError as exc:
        return ParseFailure(type(exc).__name__), False
    return parsed.verdict, parsed.lenient
