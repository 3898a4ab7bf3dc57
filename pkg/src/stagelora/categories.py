"""Emotion category registry shared by the data generator, prompts and parser."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .errors import ContractError

BASIC_LABELS: tuple[str, ...] = (
    "Sadness",
    "Surprise",
    "Happiness",
    "Disgust",
    "Anger",
    "Fear",
    "Neutral",
)

# Compound category -> (parent, parent). Order follows the RAF-DB compound table.
COMPOUND_PARENTS: dict[str, tuple[str, str]] = {
    "Happily Surprised": ("Happiness", "Surprise"),
    "Sadly Disgusted": ("Sadness", "Disgust"),
    "Happily Disgusted": ("Happiness", "Disgust"),
    "Fearfully Angry": ("Fear", "Anger"),
    "Angrily Disgusted": ("Anger", "Disgust"),
    "Angrily Surprised": ("Anger", "Surprise"),
    "Sadly Surprised": ("Sadness", "Surprise"),
    "Fearfully Surprised": ("Fear", "Surprise"),
    "Disgustedly Surprised": ("Disgust", "Surprise"),
    "Sadly Fearful": ("Sadness", "Fear"),
    "Sadly Angry": ("Sadness", "Anger"),
}

RAFDB_COMPOUND_LABELS: tuple[str, ...] = tuple(COMPOUND_PARENTS)

CHALLENGE_LABELS: tuple[str, ...] = (
    "Fearfully Surprised",
    "Happily Surprised",
    "Sadly Surprised",
    "Disgustedly Surprised",
    "Angrily Surprised",
    "Sadly Fearful",
    "Sadly Angry",
)

LABEL_SETS: dict[str, tuple[str, ...]] = {
    "basic": BASIC_LABELS,
    "compound": RAFDB_COMPOUND_LABELS,
    "challenge": CHALLENGE_LABELS,
}

_WS = re.compile(r"\s+")


def normalize(name: str) -> str:
    """Trim, collapse internal whitespace and casefold."""
    return _WS.sub(" ", name.strip()).casefold()


def resolve(name: str, categories: Iterable[str]) -> str | None:
    """Return the canonical member of ``categories`` matching ``name``, if any."""
    key = normalize(name)
    for c in categories:
        if normalize(c) == key:
            return c
    return None


def check_unique(labels: Sequence[str]) -> None:
    if not labels:
        raise ContractError("label list is empty")
    seen: set[str] = set()
    for label in labels:
        key = normalize(label)
        if key in seen:
            raise ContractError(f"duplicate label {label!r}")
        seen.add(key)


def label_set(spec: str) -> tuple[str, ...]:
    """Resolve a CLI label-set argument: a named set or a comma-separated list."""
    if spec in LABEL_SETS:
        return LABEL_SETS[spec]
    labels = tuple(part.strip() for part in spec.split(",") if part.strip())
    check_unique(labels)
    return labels
