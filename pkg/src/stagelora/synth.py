"""Seeded synthetic emotion data and the line-delimited manifest format.

Each basic emotion gets a unit-norm prototype vector; basic examples are
prototype plus Gaussian noise and each compound example is the midpoint of
its two parents' prototypes plus noise.

Manifest layout: the first line is a JSON header
``{"format":"stagelora-manifest","version":1,"dimension":d,"labels":[...]}``
and every following line is one record
``{"id":...,"label":...,"split":...,"features":[...]}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .categories import BASIC_LABELS, COMPOUND_PARENTS
from .errors import ManifestParseError, ManifestValidationError, SpecError
from .fileio import atomic_write_text
from .seeding import fisher_yates, rng_for

MANIFEST_FORMAT = "stagelora-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    features: tuple[float, ...]
    label: str
    split: str

    def vector(self) -> np.ndarray:
        return np.asarray(self.features, dtype=np.float64)


@dataclass
class Manifest:
    dimension: int
    labels: tuple[str, ...]
    records: list[ExampleRecord] = field(default_factory=list)

    def split(self, name: str) -> list[ExampleRecord]:
        return [r for r in self.records if r.split == name]


@dataclass(frozen=True)
class SynthSpec:
    d_in: int = 16
    basic_labels: tuple[str, ...] = BASIC_LABELS
    compound_parents: Mapping[str, tuple[str, str]] = field(
        default_factory=lambda: dict(COMPOUND_PARENTS)
    )
    noise_sigma: float = 0.05
    examples_per_class: int = 100
    seed: int = 0

    @property
    def compound_labels(self) -> tuple[str, ...]:
        return tuple(self.compound_parents)

    def validate(self) -> None:
        if self.examples_per_class < 1:
            raise SpecError("examples_per_class must be >= 1")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if self.d_in < 1:
            raise SpecError("d_in must be >= 1")
        for name, parents in self.compound_parents.items():
            if len(parents) != 2:
                raise SpecError(f"compound {name!r} needs exactly two parents")
            for p in parents:
                if p not in self.basic_labels:
                    raise SpecError(f"compound {name!r} has parent {p!r} outside the basic set")


def prototypes(spec: SynthSpec) -> dict[str, np.ndarray]:
    rng = rng_for(spec.seed, "prototypes")
    raw = rng.normal(size=(len(spec.basic_labels), spec.d_in))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return {label: raw[i] for i, label in enumerate(spec.basic_labels)}


def _split_names(n: int, rng: np.random.Generator) -> list[str]:
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_val = round(SPLIT_FRACTIONS[1] * n)
    names = [""] * n
    for rank, idx in enumerate(fisher_yates(n, rng)):
        names[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return names


def _slug(label: str) -> str:
    return label.lower().replace(" ", "_")


def _make_manifest(
    spec: SynthSpec, kind: str, centers: Mapping[str, np.ndarray]
) -> Manifest:
    records = []
    for label, center in centers.items():
        rng = rng_for(spec.seed, kind, label)
        n = spec.examples_per_class
        noise = rng.normal(0.0, 1.0, size=(n, spec.d_in)) * spec.noise_sigma
        splits = _split_names(n, rng)
        for i in range(n):
            vec = center + noise[i]
            records.append(
                ExampleRecord(f"{kind}-{_slug(label)}-{i:04d}", tuple(float(v) for v in vec), label, splits[i])
            )
    return Manifest(spec.d_in, tuple(centers), records)


def generate(spec: SynthSpec) -> tuple[Manifest, Manifest]:
    """Return ``(basic, compound)`` manifests; a pure function of ``spec``."""
    spec.validate()
    protos = prototypes(spec)
    blends = {
        name: 0.5 * protos[a] + 0.5 * protos[b] for name, (a, b) in spec.compound_parents.items()
    }
    return _make_manifest(spec, "basic", protos), _make_manifest(spec, "compound", blends)


def dumps_manifest(manifest: Manifest) -> str:
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dimension": manifest.dimension,
        "labels": list(manifest.labels),
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    for r in manifest.records:
        rec = {"id": r.id, "label": r.label, "split": r.split, "features": list(r.features)}
        lines.append(json.dumps(rec, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_manifest(manifest))


def _parse_header(line: str) -> tuple[int, tuple[str, ...]]:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"header is not valid JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
        raise ManifestParseError("missing manifest header", 1)
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestParseError(f"unsupported manifest version {header.get('version')!r}", 1)
    dim, labels = header.get("dimension"), header.get("labels")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ManifestParseError("header dimension must be a positive integer", 1)
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ManifestParseError("header labels must be a list of strings", 1)
    if len(set(labels)) != len(labels):
        raise ManifestParseError("header labels contain duplicates", 1)
    return dim, tuple(labels)


def _parse_record(line: str, lineno: int) -> ExampleRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise ManifestParseError("record is not an object", lineno)
    missing = [k for k in ("id", "label", "split", "features") if k not in obj]
    if missing:
        raise ManifestParseError(f"record missing {', '.join(missing)}", lineno)
    rid, label, split, feats = obj["id"], obj["label"], obj["split"], obj["features"]
    if not isinstance(rid, str) or not isinstance(label, str) or not isinstance(split, str):
        raise ManifestParseError("id, label and split must be strings", lineno)
    if not isinstance(feats, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats
    ):
        raise ManifestParseError("features must be a list of numbers", lineno)
    return ExampleRecord(rid, tuple(float(v) for v in feats), label, split)


def loads_manifest(text: str) -> Manifest:
    lines = text.splitlines()
    if not lines:
        raise ManifestParseError("empty file", 1)
    dim, labels = _parse_header(lines[0])
    records = []
    label_set = set(labels)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_record(line, lineno)
        if len(rec.features) != dim:
            raise ManifestValidationError(f"has {len(rec.features)} features, header declares {dim}", rec.id)
        if rec.label not in label_set:
            raise ManifestValidationError(f"label {rec.label!r} not in declared label set", rec.id)
        if rec.split not in SPLITS:
            raise ManifestValidationError(f"unknown split {rec.split!r}", rec.id)
        if not all(np.isfinite(rec.features)):
            raise ManifestValidationError("non-finite feature value", rec.id)
        records.append(rec)
    return Manifest(dim, labels, records)


def read_manifest(path: str | os.PathLike) -> Manifest:
    return loads_manifest(Path(path).read_text(encoding="utf-8"))


def nearest_prototype_accuracy(
    records: Iterable[ExampleRecord], centers: Mapping[str, np.ndarray]
) -> float:
    """Fraction of records whose nearest center (Euclidean) is their own label."""
    names = list(centers)
    mat = np.stack([centers[n] for n in names])
    hits = total = 0
    for r in records:
        d = np.linalg.norm(mat - r.vector(), axis=1)
        hits += names[int(np.argmin(d))] == r.label
        total += 1
    return hits / total if total else 0.0


def as_arrays(records: Sequence[ExampleRecord], labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    index = {label: i for i, label in enumerate(labels)}
    X = np.array([r.features for r in records], dtype=np.float64).reshape(len(records), -1)
    y = np.array([index[r.label] for r in records], dtype=np.int64)
    return X, y
