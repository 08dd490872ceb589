"""Record schema, JSONL persistence, and seeded splitting for calibration data.

A calibration record couples a model answer's embedding with the model's
confidence in that answer and a correctness target. Targets are either real
ground-truth grades (binary) or proxy scores in [0, 1] produced by a scorer.
Datasets are stored column-oriented (one numpy array per field) so that
downstream fitting code can operate on arrays directly; `records` provides a
row view for I/O and inspection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

LABEL_GROUND_TRUTH = "ground_truth"
LABEL_PROXY = "proxy"
_LABEL_KINDS = (LABEL_GROUND_TRUTH, LABEL_PROXY)

_REQUIRED_FIELDS = ("id", "embedding", "confidence", "label")


class DatasetError(ValueError):
    """Raised when records violate the schema or a file cannot be parsed."""


@dataclass(frozen=True)
class CalibrationRecord:
    """One scored question/answer pair."""

    id: str
    embedding: tuple[float, ...]
    confidence: float
    label: float
    label_kind: str = LABEL_GROUND_TRUTH
    question: str | None = None
    answer: str | None = None

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError(f"record id must be a non-empty string, got {self.id!r}")
        if len(self.embedding) == 0:
            raise DatasetError(f"record {self.id!r}: embedding must be non-empty")
        if not all(np.isfinite(self.embedding)):
            raise DatasetError(f"record {self.id!r}: embedding has non-finite entries")
        if not (np.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise DatasetError(
                f"record {self.id!r}: confidence {self.confidence!r} outside [0, 1]"
            )
        if not (np.isfinite(self.label) and 0.0 <= self.label <= 1.0):
            raise DatasetError(f"record {self.id!r}: label {self.label!r} outside [0, 1]")
        if self.label_kind not in _LABEL_KINDS:
            raise DatasetError(
                f"record {self.id!r}: label_kind {self.label_kind!r} not in {_LABEL_KINDS}"
            )
        if self.label_kind == LABEL_GROUND_TRUTH and self.label not in (0.0, 1.0):
            raise DatasetError(
                f"record {self.id!r}: ground-truth label must be 0 or 1, got {self.label!r}"
            )

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "embedding": list(self.embedding),
            "confidence": self.confidence,
            "label": self.label,
            "label_kind": self.label_kind,
        }
        if self.question is not None:
            out["question"] = self.question
        if self.answer is not None:
            out["answer"] = self.answer
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "CalibrationRecord":
        if not isinstance(obj, dict):
            raise DatasetError(f"record must be a JSON object, got {type(obj).__name__}")
        missing = [k for k in _REQUIRED_FIELDS if k not in obj]
        if missing:
            raise DatasetError(f"record missing required fields: {missing}")
        emb = obj["embedding"]
        if not isinstance(emb, (list, tuple)):
            raise DatasetError(f"record {obj.get('id')!r}: embedding must be a list")
        rec = cls(
            id=obj["id"],
            embedding=tuple(float(x) for x in emb),
            confidence=float(obj["confidence"]),
            label=float(obj["label"]),
            label_kind=obj.get("label_kind", LABEL_GROUND_TRUTH),
            question=obj.get("question"),
            answer=obj.get("answer"),
        )
        rec.validate()
        return rec


class Dataset:
    """Column-oriented collection of calibration records with a fixed dim."""

    def __init__(
        self,
        ids: Sequence[str],
        embeddings: np.ndarray,
        confidences: np.ndarray,
        labels: np.ndarray,
        label_kinds: Sequence[str],
        questions: Sequence[str | None] | None = None,
        answers: Sequence[str | None] | None = None,
        metadata: dict | None = None,
    ):
        n = len(ids)
        self.ids = list(ids)
        self.embeddings = np.asarray(embeddings, dtype=float)
        self.confidences = np.asarray(confidences, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        self.label_kinds = list(label_kinds)
        self.questions = list(questions) if questions is not None else [None] * n
        self.answers = list(answers) if answers is not None else [None] * n
        self.metadata = dict(metadata) if metadata else {}
        self._validate_columns()

    def _validate_columns(self) -> None:
        n = len(self.ids)
        if n == 0:
            raise DatasetError("dataset must contain at least one record")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != n:
            raise DatasetError(
                f"embeddings must have shape ({n}, dim), got {self.embeddings.shape}"
            )
        if self.embeddings.shape[1] == 0:
            raise DatasetError("embeddings must be non-empty")
        for name, col in (("confidences", self.confidences), ("labels", self.labels)):
            if col.shape != (n,):
                raise DatasetError(f"{name} must have shape ({n},), got {col.shape}")
        if len(set(self.ids)) != n:
            raise DatasetError("record ids must be unique")
        if len(self.label_kinds) != n or len(self.questions) != n or len(self.answers) != n:
            raise DatasetError("all columns must have equal length")
        if not np.all(np.isfinite(self.embeddings)):
            raise DatasetError("embeddings must be finite")
        for name, col in (("confidences", self.confidences), ("labels", self.labels)):
            if not np.all(np.isfinite(col)) or np.any(col < 0.0) or np.any(col > 1.0):
                raise DatasetError(f"{name} must be finite and in [0, 1]")
        kinds = np.asarray(self.label_kinds, dtype=object)
        bad = ~np.isin(kinds, _LABEL_KINDS)
        if np.any(bad):
            raise DatasetError(f"unknown label_kind {kinds[bad][0]!r}")
        gt = kinds == LABEL_GROUND_TRUTH
        gt_labels = self.labels[gt]
        if not np.all((gt_labels == 0.0) | (gt_labels == 1.0)):
            raise DatasetError("ground-truth labels must be 0 or 1")

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def record(self, i: int) -> CalibrationRecord:
        return CalibrationRecord(
            id=self.ids[i],
            embedding=tuple(float(x) for x in self.embeddings[i]),
            confidence=float(self.confidences[i]),
            label=float(self.labels[i]),
            label_kind=self.label_kinds[i],
            question=self.questions[i],
            answer=self.answers[i],
        )

    @property
    def records(self) -> Iterator[CalibrationRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            ids=[self.ids[i] for i in idx],
            embeddings=self.embeddings[idx],
            confidences=self.confidences[idx],
            labels=self.labels[idx],
            label_kinds=[self.label_kinds[i] for i in idx],
            questions=[self.questions[i] for i in idx],
            answers=[self.answers[i] for i in idx],
            metadata=self.metadata,
        )

    @classmethod
    def from_records(
        cls, records: Sequence[CalibrationRecord], metadata: dict | None = None
    ) -> "Dataset":
        if len(records) == 0:
            raise DatasetError("dataset must contain at least one record")
        dims = {len(r.embedding) for r in records}
        if len(dims) != 1:
            raise DatasetError(f"inconsistent embedding dimensions: {sorted(dims)}")
        return cls(
            ids=[r.id for r in records],
            embeddings=np.array([r.embedding for r in records], dtype=float),
            confidences=np.array([r.confidence for r in records], dtype=float),
            labels=np.array([r.label for r in records], dtype=float),
            label_kinds=[r.label_kind for r in records],
            questions=[r.question for r in records],
            answers=[r.answer for r in records],
            metadata=metadata,
        )


def load_dataset(path: str, expect_dim: int | None = None) -> Dataset:
    """Parse a JSONL file of records; errors carry the offending line number."""
    records: list[CalibrationRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            try:
                records.append(CalibrationRecord.from_dict(obj))
            except DatasetError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from e
    if not records:
        raise DatasetError(f"{path}: file contains no records")
    ds = Dataset.from_records(records)
    if expect_dim is not None and ds.embedding_dim != expect_dim:
        raise DatasetError(
            f"{path}: embedding dim {ds.embedding_dim} != expected {expect_dim}"
        )
    return ds


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write records as JSONL. Floats round-trip bit-exactly via repr."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in dataset.records:
            f.write(json.dumps(rec.to_dict()) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    """Four-way split fractions plus the shuffle seed.

    Fractions apply in order (partition-map build, calibration, tuning, test);
    sizes are floor(n * cumulative fraction) differences so they always sum
    to n and every part is deterministic in (n, seed).
    """

    fractions: tuple[float, float, float, float] = (0.2, 0.6, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 4 or any(f <= 0 for f in fr):
            raise DatasetError(f"fractions must be four positive numbers, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DatasetError(f"fractions must sum to 1, got {sum(fr)}")
        object.__setattr__(self, "fractions", fr)

    def sizes(self, n: int) -> tuple[int, int, int, int]:
        cum = np.floor(np.cumsum(self.fractions) * n + 1e-9).astype(int)
        cum[-1] = n
        sizes = np.diff(np.concatenate([[0], cum]))
        return tuple(int(s) for s in sizes)


def split_dataset(
    dataset: Dataset, spec: SplitSpec
) -> tuple[Dataset, Dataset, Dataset, Dataset]:
    """Seeded uniform shuffle followed by contiguous slicing into four parts."""
    n = len(dataset)
    sizes = spec.sizes(n)
    if any(s == 0 for s in sizes):
        raise DatasetError(f"dataset of size {n} yields an empty part: sizes {sizes}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    parts = []
    start = 0
    for s in sizes:
        parts.append(dataset.subset(perm[start : start + s]))
        start += s
    return tuple(parts)


SPLIT_SUFFIXES = (".tree.jsonl", ".cal.jsonl", ".tune.jsonl", ".test.jsonl")


def save_splits(parts: tuple[Dataset, Dataset, Dataset, Dataset], stem: str) -> list[str]:
    paths = []
    for part, suffix in zip(parts, SPLIT_SUFFIXES):
        path = stem + suffix
        save_dataset(part, path)
        paths.append(path)
    return paths
