"""Partition-conditional uniform-mass binning.

Fitting runs the binning algorithm twice over the calibration set: once on
all records pooled (the root calibrator, n_bins = floor(N / b)), and once
within each partition with enough data (n_bins = floor(n_s / b)); partitions
where that floor is zero are skipped. The same records inform both levels by
design. At prediction time a record is routed to its partition's calibrator;
records in skipped or out-of-bounds partitions fall back to the root. The
parameter b is the minimum number of fit records per bin and drives the
conditional-calibration guarantee.

A fitted table records the partitioner it was built against (content hash);
predicting with a different partitioner raises.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .partitioner import OUT_OF_BOUNDS
from .umd import DEFAULT_DELTA, UmdCalibrator, apply_umd, fit_umd

TABLE_FORMAT = "qacal.table.v1"


class PartitionerMismatchError(ValueError):
    """Raised when a table is applied with a partitioner it was not fit on."""


@dataclass(frozen=True)
class CalibratorTable:
    """Root calibrator plus per-partition calibrators keyed by leaf index."""

    root: UmdCalibrator
    per_partition: dict[int, UmdCalibrator]
    b_min: int
    partitioner_ref: str
    n_fit: dict[int, int] = field(default_factory=dict)

    def calibrator_for(self, partition: int) -> UmdCalibrator:
        return self.per_partition.get(int(partition), self.root)

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "b_min": self.b_min,
            "partitioner_ref": self.partitioner_ref,
            "root": {
                "edges": self.root.edges.tolist(),
                "means": self.root.bin_means.tolist(),
                "n_fit": self.root.n_fit,
            },
            "partitions": {
                str(s): {
                    "edges": cal.edges.tolist(),
                    "means": cal.bin_means.tolist(),
                    "n_s": self.n_fit.get(s, cal.n_fit),
                }
                for s, cal in sorted(self.per_partition.items())
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CalibratorTable":
        if obj.get("format") != TABLE_FORMAT:
            raise ValueError(f"expected format {TABLE_FORMAT!r}, got {obj.get('format')!r}")
        root = UmdCalibrator(
            edges=np.asarray(obj["root"]["edges"], dtype=float),
            bin_means=np.asarray(obj["root"]["means"], dtype=float),
            n_fit=int(obj["root"]["n_fit"]),
        )
        per = {}
        n_fit = {}
        for s, entry in obj.get("partitions", {}).items():
            per[int(s)] = UmdCalibrator(
                edges=np.asarray(entry["edges"], dtype=float),
                bin_means=np.asarray(entry["means"], dtype=float),
                n_fit=int(entry["n_s"]),
            )
            n_fit[int(s)] = int(entry["n_s"])
        return cls(
            root=root,
            per_partition=per,
            b_min=int(obj["b_min"]),
            partitioner_ref=obj["partitioner_ref"],
            n_fit=n_fit,
        )


def save_table(table: CalibratorTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(table.to_dict(), f)
        f.write("\n")


def load_table(path: str) -> CalibratorTable:
    with open(path, "r", encoding="utf-8") as f:
        return CalibratorTable.from_dict(json.load(f))


def fit_qa_binning(
    data: Dataset,
    part,
    b: int,
    delta: float = DEFAULT_DELTA,
    targets=None,
) -> CalibratorTable:
    """Fit root and per-partition calibrators with at least b records per bin.

    `targets` overrides the dataset labels (proxy targets); defaults to the
    dataset's own labels.
    """
    if b < 2:
        raise ValueError(f"b must be >= 2, got {b}")
    h = data.confidences
    t = data.labels if targets is None else np.asarray(targets, dtype=float)
    if t.shape != h.shape:
        raise ValueError(f"targets shape {t.shape} != confidences shape {h.shape}")
    n = len(h)
    root_bins = n // b
    if root_bins < 1:
        raise ValueError(f"need at least b={b} records to fit, got {n}")

    root = fit_umd(h, t, root_bins, delta)
    assignments = part.assign_many(data.embeddings)

    per: dict[int, UmdCalibrator] = {}
    n_fit: dict[int, int] = {}
    for s in np.unique(assignments):
        if s == OUT_OF_BOUNDS:
            continue
        mask = assignments == s
        n_s = int(np.sum(mask))
        n_bins = n_s // b
        if n_bins < 1:
            continue
        per[int(s)] = fit_umd(h[mask], t[mask], n_bins, delta)
        n_fit[int(s)] = n_s
    return CalibratorTable(
        root=root,
        per_partition=per,
        b_min=b,
        partitioner_ref=part.partitioner_id,
        n_fit=n_fit,
    )


def _check_partitioner(table: CalibratorTable, part) -> None:
    if table.partitioner_ref != part.partitioner_id:
        raise PartitionerMismatchError(
            f"table was fit against partitioner {table.partitioner_ref}, "
            f"got {part.partitioner_id}"
        )


def predict_qa_binning_many(
    table: CalibratorTable, part, embeddings, confidences
) -> np.ndarray:
    """Calibrated confidence per record; partition routing with root fallback."""
    _check_partitioner(table, part)
    h = np.asarray(confidences, dtype=float)
    assignments = part.assign_many(np.asarray(embeddings, dtype=float))
    out = np.empty(len(h), dtype=float)
    routed = np.array([s in table.per_partition for s in assignments])
    if np.any(~routed):
        out[~routed] = apply_umd(table.root, h[~routed])
    for s in np.unique(assignments[routed]):
        mask = assignments == s
        out[mask] = apply_umd(table.per_partition[int(s)], h[mask])
    return out


def predict_qa_binning(table: CalibratorTable, part, embedding, confidence: float) -> float:
    out = predict_qa_binning_many(
        table, part, np.asarray(embedding, dtype=float)[None, :], [confidence]
    )
    return float(out[0])
