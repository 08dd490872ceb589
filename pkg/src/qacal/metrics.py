"""Calibration and accuracy metrics, marginal and partition-conditional.

Calibration error groups records by confidence and averages the absolute gap
between the group's mean label and mean confidence, weighted by group mass:

    CE = sum_g (n_g / n) * |mean(label)_g - mean(conf)_g|

Grouping is by exact confidence value when the observed score set is discrete
(at most 50 distinct values), which makes the estimator exact for step-function
calibrators; otherwise scores are cut into n_bins equal-mass intervals. Cut
points are confidence values, so tied scores always share a group and every
metric is invariant under record permutation.

The partition-conditional variants apply the same estimator within each
partition (out-of-bounds records form their own group) and combine per
partition sizes: CE(h; beta) is the size-weighted mean, and the max-gap
variant takes the worst group across all partitions. AUAC sweeps a threshold
grid over [0, 1] and integrates selective accuracy (mean label among records
with confidence strictly above the threshold) by the trapezoid rule; empty
selections carry the last defined accuracy forward.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .partitioner import OUT_OF_BOUNDS

MAX_DISCRETE_VALUES = 50
DEFAULT_N_BINS = 10
DEFAULT_AUAC_GRID = 101


@dataclass(frozen=True)
class EvalRecord:
    """A prediction to score: partition index, confidence, binary label."""

    partition: int
    confidence: float
    label: float


def _as_arrays(partitions, confidences, labels):
    s = np.asarray(partitions, dtype=np.int64)
    h = np.asarray(confidences, dtype=float)
    y = np.asarray(labels, dtype=float)
    if not (s.shape == h.shape == y.shape) or h.ndim != 1:
        raise ValueError("partitions, confidences, labels must be equal-length 1-d")
    if len(h) == 0:
        raise ValueError("cannot evaluate zero records")
    _check_eval_values(h, y)
    return s, h, y


def _check_eval_values(h: np.ndarray, y: np.ndarray) -> None:
    if not np.all(np.isfinite(h)) or np.any(h < 0) or np.any(h > 1):
        raise ValueError("confidences must be finite and in [0, 1]")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("evaluation labels must be binary")


def group_ids(confidences: np.ndarray, n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """Group index per record under the discrete-or-equal-mass rule."""
    h = np.asarray(confidences, dtype=float)
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    uniq = np.unique(h)
    if len(uniq) <= MAX_DISCRETE_VALUES:
        return np.searchsorted(uniq, h)
    n = len(h)
    h_sorted = np.sort(h)
    cut_positions = [(i * n) // n_bins for i in range(1, n_bins)]
    cuts = np.unique(h_sorted[cut_positions])
    return np.searchsorted(cuts, h, side="right")


def grouping_description(confidences: np.ndarray, n_bins: int = DEFAULT_N_BINS) -> str:
    uniq = len(np.unique(np.asarray(confidences, dtype=float)))
    if uniq <= MAX_DISCRETE_VALUES:
        return f"exact-values({uniq})"
    return f"equal-mass({n_bins})"


def _gap_per_group(h: np.ndarray, y: np.ndarray, n_bins: int):
    gid = group_ids(h, n_bins)
    counts = np.bincount(gid)
    mean_y = np.bincount(gid, weights=y) / np.maximum(counts, 1)
    mean_h = np.bincount(gid, weights=h) / np.maximum(counts, 1)
    keep = counts > 0
    return counts[keep], np.abs(mean_y[keep] - mean_h[keep])


def estimate_ce(confidences, labels, n_bins: int = DEFAULT_N_BINS) -> float:
    """Mass-weighted mean calibration gap over confidence groups."""
    h = np.asarray(confidences, dtype=float)
    y = np.asarray(labels, dtype=float)
    if h.shape != y.shape or h.ndim != 1 or len(h) == 0:
        raise ValueError("confidences and labels must be equal-length non-empty 1-d")
    _check_eval_values(h, y)
    counts, gaps = _gap_per_group(h, y, n_bins)
    return float(np.sum(counts * gaps) / len(h))


def estimate_mce(confidences, labels, n_bins: int = DEFAULT_N_BINS) -> float:
    """Worst calibration gap over confidence groups."""
    h = np.asarray(confidences, dtype=float)
    y = np.asarray(labels, dtype=float)
    if h.shape != y.shape or h.ndim != 1 or len(h) == 0:
        raise ValueError("confidences and labels must be equal-length non-empty 1-d")
    _check_eval_values(h, y)
    _, gaps = _gap_per_group(h, y, n_bins)
    return float(np.max(gaps))


def _per_partition(partitions, confidences, labels):
    s, h, y = _as_arrays(partitions, confidences, labels)
    for sv in np.unique(s):
        mask = s == sv
        yield int(sv), h[mask], y[mask]


def estimate_ce_beta(
    partitions, confidences, labels, n_bins: int = DEFAULT_N_BINS
) -> tuple[float, dict[int, tuple[int, float]]]:
    """Size-weighted mean of per-partition CE; returns (value, per-partition
    {index: (n_s, ce_s)}). Out-of-bounds records form partition -1."""
    total = 0.0
    n = 0
    per: dict[int, tuple[int, float]] = {}
    for sv, h_s, y_s in _per_partition(partitions, confidences, labels):
        ce_s = estimate_ce(h_s, y_s, n_bins)
        per[sv] = (len(h_s), ce_s)
        total += len(h_s) * ce_s
        n += len(h_s)
    if len(per) == 1:
        # Single partition: identical to the marginal estimator bit for bit.
        return next(iter(per.values()))[1], per
    return total / n, per


def estimate_mce_beta(
    partitions, confidences, labels, n_bins: int = DEFAULT_N_BINS
) -> float:
    """Worst calibration gap over all (partition, confidence-group) cells."""
    worst = 0.0
    for _, h_s, y_s in _per_partition(partitions, confidences, labels):
        worst = max(worst, estimate_mce(h_s, y_s, n_bins))
    return worst


def estimate_auac(confidences, labels, grid_size: int = DEFAULT_AUAC_GRID) -> float:
    """Area under the selective-accuracy curve on a uniform threshold grid.

    acc(g) = mean(label | confidence > g); empty selections carry the last
    defined accuracy forward (the overall label mean if empty from the start).
    """
    h = np.asarray(confidences, dtype=float)
    y = np.asarray(labels, dtype=float)
    if h.shape != y.shape or h.ndim != 1 or len(h) == 0:
        raise ValueError("confidences and labels must be equal-length non-empty 1-d")
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size}")
    _check_eval_values(h, y)
    grid = np.linspace(0.0, 1.0, grid_size)
    acc = np.empty(grid_size, dtype=float)
    last = float(np.mean(y))
    for i, g in enumerate(grid):
        sel = h > g
        if sel.any():
            last = float(np.mean(y[sel]))
        acc[i] = last
    return float(np.trapezoid(acc, grid))


@dataclass(frozen=True)
class MetricsReport:
    """All metrics for one evaluated prediction set."""

    n: int
    ce: float
    ce_beta: float
    mce: float
    mce_beta: float
    auac: float
    per_partition: dict[int, tuple[int, float]] = field(default_factory=dict)
    binning: str = ""

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "ce": self.ce,
            "ce_beta": self.ce_beta,
            "mce": self.mce,
            "mce_beta": self.mce_beta,
            "auac": self.auac,
            "binning": self.binning,
            "per_partition": {
                str(s): {"n": c, "ce": v} for s, (c, v) in sorted(self.per_partition.items())
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        per = {
            int(s): (int(v["n"]), float(v["ce"]))
            for s, v in obj.get("per_partition", {}).items()
        }
        return cls(
            n=int(obj["n"]),
            ce=float(obj["ce"]),
            ce_beta=float(obj["ce_beta"]),
            mce=float(obj["mce"]),
            mce_beta=float(obj["mce_beta"]),
            auac=float(obj["auac"]),
            per_partition=per,
            binning=obj.get("binning", ""),
        )


def evaluate(
    partitions,
    confidences,
    labels,
    n_bins: int = DEFAULT_N_BINS,
    auac_grid: int = DEFAULT_AUAC_GRID,
) -> MetricsReport:
    s, h, y = _as_arrays(partitions, confidences, labels)
    ce_beta, per = estimate_ce_beta(s, h, y, n_bins)
    return MetricsReport(
        n=len(h),
        ce=estimate_ce(h, y, n_bins),
        ce_beta=ce_beta,
        mce=estimate_mce(h, y, n_bins),
        mce_beta=estimate_mce_beta(s, h, y, n_bins),
        auac=estimate_auac(h, y),
        per_partition=per,
        binning=grouping_description(h, n_bins),
    )


def evaluate_records(records: list[EvalRecord], n_bins: int = DEFAULT_N_BINS) -> MetricsReport:
    return evaluate(
        [r.partition for r in records],
        [r.confidence for r in records],
        [r.label for r in records],
        n_bins=n_bins,
    )


def save_report(report: MetricsReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")


def write_per_partition_csv(report: MetricsReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["partition", "n", "ce"])
        for s, (c, v) in sorted(report.per_partition.items()):
            w.writerow([s, c, repr(v)])
