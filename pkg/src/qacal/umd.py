"""Uniform-mass histogram binning with double-dipped bin statistics.

Fitting sorts the n (confidence, target) pairs by confidence, cuts the sorted
order into B uniform-mass spans via the boundary index array

    A = [0, ceil(D), ceil(2 D), ..., n + 1],   D = (n + 1) / B,

and estimates each bin's value as the mean target over the order statistics
strictly inside the span (the boundary order statistics at the A_b positions
are excluded). The same pairs define both the bin edges and the bin means;
no data is held out. Bin edges are the confidence order statistics at the
boundary indices, padded with 0 below and 1 above, so the fitted map is a
step function on [0, 1].

Ties in confidence are broken by an index-proportional jitter delta * i / n
added to the sort key only; stored edges keep the raw values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DELTA = 1e-10


@dataclass(frozen=True)
class UmdCalibrator:
    """Fitted step function: B bins over [0, 1] with a mean value per bin."""

    edges: np.ndarray  # shape (B + 1,), edges[0] == 0, edges[-1] == 1
    bin_means: np.ndarray  # shape (B,)
    n_fit: int

    @property
    def n_bins(self) -> int:
        return len(self.bin_means)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        means = np.asarray(self.bin_means, dtype=float)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "bin_means", means)
        if len(edges) != len(means) + 1:
            raise ValueError(f"{len(edges)} edges incompatible with {len(means)} bins")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValueError("edges must start at 0 and end at 1")
        if np.any(np.diff(edges) < 0):
            raise ValueError("edges must be non-decreasing")


def _check_unit_interval(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")


def fit_umd(
    confidences: np.ndarray,
    targets: np.ndarray,
    n_bins: int,
    delta: float = DEFAULT_DELTA,
) -> UmdCalibrator:
    """Fit a uniform-mass binning calibrator on (confidence, target) pairs.

    Requires n >= 2 * n_bins so every span strictly contains at least one
    order statistic. Targets may be fractional (proxy scores).
    """
    h = np.asarray(confidences, dtype=float)
    t = np.asarray(targets, dtype=float)
    if h.shape != t.shape or h.ndim != 1:
        raise ValueError(f"confidences {h.shape} and targets {t.shape} must be equal 1-d")
    n = len(h)
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    if n < 2 * n_bins:
        raise ValueError(f"need n >= 2 * n_bins, got n={n}, n_bins={n_bins}")
    if not (delta > 0):
        raise ValueError(f"tie-break delta must be positive, got {delta}")
    _check_unit_interval("confidences", h)
    _check_unit_interval("targets", t)

    # Jitter only the sort key; edges are read off the raw sorted values.
    order = np.argsort(h + np.arange(n) * (delta / n), kind="stable")
    h_sorted = h[order]
    t_sorted = t[order]

    # A_b = ceil(b * (n + 1) / B) in exact integer arithmetic.
    bs = np.arange(n_bins + 1, dtype=np.int64)
    boundaries = -(-(bs * (n + 1)) // n_bins)

    edges = np.empty(n_bins + 1, dtype=float)
    means = np.empty(n_bins, dtype=float)
    for b in range(1, n_bins + 1):
        lo, up = int(boundaries[b - 1]), int(boundaries[b])
        # Interior order statistics t_(lo+1) .. t_(up-1), 1-indexed.
        means[b - 1] = np.mean(t_sorted[lo : up - 1])
    for b, a in enumerate(boundaries):
        if a == 0:
            edges[b] = 0.0
        elif a == n + 1:
            edges[b] = 1.0
        else:
            edges[b] = h_sorted[a - 1]
    # Confidences that differ by less than the jitter can sort out of value
    # order, leaving edges locally decreasing by < delta; clamp them monotone.
    edges = np.maximum.accumulate(edges)
    return UmdCalibrator(edges=edges, bin_means=means, n_fit=n)


def bin_index(calibrator: UmdCalibrator, confidences: np.ndarray) -> np.ndarray:
    """Bin membership for confidences in [0, 1]: bins are [e_b, e_{b+1})
    with the final bin closed at 1. Zero-width bins (tied edges) resolve to
    the higher bin."""
    h = np.asarray(confidences, dtype=float)
    _check_unit_interval("confidences", h)
    idx = np.searchsorted(calibrator.edges, h, side="right") - 1
    return np.clip(idx, 0, calibrator.n_bins - 1)


def apply_umd(calibrator: UmdCalibrator, confidences) -> np.ndarray | float:
    """Map confidences through the fitted step function."""
    scalar = np.isscalar(confidences)
    h = np.atleast_1d(np.asarray(confidences, dtype=float))
    out = calibrator.bin_means[bin_index(calibrator, h)]
    return float(out[0]) if scalar else out
