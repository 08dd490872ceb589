"""Scale-then-bin: fit a scaler on one half of the calibration data, bin the
other half against the scaler's outputs.

The calibration set is split once (seeded shuffle) into a scaling half and a
binning half. The scaler (pooled or with partition random effects) is fit on
the first half; its predictions on the second half become proxy targets for
partition-conditional binning there. The deployed predictor is the binning
table alone; the scaler never runs at prediction time.

Binning against proxy targets trades variance for a proxy bias nu: the
guarantee then holds relative to the proxy regression function. nu_hat
estimates that bias on the binning half (held out from the scaler fit) as
the worst gap between mean proxy target and mean ground-truth label over 10
equal-mass confidence spans.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .hier_scaler import (
    MODE_HIERARCHICAL,
    MODES,
    HierScalerModel,
    apply_scaler,
    fit_scaler,
)
from .qa_binning import CalibratorTable, fit_qa_binning
from .umd import DEFAULT_DELTA

BUNDLE_FORMAT = "qacal.scaled.v1"
NU_HAT_SPANS = 10


@dataclass(frozen=True)
class ScalingBinningConfig:
    b: int
    delta: float = DEFAULT_DELTA
    split_fraction: float = 0.5
    scaler_mode: str = MODE_HIERARCHICAL
    seed: int = 0
    sigma_u2: float = 1.0
    sigma_v2: float = 1.0

    def __post_init__(self):
        if self.b < 2:
            raise ValueError(f"b must be >= 2, got {self.b}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.scaler_mode not in MODES:
            raise ValueError(f"unknown scaler_mode {self.scaler_mode!r}")


@dataclass(frozen=True)
class ScalingBinningFit:
    """Fit artifacts: the deployed table, the (fit-time only) scaler, and the
    estimated proxy bias."""

    table: CalibratorTable
    scaler: HierScalerModel
    nu_hat: float
    config: ScalingBinningConfig
    n_scale: int
    n_bin: int


def estimate_nu_hat(confidences, proxy_targets, labels, n_spans: int = NU_HAT_SPANS) -> float:
    """Worst |mean(proxy) - mean(label)| over equal-mass confidence spans."""
    h = np.asarray(confidences, dtype=float)
    proxy = np.asarray(proxy_targets, dtype=float)
    y = np.asarray(labels, dtype=float)
    if not (h.shape == proxy.shape == y.shape) or h.ndim != 1 or len(h) == 0:
        raise ValueError("inputs must be equal-length non-empty 1-d")
    n = len(h)
    order = np.argsort(h, kind="stable")
    spans = np.array_split(order, min(n_spans, n))
    worst = 0.0
    for span in spans:
        worst = max(worst, abs(float(np.mean(proxy[span]) - np.mean(y[span]))))
    return worst


def fit_scaling_qa_binning(data: Dataset, part, config: ScalingBinningConfig) -> ScalingBinningFit:
    n = len(data)
    perm = np.random.default_rng(config.seed).permutation(n)
    n_scale = int(np.floor(n * config.split_fraction))
    if n_scale < 1 or n - n_scale < config.b:
        raise ValueError(
            f"cannot split {n} records into a scaling half and a binning half "
            f"holding at least b={config.b} records"
        )
    scale_part = data.subset(perm[:n_scale])
    bin_part = data.subset(perm[n_scale:])

    s_scale = part.assign_many(scale_part.embeddings)
    scaler = fit_scaler(
        scale_part.confidences,
        s_scale,
        scale_part.labels,
        mode=config.scaler_mode,
        sigma_u2=config.sigma_u2,
        sigma_v2=config.sigma_v2,
    )

    s_bin = part.assign_many(bin_part.embeddings)
    proxy = apply_scaler(scaler, bin_part.confidences, s_bin)
    table = fit_qa_binning(bin_part, part, config.b, config.delta, targets=proxy)
    nu_hat = estimate_nu_hat(bin_part.confidences, proxy, bin_part.labels)
    return ScalingBinningFit(
        table=table,
        scaler=scaler,
        nu_hat=nu_hat,
        config=config,
        n_scale=n_scale,
        n_bin=n - n_scale,
    )


def save_scaling_fit(fit: ScalingBinningFit, table_path: str, scaler_path: str, manifest_path: str) -> None:
    from .hier_scaler import save_scaler
    from .qa_binning import save_table

    save_table(fit.table, table_path)
    save_scaler(fit.scaler, scaler_path)
    manifest = {
        "format": BUNDLE_FORMAT,
        "config": asdict(fit.config),
        "nu_hat": fit.nu_hat,
        "n_scale": fit.n_scale,
        "n_bin": fit.n_bin,
        "table_path": table_path,
        "scaler_path": scaler_path,
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
