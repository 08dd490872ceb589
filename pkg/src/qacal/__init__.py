"""Partition-conditional calibration of generative-QA confidence scores.

The package recalibrates a model's answer confidences so that calibration
holds not just on average but within every cell of an embedding-space
partition: binning with a per-bin mass floor carries a finite-sample
simultaneous guarantee, and a scale-then-bin variant trades a small proxy
bias for lower variance via a (optionally hierarchical) logistic scaler.
"""

__version__ = "0.1.0"

from .dataset import (
    CalibrationRecord,
    Dataset,
    DatasetError,
    SplitSpec,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .guarantees import (
    GuaranteeReport,
    SyntheticSpec,
    choose_b,
    epsilon_bound_qa,
    epsilon_bound_umd,
    generate_synthetic,
    validate_conditional_guarantee,
)
from .hier_scaler import (
    HierScalerModel,
    apply_scaler,
    fit_scaler,
    select_prior_variance,
)
from .metrics import (
    EvalRecord,
    MetricsReport,
    estimate_auac,
    estimate_ce,
    estimate_ce_beta,
    estimate_mce,
    estimate_mce_beta,
    evaluate,
)
from .partitioner import (
    OUT_OF_BOUNDS,
    KdTreePartitioner,
    KMeansPartitioner,
    build_kdtree,
    build_kmeans,
    load_partitioner,
    save_partitioner,
)
from .pipeline import RunResult, SweepConfig, run_sweep, summarize, write_outputs
from .qa_binning import (
    CalibratorTable,
    PartitionerMismatchError,
    fit_qa_binning,
    load_table,
    predict_qa_binning,
    predict_qa_binning_many,
    save_table,
)
from .scaling_qa_binning import (
    ScalingBinningConfig,
    ScalingBinningFit,
    estimate_nu_hat,
    fit_scaling_qa_binning,
)
from .umd import UmdCalibrator, apply_umd, fit_umd
