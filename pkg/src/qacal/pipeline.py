"""End-to-end benchmark sweep over calibration methods.

Per seed the dataset splits 4 ways (partition-map build, calibration, tuning,
test). A median tree per candidate depth is built on the first split; every
method fits on the calibration split only. Hyperparameters (bin counts,
depth/bin-mass pairs, prior variances) are chosen on the tuning split by
AUAC, ties broken by lower conditional calibration error then smaller depth;
the winner is scored on the test split against a fixed evaluation partition
map. Methods:

    none       raw confidences
    umd        uniform-mass binning, no partitions
    platt      pooled logistic scaler
    scale-bin  pooled scaler then binning, no partitions
    qab        partition-conditional binning
    s-qab      scale-then-bin with a pooled scaler, partitioned
    hs-qab     scale-then-bin with partition random effects

The non-partitioned binning baselines run as depth-0 tables so their
prediction path is byte-identical to the partitioned code with one
partition. Candidate (depth, b) pairs are kept only when the expected bins
per partition floor((n_cal / 2^depth) / b) lies in a configured envelope.
Default b grids come from inverting the conditional bound over a nu grid;
default bin-count grids from inverting the single-partition bound over an
epsilon grid.

Cells (seed, method, hyperparameters) are independent; the sweep may run
them on a thread pool (QACAL_THREADS) and merges results by sorted cell key,
so reports are byte-identical across runs and thread counts.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import Dataset, SplitSpec, split_dataset
from .guarantees import choose_b, epsilon_bound_umd
from .hier_scaler import (
    MODE_HIERARCHICAL,
    MODE_PLATT,
    MODE_POOLED,
    apply_scaler,
    fit_scaler,
    select_prior_variance,
)
from .metrics import MetricsReport, estimate_auac, estimate_ce_beta, evaluate
from .partitioner import build_kdtree
from .qa_binning import fit_qa_binning, predict_qa_binning_many
from .scaling_qa_binning import ScalingBinningConfig, fit_scaling_qa_binning
from .umd import DEFAULT_DELTA

METHOD_NONE = "none"
METHOD_UMD = "umd"
METHOD_PLATT = "platt"
METHOD_SCALE_BIN = "scale-bin"
METHOD_QAB = "qab"
METHOD_SQAB = "s-qab"
METHOD_HSQAB = "hs-qab"
ALL_METHODS = (
    METHOD_NONE,
    METHOD_UMD,
    METHOD_PLATT,
    METHOD_SCALE_BIN,
    METHOD_QAB,
    METHOD_SQAB,
    METHOD_HSQAB,
)

_PARTITIONED = (METHOD_QAB, METHOD_SQAB, METHOD_HSQAB)
_BINNED_BASELINES = (METHOD_UMD, METHOD_SCALE_BIN)


@dataclass(frozen=True)
class SweepConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    fractions: tuple[float, float, float, float] = (0.2, 0.6, 0.1, 0.1)
    depths: tuple[int, ...] = (1, 2, 3)
    eval_depth: int = 2
    alpha: float = 0.1
    eps_target: float = 0.15
    nu_grid: tuple[float, ...] = (0.0, 0.0125, 0.025, 0.0375, 0.05)
    eps_grid_umd: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2)
    b_grid: tuple[int, ...] | None = None
    n_bins_grid: tuple[int, ...] | None = None
    variance_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    delta: float = DEFAULT_DELTA
    methods: tuple[str, ...] = ALL_METHODS
    n_bins_eval: int = 10
    auac_grid: int = 101
    min_bins_per_partition: int = 3
    max_bins_per_partition: int = 10

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {list(ALL_METHODS)}")
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")
        if any(d < 0 for d in self.depths) or self.eval_depth < 0:
            raise ValueError("depths must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepConfig":
        kwargs = {}
        for key, value in obj.items():
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)


@dataclass(frozen=True)
class RunResult:
    """One sweep cell after tuning: the selected variant's test metrics."""

    method: str
    seed: int
    params: dict
    tune_auac: float
    report: MetricsReport


def derive_b_grid(n_cal: int, config: SweepConfig) -> tuple[int, ...]:
    if config.b_grid is not None:
        return tuple(sorted(set(int(b) for b in config.b_grid)))
    values = set()
    for nu in config.nu_grid:
        b = choose_b(n_cal, config.alpha, float(nu), config.eps_target)
        if b is not None:
            values.add(b)
    return tuple(sorted(values))


def derive_n_bins_grid(n_cal: int, config: SweepConfig) -> tuple[int, ...]:
    if config.n_bins_grid is not None:
        return tuple(sorted(set(int(v) for v in config.n_bins_grid)))
    values = set()
    for eps in config.eps_grid_umd:
        best = None
        for n_bins in range(1, n_cal // 2 + 1):
            if epsilon_bound_umd(n_cal, n_bins, config.alpha) <= eps:
                best = n_bins
            else:
                break
        if best is not None:
            values.add(best)
    return tuple(sorted(values))


def envelope_pairs(n_cal: int, depths, b_grid, lo: int, hi: int) -> list[tuple[int, int]]:
    """(depth, b) pairs whose expected bins per partition land in [lo, hi]."""
    pairs = []
    for d in sorted(set(int(d) for d in depths)):
        for b in b_grid:
            bins = (n_cal // (2**d)) // b
            if lo <= bins <= hi:
                pairs.append((d, int(b)))
    return pairs


@dataclass
class _SeedContext:
    seed: int
    tree: Dataset
    cal: Dataset
    tune: Dataset
    test: Dataset
    trees: dict
    eval_tune: np.ndarray
    eval_test: np.ndarray


def _candidate_variants(method: str, ctx: _SeedContext, config: SweepConfig,
                        b_grid, n_bins_grid, pairs, variances) -> list[dict]:
    if method == METHOD_NONE or method == METHOD_PLATT:
        return [{}]
    if method in _BINNED_BASELINES:
        return [{"n_bins": int(B)} for B in n_bins_grid]
    variants = []
    for d, b in pairs:
        params = {"depth": d, "b": b}
        if method == METHOD_HSQAB:
            su2, sv2 = variances[d]
            params.update({"sigma_u2": su2, "sigma_v2": sv2})
        variants.append(params)
    return variants


def _fit_predictor(method: str, params: dict, ctx: _SeedContext, config: SweepConfig):
    """Fit one variant on the calibration split; returns predict(dataset)."""
    cal = ctx.cal
    n_cal = len(cal)
    if method == METHOD_NONE:
        return lambda part_ds: part_ds.confidences

    if method == METHOD_PLATT:
        model = fit_scaler(
            cal.confidences,
            np.zeros(n_cal, dtype=np.int64),
            cal.labels,
            mode=MODE_PLATT,
        )
        return lambda part_ds: apply_scaler(
            model, part_ds.confidences, np.zeros(len(part_ds), dtype=np.int64)
        )

    if method == METHOD_UMD:
        b_equiv = max(2, n_cal // params["n_bins"])
        table = fit_qa_binning(cal, ctx.trees[0], b_equiv, config.delta)
        return lambda part_ds: predict_qa_binning_many(
            table, ctx.trees[0], part_ds.embeddings, part_ds.confidences
        )

    if method == METHOD_SCALE_BIN:
        n_bin_half = n_cal - int(np.floor(n_cal * 0.5))
        b_equiv = max(2, n_bin_half // params["n_bins"])
        fit = fit_scaling_qa_binning(
            cal,
            ctx.trees[0],
            ScalingBinningConfig(
                b=b_equiv, delta=config.delta, scaler_mode=MODE_POOLED, seed=ctx.seed
            ),
        )
        return lambda part_ds: predict_qa_binning_many(
            fit.table, ctx.trees[0], part_ds.embeddings, part_ds.confidences
        )

    depth = params["depth"]
    part = ctx.trees[depth]
    if method == METHOD_QAB:
        table = fit_qa_binning(cal, part, params["b"], config.delta)
        return lambda part_ds: predict_qa_binning_many(
            table, part, part_ds.embeddings, part_ds.confidences
        )

    mode = MODE_POOLED if method == METHOD_SQAB else MODE_HIERARCHICAL
    fit = fit_scaling_qa_binning(
        cal,
        part,
        ScalingBinningConfig(
            b=params["b"],
            delta=config.delta,
            scaler_mode=mode,
            seed=ctx.seed,
            sigma_u2=params.get("sigma_u2", 1.0),
            sigma_v2=params.get("sigma_v2", 1.0),
        ),
    )
    return lambda part_ds: predict_qa_binning_many(
        fit.table, part, part_ds.embeddings, part_ds.confidences
    )


def _run_cell(method, ctx, config, b_grid, n_bins_grid, pairs, variances) -> RunResult:
    """Tune one method on one seed, then score the winner on the test split."""
    variants = _candidate_variants(method, ctx, config, b_grid, n_bins_grid, pairs, variances)
    if not variants:
        raise ValueError(
            f"method {method!r} has no candidate hyperparameters inside the envelope"
        )
    best = None
    for index, params in enumerate(variants):
        predict = _fit_predictor(method, params, ctx, config)
        tune_pred = np.asarray(predict(ctx.tune), dtype=float)
        auac = estimate_auac(tune_pred, ctx.tune.labels, config.auac_grid)
        ce_beta, _ = estimate_ce_beta(
            ctx.eval_tune, tune_pred, ctx.tune.labels, config.n_bins_eval
        )
        depth = params.get("depth", 0)
        key = (-auac, ce_beta, depth, index)
        if best is None or key < best[0]:
            best = (key, params, predict, auac)
    _, params, predict, tune_auac = best
    test_pred = np.asarray(predict(ctx.test), dtype=float)
    report = evaluate(
        ctx.eval_test,
        test_pred,
        ctx.test.labels,
        n_bins=config.n_bins_eval,
        auac_grid=config.auac_grid,
    )
    return RunResult(method=method, seed=ctx.seed, params=params,
                     tune_auac=tune_auac, report=report)


def _seed_context(dataset: Dataset, seed: int, config: SweepConfig, depths_needed) -> _SeedContext:
    tree, cal, tune, test = split_dataset(dataset, SplitSpec(config.fractions, seed))
    trees = {d: build_kdtree(tree.embeddings, d) for d in sorted(depths_needed)}
    eval_part = trees[config.eval_depth]
    return _SeedContext(
        seed=seed,
        tree=tree,
        cal=cal,
        tune=tune,
        test=test,
        trees=trees,
        eval_tune=eval_part.assign_many(tune.embeddings),
        eval_test=eval_part.assign_many(test.embeddings),
    )


def run_sweep(dataset: Dataset, config: SweepConfig, threads: int | None = None) -> list[RunResult]:
    """All (seed, method) cells, deterministically ordered."""
    if threads is None:
        threads = int(os.environ.get("QACAL_THREADS", "1"))
    threads = max(1, threads)

    n_cal = SplitSpec(config.fractions, 0).sizes(len(dataset))[1]
    b_grid = derive_b_grid(n_cal, config)
    n_bins_grid = derive_n_bins_grid(n_cal, config)
    pairs = envelope_pairs(
        n_cal, config.depths, b_grid, config.min_bins_per_partition, config.max_bins_per_partition
    )

    depths_needed = {config.eval_depth}
    if set(config.methods) & set(_BINNED_BASELINES + (METHOD_SCALE_BIN,)):
        depths_needed.add(0)
    if set(config.methods) & set(_PARTITIONED):
        depths_needed.update(d for d, _ in pairs)

    contexts = {seed: _seed_context(dataset, seed, config, depths_needed) for seed in config.seeds}

    variances: dict[int, dict[int, tuple[float, float]]] = {}
    if METHOD_HSQAB in config.methods:
        for seed, ctx in contexts.items():
            variances[seed] = {}
            for d in sorted({d for d, _ in pairs}):
                variances[seed][d] = _select_variances(ctx, d, config)

    cells = [
        (seed_idx, method_idx, seed, method)
        for seed_idx, seed in enumerate(config.seeds)
        for method_idx, method in enumerate(config.methods)
    ]

    def work(cell):
        seed_idx, method_idx, seed, method = cell
        ctx = contexts[seed]
        result = _run_cell(
            method, ctx, config, b_grid, n_bins_grid, pairs, variances.get(seed, {})
        )
        return (method_idx, seed_idx), result

    if threads == 1:
        keyed = [work(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            keyed = list(pool.map(work, cells))
    keyed.sort(key=lambda kr: kr[0])
    return [r for _, r in keyed]


def _select_variances(ctx: _SeedContext, depth: int, config: SweepConfig) -> tuple[float, float]:
    # Replicates the scaling split so selection sees the scaler's actual
    # training half; the tuning split is the holdout.
    part = ctx.trees[depth]
    n_cal = len(ctx.cal)
    perm = np.random.default_rng(ctx.seed).permutation(n_cal)
    half = ctx.cal.subset(perm[: int(np.floor(n_cal * 0.5))])
    train = (half.confidences, part.assign_many(half.embeddings), half.labels)
    holdout = (ctx.tune.confidences, part.assign_many(ctx.tune.embeddings), ctx.tune.labels)
    return select_prior_variance(train, holdout, config.variance_grid)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return "" if x is None else str(x)


RESULT_COLUMNS = (
    "method", "seed", "depth", "b", "n_bins", "sigma_u2", "sigma_v2",
    "tune_auac", "ce", "ce_beta", "mce", "mce_beta", "auac", "n_test",
)


def results_rows(results: list[RunResult]) -> list[list[str]]:
    rows = []
    for r in results:
        p = r.params
        rows.append(
            [
                r.method,
                str(r.seed),
                _fmt(p.get("depth")),
                _fmt(p.get("b")),
                _fmt(p.get("n_bins")),
                _fmt(p.get("sigma_u2")),
                _fmt(p.get("sigma_v2")),
                repr(r.tune_auac),
                repr(r.report.ce),
                repr(r.report.ce_beta),
                repr(r.report.mce),
                repr(r.report.mce_beta),
                repr(r.report.auac),
                str(r.report.n),
            ]
        )
    return rows


def summarize(results: list[RunResult], methods) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation per method across seeds."""
    summary = {}
    for method in methods:
        rows = [r for r in results if r.method == method]
        if not rows:
            continue
        entry = {"n_seeds": len(rows)}
        for metric in ("ce", "ce_beta", "mce", "mce_beta", "auac"):
            vals = np.array([getattr(r.report, metric) for r in rows], dtype=float)
            entry[f"{metric}_mean"] = float(np.mean(vals))
            entry[f"{metric}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        summary[method] = entry
    return summary


def write_outputs(results: list[RunResult], config: SweepConfig, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results_json": os.path.join(out_dir, "results.json"),
        "results_csv": os.path.join(out_dir, "results.csv"),
        "summary_csv": os.path.join(out_dir, "summary.csv"),
        "per_partition_csv": os.path.join(out_dir, "per_partition.csv"),
    }
    summary = summarize(results, config.methods)

    payload = {
        "config": config.to_dict(),
        "summary": summary,
        "results": [
            {
                "method": r.method,
                "seed": r.seed,
                "params": r.params,
                "tune_auac": r.tune_auac,
                "report": r.report.to_dict(),
            }
            for r in results
        ],
    }
    with open(paths["results_json"], "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")

    with open(paths["results_csv"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(results_rows(results))

    with open(paths["summary_csv"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        metrics = ("ce", "ce_beta", "mce", "mce_beta", "auac")
        header = ["method", "n_seeds"]
        for m in metrics:
            header += [f"{m}_mean", f"{m}_std"]
        w.writerow(header)
        for method in config.methods:
            if method not in summary:
                continue
            entry = summary[method]
            row = [method, str(entry["n_seeds"])]
            for m in metrics:
                row += [repr(entry[f"{m}_mean"]), repr(entry[f"{m}_std"])]
            w.writerow(row)

    with open(paths["per_partition_csv"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "seed", "partition", "n", "ce"])
        for r in results:
            for s, (count, value) in sorted(r.report.per_partition.items()):
                w.writerow([r.method, str(r.seed), str(s), str(count), repr(value)])
    return paths
