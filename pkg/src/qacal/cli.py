"""Command-line interface.

Subcommands cover the full workflow: ingest/validate data, split it, build a
partition map, fit a calibrator bundle, predict, evaluate, run the benchmark
sweep, check the finite-sample bound (analytically or by simulation), and
re-emit reports. Exit codes: 0 success, 1 validation error (flags, files,
values), 2 unexpected runtime failure. QACAL_SEED supplies a default seed,
QACAL_THREADS the sweep thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .dataset import (
    Dataset,
    DatasetError,
    SplitSpec,
    load_dataset,
    save_dataset,
    save_splits,
    split_dataset,
)
from .guarantees import (
    SyntheticSpec,
    bound_curve,
    choose_b,
    epsilon_bound_qa,
    epsilon_bound_umd,
    generate_synthetic,
    validate_conditional_guarantee,
)
from .hier_scaler import (
    MODE_HIERARCHICAL,
    MODE_PLATT,
    MODE_POOLED,
    apply_scaler,
    fit_scaler,
    load_scaler,
    save_scaler,
)
from .metrics import MetricsReport, evaluate, save_report, write_per_partition_csv
from .partitioner import (
    build_kdtree,
    build_kmeans,
    load_partitioner,
    save_partitioner,
)
from .pipeline import (
    ALL_METHODS,
    METHOD_HSQAB,
    METHOD_PLATT,
    METHOD_QAB,
    METHOD_SCALE_BIN,
    METHOD_SQAB,
    METHOD_UMD,
    RunResult,
    SweepConfig,
    run_sweep,
    write_outputs,
)
from .qa_binning import (
    PartitionerMismatchError,
    fit_qa_binning,
    load_table,
    predict_qa_binning_many,
    save_table,
)
from .scaling_qa_binning import ScalingBinningConfig, fit_scaling_qa_binning

BUNDLE_FORMAT = "qacal.bundle.v1"


class ValidationError(ValueError):
    """User input problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _env_seed(value) -> int:
    if value is not None:
        return int(value)
    return int(os.environ.get("QACAL_SEED", "0"))


def _build_parser() -> _Parser:
    parser = _Parser(prog="qacal", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qacal {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[], help="validate a JSONL dataset")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--expect-dim", type=int, default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="shuffle and slice into tree/cal/tune/test")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fractions", default="0.2,0.6,0.1,0.1")
    p.add_argument("--out-stem", default=None)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("make-partitioner", help="build a partition map from data")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--kind", choices=["kdtree", "kmeans"], default="kdtree")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--dim-order", choices=["cycle", "max_variance"], default="cycle")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_partitioner)

    p = sub.add_parser("fit", help="fit a calibrator bundle")
    p.add_argument("--method", required=True, choices=[m for m in ALL_METHODS if m != "none"])
    p.add_argument("--train", required=True)
    p.add_argument("--partitioner", default=None)
    p.add_argument("--b", type=int, default=None)
    p.add_argument("--n-bins", type=int, default=None)
    p.add_argument("--delta", type=float, default=1e-10)
    p.add_argument("--split-fraction", type=float, default=0.5)
    p.add_argument("--sigma-u2", type=float, default=1.0)
    p.add_argument("--sigma-v2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="apply a fitted bundle to records")
    p.add_argument("--bundle", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--partitioner", required=True)
    p.add_argument("--field", choices=["calibrated", "confidence"], default="calibrated")
    p.add_argument("--n-bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--per-partition-csv", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="run the benchmark sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("simulate", help="Monte-Carlo check of the guarantee")
    p.add_argument("--spec", required=True, help="synthetic spec JSON file")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--proxy-shift", type=float, default=0.0)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bound", help="evaluate or invert the epsilon bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--b", type=int, default=None)
    p.add_argument("--n-bins", type=int, default=None, help="single-partition variant")
    p.add_argument("--eps-target", type=float, default=None, help="invert for b")
    p.add_argument("--curve-out", default=None, help="write a (b, nu) grid CSV")
    p.add_argument("--b-range", default="10,1000,10", help="min,max,step for --curve-out")
    p.add_argument("--nus", default="0.0,0.05,0.1", help="comma list for --curve-out")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("export-report", help="re-emit CSV reports from results.json")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_export_report)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    return parser


def _cmd_ingest(args) -> int:
    ds = load_dataset(args.infile, expect_dim=args.expect_dim)
    kinds = sorted(set(ds.label_kinds))
    print(
        f"ok: {len(ds)} records, dim={ds.embedding_dim}, "
        f"label_kinds={','.join(kinds)}"
    )
    return 0


def _cmd_split(args) -> int:
    try:
        fractions = tuple(float(x) for x in args.fractions.split(","))
    except ValueError as e:
        raise ValidationError(f"--fractions must be four comma-separated numbers: {e}")
    ds = load_dataset(args.infile)
    spec = SplitSpec(fractions=fractions, seed=_env_seed(args.seed))
    parts = split_dataset(ds, spec)
    stem = args.out_stem
    if stem is None:
        stem = args.infile[:-6] if args.infile.endswith(".jsonl") else args.infile
    for path in save_splits(parts, stem):
        print(path)
    return 0


def _cmd_make_partitioner(args) -> int:
    ds = load_dataset(args.infile)
    if args.kind == "kdtree":
        if args.depth is None:
            raise ValidationError("--depth is required for --kind kdtree")
        part = build_kdtree(ds.embeddings, args.depth, dim_order=args.dim_order)
    else:
        if args.k is None:
            raise ValidationError("--k is required for --kind kmeans")
        part = build_kmeans(ds.embeddings, args.k, seed=_env_seed(args.seed))
    save_partitioner(part, args.out)
    print(f"{args.out}: {part.n_partitions} partitions ({part.partitioner_id})")
    return 0


def _sidecar(out_path: str, tag: str) -> str:
    base = out_path[:-5] if out_path.endswith(".json") else out_path
    return f"{base}.{tag}.json"


def _cmd_fit(args) -> int:
    method = args.method
    ds = load_dataset(args.train)
    seed = _env_seed(args.seed)

    needs_partitioner = method in (METHOD_QAB, METHOD_SQAB, METHOD_HSQAB)
    if needs_partitioner and args.partitioner is None:
        raise ValidationError(f"--partitioner is required for method '{method}'")
    if needs_partitioner and args.b is None:
        raise ValidationError(f"--b is required for method '{method}'")
    if method in (METHOD_UMD, METHOD_SCALE_BIN) and args.b is None and args.n_bins is None:
        raise ValidationError(f"--n-bins (or --b) is required for method '{method}'")

    if args.partitioner is not None:
        part = load_partitioner(args.partitioner)
    elif method != METHOD_PLATT:
        part = build_kdtree(ds.embeddings, 0)
    else:
        part = None

    manifest = {
        "format": BUNDLE_FORMAT,
        "method": method,
        "seed": seed,
        "nu_hat": None,
        "partitioner_path": None,
        "table_path": None,
        "scaler_path": None,
    }
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)

    def rel(path: str) -> str:
        return os.path.relpath(os.path.abspath(path), out_dir)

    if part is not None:
        ppath = _sidecar(args.out, "partitioner")
        save_partitioner(part, ppath)
        manifest["partitioner_path"] = rel(ppath)

    if method == METHOD_PLATT:
        model = fit_scaler(
            ds.confidences, np.zeros(len(ds), dtype=np.int64), ds.labels, mode=MODE_PLATT
        )
        spath = _sidecar(args.out, "scaler")
        save_scaler(model, spath)
        manifest["scaler_path"] = rel(spath)
    elif method in (METHOD_UMD, METHOD_QAB):
        if method == METHOD_UMD and args.b is None:
            b = max(2, len(ds) // args.n_bins)
        else:
            b = args.b
        table = fit_qa_binning(ds, part, b, args.delta)
        tpath = _sidecar(args.out, "table")
        save_table(table, tpath)
        manifest["table_path"] = rel(tpath)
        manifest["b"] = b
    else:
        if method == METHOD_SCALE_BIN and args.b is None:
            n_bin_half = len(ds) - int(np.floor(len(ds) * args.split_fraction))
            b = max(2, n_bin_half // args.n_bins)
        else:
            b = args.b
        mode = {
            METHOD_SCALE_BIN: MODE_POOLED,
            METHOD_SQAB: MODE_POOLED,
            METHOD_HSQAB: MODE_HIERARCHICAL,
        }[method]
        fit = fit_scaling_qa_binning(
            ds,
            part,
            ScalingBinningConfig(
                b=b,
                delta=args.delta,
                split_fraction=args.split_fraction,
                scaler_mode=mode,
                seed=seed,
                sigma_u2=args.sigma_u2,
                sigma_v2=args.sigma_v2,
            ),
        )
        tpath = _sidecar(args.out, "table")
        spath = _sidecar(args.out, "scaler")
        save_table(fit.table, tpath)
        save_scaler(fit.scaler, spath)
        manifest["table_path"] = rel(tpath)
        manifest["scaler_path"] = rel(spath)
        manifest["nu_hat"] = fit.nu_hat
        manifest["b"] = b

    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    print(args.out)
    return 0


def _load_bundle(path: str):
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValidationError(f"{path}: not a {BUNDLE_FORMAT} bundle")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(key):
        value = manifest.get(key)
        return None if value is None else os.path.join(base, value)

    part = table = scaler = None
    if resolve("partitioner_path"):
        part = load_partitioner(resolve("partitioner_path"))
    if resolve("table_path"):
        table = load_table(resolve("table_path"))
    if resolve("scaler_path"):
        scaler = load_scaler(resolve("scaler_path"))
    return manifest, part, table, scaler


def _cmd_predict(args) -> int:
    manifest, part, table, scaler = _load_bundle(args.bundle)
    ds = load_dataset(args.infile)
    if table is not None:
        preds = predict_qa_binning_many(table, part, ds.embeddings, ds.confidences)
    elif scaler is not None:
        s = part.assign_many(ds.embeddings) if part is not None else np.full(len(ds), -1)
        preds = apply_scaler(scaler, ds.confidences, s)
    else:
        raise ValidationError(f"{args.bundle}: bundle has neither table nor scaler")
    with open(args.out, "w", encoding="utf-8") as f:
        for i, rec in enumerate(ds.records):
            obj = rec.to_dict()
            obj["calibrated"] = float(preds[i])
            f.write(json.dumps(obj) + "\n")
    print(args.out)
    return 0


def _cmd_evaluate(args) -> int:
    part = load_partitioner(args.partitioner)
    rows = []
    with open(args.infile, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DatasetError(f"{args.infile}:{lineno}: invalid JSON ({e.msg})")
    if not rows:
        raise ValidationError(f"{args.infile}: no records")
    for obj in rows:
        if args.field not in obj:
            raise ValidationError(
                f"{args.infile}: record {obj.get('id')!r} lacks field {args.field!r}"
            )
    emb = np.array([r["embedding"] for r in rows], dtype=float)
    conf = np.array([r[args.field] for r in rows], dtype=float)
    labels = np.array([r["label"] for r in rows], dtype=float)
    partitions = part.assign_many(emb)
    report = evaluate(partitions, conf, labels, n_bins=args.n_bins)
    save_report(report, args.out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["n", "ce", "ce_beta", "mce", "mce_beta", "auac", "binning"])
            w.writerow(
                [
                    report.n,
                    repr(report.ce),
                    repr(report.ce_beta),
                    repr(report.mce),
                    repr(report.mce_beta),
                    repr(report.auac),
                    report.binning,
                ]
            )
    if args.per_partition_csv:
        write_per_partition_csv(report, args.per_partition_csv)
    print(
        f"n={report.n} ce={report.ce:.6f} ce_beta={report.ce_beta:.6f} "
        f"mce={report.mce:.6f} mce_beta={report.mce_beta:.6f} auac={report.auac:.6f}"
    )
    return 0


def _cmd_sweep(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        config = SweepConfig.from_dict(json.load(f))
    ds = load_dataset(args.data)
    results = run_sweep(ds, config, threads=args.threads)
    paths = write_outputs(results, config, args.out_dir)
    for key in sorted(paths):
        print(paths[key])
    return 0


def _cmd_simulate(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = SyntheticSpec.from_dict(json.load(f))
    report = validate_conditional_guarantee(
        spec, args.depth, args.b, args.alpha, args.trials, proxy_shift=args.proxy_shift
    )
    if args.out_csv:
        with open(args.out_csv, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["trial", "worst_gap", "epsilon", "passed"])
            for i, gap in enumerate(report.per_trial_worst):
                w.writerow([i, repr(gap), repr(report.epsilon), int(gap <= report.epsilon)])
    print(
        f"coverage={report.coverage:.4f} worst_gap={report.worst_gap:.6f} "
        f"epsilon={report.epsilon:.6f} trials={report.trials}"
    )
    return 0


def _cmd_bound(args) -> int:
    if args.curve_out:
        try:
            b_min, b_max, b_step = (int(x) for x in args.b_range.split(","))
            nus = [float(x) for x in args.nus.split(",")]
        except ValueError as e:
            raise ValidationError(f"bad --b-range/--nus: {e}")
        rows = bound_curve(args.n, args.alpha, nus, range(b_min, b_max + 1, b_step))
        with open(args.curve_out, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["n", "b", "alpha", "nu", "epsilon"])
            for row in rows:
                w.writerow(
                    [row["n"], row["b"], repr(row["alpha"]), repr(row["nu"]), repr(row["epsilon"])]
                )
        print(args.curve_out)
        return 0
    if args.eps_target is not None:
        b = choose_b(args.n, args.alpha, args.nu, args.eps_target)
        if b is None:
            print("infeasible")
        else:
            print(f"b={b} epsilon={epsilon_bound_qa(args.n, b, args.alpha, args.nu):.6f}")
        return 0
    if args.n_bins is not None:
        eps = epsilon_bound_umd(args.n, args.n_bins, args.alpha, args.nu)
        print(f"epsilon={eps:.6f}")
        return 0
    if args.b is None:
        raise ValidationError("bound needs one of --b, --n-bins, --eps-target, --curve-out")
    print(f"epsilon={epsilon_bound_qa(args.n, args.b, args.alpha, args.nu):.6f}")
    return 0


def _cmd_export_report(args) -> int:
    results_path = os.path.join(args.run_dir, "results.json")
    if not os.path.exists(results_path):
        raise ValidationError(f"{results_path}: missing results.json")
    with open(results_path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    config = SweepConfig.from_dict(payload["config"])
    results = [
        RunResult(
            method=entry["method"],
            seed=int(entry["seed"]),
            params=entry["params"],
            tune_auac=float(entry["tune_auac"]),
            report=MetricsReport.from_dict(entry["report"]),
        )
        for entry in payload["results"]
    ]
    out_dir = args.out_dir or args.run_dir
    paths = write_outputs(results, config, out_dir)
    for key in sorted(paths):
        print(paths[key])
    return 0


def _cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = SyntheticSpec.from_dict(json.load(f))
    ds = generate_synthetic(spec, seed=args.seed)
    save_dataset(ds, args.out)
    print(f"{args.out}: {len(ds)} records, dim={ds.embedding_dim}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValidationError, DatasetError, PartitionerMismatchError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - contract: unexpected failures exit 2
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
