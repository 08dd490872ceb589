"""Command-line workflows end to end, driven through main(argv)."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qacal.cli import main
from qacal.dataset import Dataset, load_dataset, save_dataset
from qacal.guarantees import epsilon_bound_qa


def _write_dataset(path, n=400, seed=0, dim=2):
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, dim))
    h = rng.uniform(0.02, 0.98, n)
    p = np.clip(h + np.where(emb[:, 0] > 0, 0.15, -0.15), 0, 1)
    y = (rng.uniform(0, 1, n) < p).astype(float)
    ds = Dataset(
        ids=[f"r{i}" for i in range(n)],
        embeddings=emb,
        confidences=h,
        labels=y,
        label_kinds=["ground_truth"] * n,
    )
    save_dataset(ds, str(path))
    return ds


class TestTopLevel:
    def test_version_exits_zero(self, capsys):
        assert main(["--version"]) == 0
        assert "qacal" in capsys.readouterr().out

    def test_no_command_is_a_usage_error(self, capsys):
        assert main([]) == 1

    def test_unknown_flag_is_a_usage_error(self, capsys):
        assert main(["ingest", "--bogus"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unexpected_failures_exit_two(self, monkeypatch, tmp_path, capsys):
        import qacal.cli as cli

        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=10)
        monkeypatch.setattr(
            cli, "load_dataset", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("boom"))
        )
        assert main(["ingest", "--in", str(data)]) == 2
        assert "runtime failure" in capsys.readouterr().err


class TestIngest:
    def test_valid_file_reports_shape(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=25, dim=3)
        assert main(["ingest", "--in", str(data), "--expect-dim", "3"]) == 0
        out = capsys.readouterr().out
        assert "ok: 25 records" in out
        assert "dim=3" in out

    def test_invalid_record_exits_one_with_line_number(self, tmp_path, capsys):
        data = tmp_path / "bad.jsonl"
        data.write_text('{"id": "a", "embedding": [1.0], "confidence": 2.0, "label": 1.0}\n')
        assert main(["ingest", "--in", str(data)]) == 1
        assert ":1:" in capsys.readouterr().err

    def test_missing_file_exits_one(self, tmp_path, capsys):
        assert main(["ingest", "--in", str(tmp_path / "nope.jsonl")]) == 1


class TestSplit:
    def test_writes_four_files_with_suffixes(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=100)
        assert main(["split", "--in", str(data), "--seed", "1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert [os.path.basename(p) for p in lines] == [
            "d.tree.jsonl", "d.cal.jsonl", "d.tune.jsonl", "d.test.jsonl"
        ]
        assert len(load_dataset(lines[0])) == 20
        assert len(load_dataset(lines[1])) == 60

    def test_env_seed_matches_explicit_flag(self, tmp_path, capsys, monkeypatch):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=60)
        assert main(["split", "--in", str(data), "--seed", "5",
                     "--out-stem", str(tmp_path / "a")]) == 0
        monkeypatch.setenv("QACAL_SEED", "5")
        assert main(["split", "--in", str(data),
                     "--out-stem", str(tmp_path / "b")]) == 0
        with open(tmp_path / "a.cal.jsonl", "rb") as f:
            one = f.read()
        with open(tmp_path / "b.cal.jsonl", "rb") as f:
            two = f.read()
        assert one == two

    def test_bad_fractions_exit_one(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=40)
        assert main(["split", "--in", str(data), "--fractions", "0.5,oops"]) == 1


class TestMakePartitioner:
    def test_kdtree_requires_depth(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=40)
        rc = main(["make-partitioner", "--in", str(data), "--out", str(tmp_path / "p.json")])
        assert rc == 1
        assert "--depth is required" in capsys.readouterr().err

    def test_kmeans_requires_k(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=40)
        rc = main(["make-partitioner", "--in", str(data), "--kind", "kmeans",
                   "--out", str(tmp_path / "p.json")])
        assert rc == 1
        assert "--k is required" in capsys.readouterr().err

    def test_builds_both_kinds(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=64)
        assert main(["make-partitioner", "--in", str(data), "--depth", "2",
                     "--out", str(tmp_path / "kd.json")]) == 0
        assert "4 partitions" in capsys.readouterr().out
        assert main(["make-partitioner", "--in", str(data), "--kind", "kmeans",
                     "--k", "3", "--seed", "0", "--out", str(tmp_path / "km.json")]) == 0
        assert "3 partitions" in capsys.readouterr().out


class TestFitPredictEvaluate:
    @pytest.fixture()
    def workspace(self, tmp_path):
        train = tmp_path / "train.jsonl"
        test = tmp_path / "test.jsonl"
        _write_dataset(train, n=600, seed=1)
        _write_dataset(test, n=200, seed=2)
        part = tmp_path / "part.json"
        assert main(["make-partitioner", "--in", str(train), "--depth", "1",
                     "--out", str(part)]) == 0
        return tmp_path, train, test, part

    def test_partitioned_method_requires_partitioner_and_b(self, workspace, capsys):
        tmp_path, train, _, part = workspace
        rc = main(["fit", "--method", "qab", "--train", str(train),
                   "--out", str(tmp_path / "m.json")])
        assert rc == 1
        assert "--partitioner is required for method 'qab'" in capsys.readouterr().err
        rc = main(["fit", "--method", "qab", "--train", str(train),
                   "--partitioner", str(part), "--out", str(tmp_path / "m.json")])
        assert rc == 1
        assert "--b is required" in capsys.readouterr().err

    def test_umd_requires_a_bin_count(self, workspace, capsys):
        tmp_path, train, _, _ = workspace
        rc = main(["fit", "--method", "umd", "--train", str(train),
                   "--out", str(tmp_path / "m.json")])
        assert rc == 1
        assert "--n-bins" in capsys.readouterr().err

    def test_qab_bundle_roundtrip(self, workspace, capsys):
        tmp_path, train, test, part = workspace
        bundle = tmp_path / "qab.json"
        assert main(["fit", "--method", "qab", "--train", str(train),
                     "--partitioner", str(part), "--b", "60",
                     "--out", str(bundle)]) == 0
        with open(bundle) as f:
            manifest = json.load(f)
        assert manifest["format"] == "qacal.bundle.v1"
        assert manifest["method"] == "qab"
        assert manifest["b"] == 60
        assert (tmp_path / "qab.table.json").exists()
        assert (tmp_path / "qab.partitioner.json").exists()

        preds = tmp_path / "preds.jsonl"
        assert main(["predict", "--bundle", str(bundle), "--in", str(test),
                     "--out", str(preds)]) == 0
        with open(preds) as f:
            rows = [json.loads(line) for line in f]
        assert len(rows) == 200
        assert all(0.0 <= r["calibrated"] <= 1.0 for r in rows)

        report = tmp_path / "report.json"
        csv_path = tmp_path / "report.csv"
        pp_path = tmp_path / "pp.csv"
        assert main(["evaluate", "--in", str(preds), "--partitioner", str(part),
                     "--out", str(report), "--csv", str(csv_path),
                     "--per-partition-csv", str(pp_path)]) == 0
        out = capsys.readouterr().out
        assert "ce_beta=" in out and "auac=" in out
        with open(report) as f:
            rep = json.load(f)
        assert rep["n"] == 200
        with open(csv_path) as f:
            lines = f.read().splitlines()
        assert lines[0].startswith("n,ce,")
        with open(pp_path) as f:
            assert f.readline().strip() == "partition,n,ce"

    def test_platt_bundle_has_scaler_only(self, workspace):
        tmp_path, train, test, _ = workspace
        bundle = tmp_path / "platt.json"
        assert main(["fit", "--method", "platt", "--train", str(train),
                     "--out", str(bundle)]) == 0
        with open(bundle) as f:
            manifest = json.load(f)
        assert manifest["table_path"] is None
        assert manifest["scaler_path"] is not None
        preds = tmp_path / "platt_preds.jsonl"
        assert main(["predict", "--bundle", str(bundle), "--in", str(test),
                     "--out", str(preds)]) == 0

    def test_hierarchical_bundle_records_proxy_bias(self, workspace):
        tmp_path, train, _, part = workspace
        bundle = tmp_path / "hs.json"
        assert main(["fit", "--method", "hs-qab", "--train", str(train),
                     "--partitioner", str(part), "--b", "30", "--seed", "0",
                     "--out", str(bundle)]) == 0
        with open(bundle) as f:
            manifest = json.load(f)
        assert manifest["nu_hat"] is not None
        assert 0.0 <= manifest["nu_hat"] <= 1.0
        assert (tmp_path / "hs.table.json").exists()
        assert (tmp_path / "hs.scaler.json").exists()

    def test_evaluate_on_raw_confidence_field(self, workspace):
        tmp_path, _, test, part = workspace
        report = tmp_path / "raw.json"
        assert main(["evaluate", "--in", str(test), "--partitioner", str(part),
                     "--field", "confidence", "--out", str(report)]) == 0

    def test_predicting_with_wrong_bundle_format_fails(self, workspace, capsys):
        tmp_path, _, test, _ = workspace
        fake = tmp_path / "fake.json"
        fake.write_text('{"format": "other.v1"}\n')
        assert main(["predict", "--bundle", str(fake), "--in", str(test),
                     "--out", str(tmp_path / "x.jsonl")]) == 1


class TestBound:
    def test_direct_evaluation_prints_epsilon(self, capsys):
        assert main(["bound", "--n", "1000", "--b", "250", "--alpha", "0.1"]) == 0
        want = epsilon_bound_qa(1000, 250, 0.1)
        assert f"epsilon={want:.6f}" in capsys.readouterr().out

    def test_inversion_prints_smallest_b(self, capsys):
        assert main(["bound", "--n", "1000", "--alpha", "0.1",
                     "--eps-target", "0.1"]) == 0
        assert "b=304" in capsys.readouterr().out

    def test_infeasible_inversion_says_so(self, capsys):
        assert main(["bound", "--n", "100", "--eps-target", "0.01"]) == 0
        assert "infeasible" in capsys.readouterr().out

    def test_single_partition_variant(self, capsys):
        assert main(["bound", "--n", "1000", "--n-bins", "10"]) == 0
        assert "epsilon=" in capsys.readouterr().out

    def test_no_mode_selected_is_an_error(self, capsys):
        assert main(["bound", "--n", "1000"]) == 1

    def test_curve_csv(self, tmp_path):
        out = tmp_path / "curve.csv"
        assert main(["bound", "--n", "1000", "--curve-out", str(out),
                     "--b-range", "10,50,10", "--nus", "0.0,0.05"]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "n,b,alpha,nu,epsilon"
        assert len(lines) == 1 + 5 * 2


class TestSynthAndSimulate:
    def _spec_file(self, tmp_path):
        spec = {
            "n_partitions": 2,
            "points_per_partition": 150,
            "miscalibration": [[0.3, 1.5], [-0.3, 0.7]],
            "seed": 3,
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        return path

    def test_synth_writes_a_loadable_dataset(self, tmp_path, capsys):
        spec = self._spec_file(tmp_path)
        out = tmp_path / "synth.jsonl"
        assert main(["synth", "--spec", str(spec), "--out", str(out)]) == 0
        assert "300 records" in capsys.readouterr().out
        ds = load_dataset(str(out))
        assert len(ds) == 300

    def test_simulate_reports_coverage(self, tmp_path, capsys):
        spec = self._spec_file(tmp_path)
        csv_out = tmp_path / "trials.csv"
        assert main(["simulate", "--spec", str(spec), "--depth", "1", "--b", "30",
                     "--trials", "3", "--out-csv", str(csv_out)]) == 0
        out = capsys.readouterr().out
        assert "coverage=" in out and "trials=3" in out
        lines = csv_out.read_text().splitlines()
        assert lines[0] == "trial,worst_gap,epsilon,passed"
        assert len(lines) == 4


class TestSweepAndExport:
    def test_sweep_then_export_is_byte_stable(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        _write_dataset(data, n=600, seed=4)
        config = {
            "seeds": [0],
            "depths": [1],
            "eval_depth": 1,
            "b_grid": [30, 60],
            "n_bins_grid": [4],
            "variance_grid": [1.0],
            "methods": ["none", "umd", "qab", "hs-qab"],
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config))
        run_dir = tmp_path / "run"
        assert main(["sweep", "--data", str(data), "--config", str(cfg_path),
                     "--out-dir", str(run_dir), "--threads", "2"]) == 0
        for name in ("results.json", "results.csv", "summary.csv", "per_partition.csv"):
            assert (run_dir / name).exists(), name

        export_dir = tmp_path / "export"
        assert main(["export-report", "--run-dir", str(run_dir),
                     "--out-dir", str(export_dir)]) == 0
        for name in ("results.csv", "summary.csv", "per_partition.csv", "results.json"):
            with open(run_dir / name, "rb") as f:
                one = f.read()
            with open(export_dir / name, "rb") as f:
                two = f.read()
            assert one == two, name

    def test_export_requires_results_json(self, tmp_path, capsys):
        assert main(["export-report", "--run-dir", str(tmp_path)]) == 1
        assert "results.json" in capsys.readouterr().err


class TestInstalledEntryPoint:
    def test_console_script_answers_version(self):
        proc = subprocess.run(
            ["qacal", "--version"], capture_output=True, text=True, timeout=60
        )
        assert proc.returncode == 0
        assert "qacal" in proc.stdout
