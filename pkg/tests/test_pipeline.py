"""Benchmark sweep mechanics: grids, tuning, determinism, and outputs."""

import json

import numpy as np
import pytest

from qacal.dataset import Dataset
from qacal.guarantees import choose_b, epsilon_bound_umd
from qacal.metrics import MetricsReport
from qacal.pipeline import (
    ALL_METHODS,
    METHOD_HSQAB,
    METHOD_NONE,
    METHOD_PLATT,
    METHOD_QAB,
    METHOD_SCALE_BIN,
    METHOD_SQAB,
    METHOD_UMD,
    RunResult,
    SweepConfig,
    derive_b_grid,
    derive_n_bins_grid,
    envelope_pairs,
    results_rows,
    run_sweep,
    summarize,
    write_outputs,
)


def _dataset(n=1200, seed=0):
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, 2))
    h = rng.uniform(0.02, 0.98, n)
    shift = np.where(emb[:, 0] > 0, 0.15, -0.15)
    p = np.clip(h + shift, 0, 1)
    y = (rng.uniform(0, 1, n) < p).astype(float)
    return Dataset(
        ids=[f"r{i}" for i in range(n)],
        embeddings=emb,
        confidences=h,
        labels=y,
        label_kinds=["ground_truth"] * n,
    )


def _small_config(**overrides):
    base = dict(
        seeds=(0, 1),
        depths=(1, 2),
        eval_depth=1,
        b_grid=(40, 60),
        n_bins_grid=(4, 8),
        variance_grid=(0.1, 1.0),
    )
    base.update(overrides)
    return SweepConfig(**base)


class TestConfig:
    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown methods"):
            SweepConfig(methods=("qab", "isotonic"))

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown config key"):
            SweepConfig.from_dict({"seeds": [0], "bogus": 1})

    def test_dict_roundtrip_normalizes_lists(self):
        cfg = _small_config()
        back = SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg


class TestGrids:
    def test_explicit_b_grid_is_sorted_and_deduped(self):
        cfg = SweepConfig(b_grid=(60, 40, 60))
        assert derive_b_grid(720, cfg) == (40, 60)

    def test_default_b_grid_inverts_the_conditional_bound(self):
        cfg = SweepConfig(b_grid=None)
        got = derive_b_grid(4000, cfg)
        want = sorted(
            {
                choose_b(4000, cfg.alpha, nu, cfg.eps_target)
                for nu in cfg.nu_grid
            }
            - {None}
        )
        assert got == tuple(want)
        assert all(
            epsilon_bound_umd(4000, 1, cfg.alpha) > 0 for _ in (0,)
        )  # smoke: bound callable

    def test_default_n_bins_grid_inverts_the_marginal_bound(self):
        cfg = SweepConfig(n_bins_grid=None)
        got = derive_n_bins_grid(2000, cfg)
        assert got
        for n_bins in got:
            eps_here = epsilon_bound_umd(2000, n_bins, cfg.alpha)
            assert any(eps_here <= e for e in cfg.eps_grid_umd)
        # each entry is maximal for some epsilon level
        for eps in cfg.eps_grid_umd:
            feas = [
                B for B in range(1, 1001)
                if epsilon_bound_umd(2000, B, cfg.alpha) <= eps
            ]
            if feas:
                assert max(feas) in got

    def test_envelope_keeps_pairs_with_reasonable_bin_counts(self):
        pairs = envelope_pairs(720, depths=(1, 2), b_grid=(40, 60), lo=3, hi=10)
        assert pairs == [(1, 40), (1, 60), (2, 40), (2, 60)]
        # 360 // 40 = 9 and 180 // 60 = 3 are inside; b=200 at depth 2 is not
        assert envelope_pairs(720, (2,), (200,), 3, 10) == []


@pytest.fixture(scope="module")
def sweep():
    ds = _dataset()
    cfg = _small_config()
    return ds, cfg, run_sweep(ds, cfg, threads=1)


class TestSweep:
    def test_every_cell_is_present_in_method_major_order(self, sweep):
        _, cfg, results = sweep
        got = [(r.method, r.seed) for r in results]
        want = [(m, s) for m in cfg.methods for s in cfg.seeds]
        assert got == want

    def test_reports_score_the_test_split(self, sweep):
        ds, _, results = sweep
        n_test = len(ds) // 10
        assert all(r.report.n == n_test for r in results)

    def test_params_match_each_method_shape(self, sweep):
        _, _, results = sweep
        for r in results:
            if r.method in (METHOD_NONE, METHOD_PLATT):
                assert r.params == {}
            elif r.method in (METHOD_UMD, METHOD_SCALE_BIN):
                assert set(r.params) == {"n_bins"}
                assert r.params["n_bins"] in (4, 8)
            elif r.method == METHOD_QAB or r.method == METHOD_SQAB:
                assert set(r.params) == {"depth", "b"}
                assert (r.params["depth"], r.params["b"]) in [
                    (1, 40), (1, 60), (2, 40), (2, 60)
                ]
            else:
                assert r.method == METHOD_HSQAB
                assert set(r.params) == {"depth", "b", "sigma_u2", "sigma_v2"}
                assert r.params["sigma_u2"] in (0.1, 1.0)

    def test_tuning_reports_the_winning_auac(self, sweep):
        _, _, results = sweep
        for r in results:
            assert 0.0 <= r.tune_auac <= 1.0

    def test_rerun_is_bit_identical(self, sweep):
        ds, cfg, results = sweep
        again = run_sweep(ds, cfg, threads=1)
        assert results == again

    def test_thread_pool_does_not_change_results(self, sweep):
        ds, cfg, results = sweep
        threaded = run_sweep(ds, cfg, threads=4)
        assert results == threaded

    def test_env_var_thread_count_is_honored(self, sweep, monkeypatch):
        ds, cfg, results = sweep
        monkeypatch.setenv("QACAL_THREADS", "3")
        assert run_sweep(ds, cfg) == results

    def test_empty_envelope_fails_loudly(self):
        ds = _dataset(n=600)
        cfg = _small_config(
            seeds=(0,), methods=(METHOD_QAB,), b_grid=(500,), depths=(2,), eval_depth=2
        )
        with pytest.raises(ValueError, match="envelope"):
            run_sweep(ds, cfg, threads=1)


class TestOutputs:
    def _fake_results(self):
        def rep(ce, ce_beta):
            return MetricsReport(
                n=100, ce=ce, ce_beta=ce_beta, mce=ce * 2, mce_beta=ce_beta * 2,
                auac=0.9, per_partition={0: (60, ce), 1: (40, ce_beta)},
                binning="exact-values(5)",
            )

        return [
            RunResult("qab", 0, {"depth": 1, "b": 40}, 0.91, rep(0.02, 0.05)),
            RunResult("qab", 1, {"depth": 1, "b": 40}, 0.90, rep(0.04, 0.07)),
            RunResult("none", 0, {}, 0.85, rep(0.10, 0.20)),
        ]

    def test_summary_means_and_sample_std(self):
        summary = summarize(self._fake_results(), ("qab", "none", "missing"))
        assert set(summary) == {"qab", "none"}
        assert summary["qab"]["n_seeds"] == 2
        assert summary["qab"]["ce_mean"] == pytest.approx(0.03)
        assert summary["qab"]["ce_std"] == pytest.approx(np.std([0.02, 0.04], ddof=1))
        assert summary["none"]["ce_std"] == 0.0

    def test_rows_render_missing_params_as_empty(self):
        rows = results_rows(self._fake_results())
        header_len = 14
        assert all(len(row) == header_len for row in rows)
        none_row = rows[2]
        assert none_row[0] == "none"
        assert none_row[2] == "" and none_row[3] == "" and none_row[4] == ""
        assert none_row[8] == repr(0.1)

    def test_written_files_are_reproducible_bytes(self, tmp_path):
        results = self._fake_results()
        cfg = _small_config(methods=("none", "qab"))
        a = write_outputs(results, cfg, str(tmp_path / "a"))
        b = write_outputs(results, cfg, str(tmp_path / "b"))
        for key in a:
            with open(a[key], "rb") as f:
                one = f.read()
            with open(b[key], "rb") as f:
                two = f.read()
            assert one == two, key

    def test_results_json_contains_config_and_reports(self, tmp_path):
        results = self._fake_results()
        cfg = _small_config(methods=("none", "qab"))
        paths = write_outputs(results, cfg, str(tmp_path / "run"))
        with open(paths["results_json"]) as f:
            payload = json.load(f)
        assert payload["config"]["eval_depth"] == 1
        assert len(payload["results"]) == 3
        assert payload["results"][0]["report"]["n"] == 100
        assert "qab" in payload["summary"]

    def test_per_partition_csv_lists_every_partition(self, tmp_path):
        results = self._fake_results()
        cfg = _small_config(methods=("none", "qab"))
        paths = write_outputs(results, cfg, str(tmp_path / "run"))
        with open(paths["per_partition_csv"]) as f:
            lines = f.read().splitlines()
        assert lines[0] == "method,seed,partition,n,ce"
        assert len(lines) == 1 + 3 * 2
