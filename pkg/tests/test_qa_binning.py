"""Partition-conditional binning: routing, fallback, and the root table."""

import numpy as np
import pytest

from qacal.dataset import Dataset
from qacal.partitioner import build_kdtree
from qacal.qa_binning import (
    CalibratorTable,
    PartitionerMismatchError,
    fit_qa_binning,
    load_table,
    predict_qa_binning,
    predict_qa_binning_many,
    save_table,
)
from qacal.umd import apply_umd, fit_umd


def _dataset(n=400, dim=2, seed=0, miscal=None):
    """Labels Bernoulli(h) by default; `miscal` maps (h, side) -> p."""
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, dim))
    h = rng.uniform(0, 1, n)
    if miscal is None:
        p = h
    else:
        p = miscal(h, emb)
    y = (rng.uniform(0, 1, n) < p).astype(float)
    return Dataset(
        ids=[f"r{i}" for i in range(n)],
        embeddings=emb,
        confidences=h,
        labels=y,
        label_kinds=["ground_truth"] * n,
    )


class TestFit:
    def test_root_bin_count_is_floor_n_over_b(self):
        ds = _dataset(n=405)
        part = build_kdtree(ds.embeddings, depth=1)
        table = fit_qa_binning(ds, part, b=100)
        assert table.root.n_bins == 4
        assert table.b_min == 100

    def test_per_partition_bin_counts_follow_partition_sizes(self):
        ds = _dataset(n=400)
        part = build_kdtree(ds.embeddings, depth=2)
        table = fit_qa_binning(ds, part, b=30)
        assignments = part.assign_many(ds.embeddings)
        for s, cal in table.per_partition.items():
            n_s = int(np.sum(assignments == s))
            assert cal.n_bins == n_s // 30
            assert table.n_fit[s] == n_s

    def test_small_partitions_are_skipped_not_failed(self):
        ds = _dataset(n=40)
        part = build_kdtree(ds.embeddings, depth=3)  # ~5 records per leaf
        table = fit_qa_binning(ds, part, b=8)
        assert table.root.n_bins == 5
        # leaves have 5 records each, 5 // 8 == 0: no per-partition entry
        assert table.per_partition == {}

    def test_depth_zero_table_equals_plain_binning(self):
        ds = _dataset(n=300, seed=3)
        part = build_kdtree(ds.embeddings, depth=0)
        table = fit_qa_binning(ds, part, b=25)
        plain = fit_umd(ds.confidences, ds.labels, 300 // 25)
        np.testing.assert_array_equal(table.root.edges, plain.edges)
        np.testing.assert_array_equal(table.root.bin_means, plain.bin_means)
        # the single partition holds every record, so its calibrator is the root
        np.testing.assert_array_equal(table.per_partition[0].edges, plain.edges)

    def test_proxy_targets_override_labels(self):
        ds = _dataset(n=200, seed=4)
        part = build_kdtree(ds.embeddings, depth=0)
        proxy = np.clip(ds.confidences * 0.5, 0, 1)
        table = fit_qa_binning(ds, part, b=50, targets=proxy)
        want = fit_umd(ds.confidences, proxy, 4)
        np.testing.assert_array_equal(table.root.bin_means, want.bin_means)

    def test_b_below_two_rejected(self):
        ds = _dataset(n=50)
        part = build_kdtree(ds.embeddings, depth=0)
        with pytest.raises(ValueError, match="b must be"):
            fit_qa_binning(ds, part, b=1)

    def test_too_few_records_rejected(self):
        ds = _dataset(n=5)
        part = build_kdtree(ds.embeddings, depth=0)
        with pytest.raises(ValueError, match="at least"):
            fit_qa_binning(ds, part, b=10)


class TestPredict:
    def test_records_route_to_their_partition_calibrator(self):
        ds = _dataset(n=600, seed=5)
        part = build_kdtree(ds.embeddings, depth=1)
        table = fit_qa_binning(ds, part, b=50)
        assignments = part.assign_many(ds.embeddings)
        got = predict_qa_binning_many(table, part, ds.embeddings, ds.confidences)
        for s in (0, 1):
            mask = assignments == s
            want = apply_umd(table.per_partition[s], ds.confidences[mask])
            np.testing.assert_array_equal(got[mask], want)

    def test_out_of_bounds_queries_fall_back_to_root(self):
        ds = _dataset(n=200, seed=6)
        part = build_kdtree(ds.embeddings, depth=1)
        table = fit_qa_binning(ds, part, b=40)
        far = np.full((3, 2), 1e6)
        h = np.array([0.1, 0.5, 0.9])
        got = predict_qa_binning_many(table, part, far, h)
        np.testing.assert_array_equal(got, apply_umd(table.root, h))

    def test_skipped_partitions_fall_back_to_root(self):
        # depth 2 with b sized so only the largest leaf clears the floor
        n = 101  # leaves 26/25/25/25
        ds = _dataset(n=n, seed=7)
        part = build_kdtree(ds.embeddings, depth=2)
        table = fit_qa_binning(ds, part, b=26)
        assignments = part.assign_many(ds.embeddings)
        sizes = np.bincount(assignments, minlength=4)
        skipped = [s for s in range(4) if sizes[s] // 26 == 0]
        assert skipped  # the three 25-record leaves
        got = predict_qa_binning_many(table, part, ds.embeddings, ds.confidences)
        for s in skipped:
            mask = assignments == s
            np.testing.assert_array_equal(
                got[mask], apply_umd(table.root, ds.confidences[mask])
            )

    def test_scalar_entry_point_matches_vector(self):
        ds = _dataset(n=300, seed=8)
        part = build_kdtree(ds.embeddings, depth=1)
        table = fit_qa_binning(ds, part, b=30)
        vec = predict_qa_binning_many(table, part, ds.embeddings[:5], ds.confidences[:5])
        for i in range(5):
            got = predict_qa_binning(table, part, ds.embeddings[i], float(ds.confidences[i]))
            assert got == vec[i]

    def test_wrong_partitioner_is_refused(self):
        ds = _dataset(n=200, seed=9)
        part = build_kdtree(ds.embeddings, depth=1)
        other = build_kdtree(ds.embeddings, depth=2)
        table = fit_qa_binning(ds, part, b=40)
        with pytest.raises(PartitionerMismatchError):
            predict_qa_binning_many(table, other, ds.embeddings, ds.confidences)

    def test_conditional_fit_heals_partition_level_miscalibration(self):
        # two halves of embedding space with opposite label bias at the same
        # confidence: the root is blind, the per-partition bins are not
        def miscal(h, emb):
            side = (emb[:, 0] > 0).astype(float)
            return np.clip(h + np.where(side > 0, 0.25, -0.25), 0, 1)

        ds = _dataset(n=4000, seed=10, miscal=miscal)
        part = build_kdtree(ds.embeddings, depth=1)
        table = fit_qa_binning(ds, part, b=200)
        pred = predict_qa_binning_many(table, part, ds.embeddings, ds.confidences)
        root_only = apply_umd(table.root, ds.confidences)
        side = ds.embeddings[:, 0] > 0
        pred_gap = abs(np.mean(pred[side]) - np.mean(ds.labels[side]))
        root_gap = abs(np.mean(root_only[side]) - np.mean(ds.labels[side]))
        assert pred_gap < root_gap


class TestSerialization:
    def test_roundtrip_preserves_bits_and_routing(self, tmp_path):
        ds = _dataset(n=500, seed=11)
        part = build_kdtree(ds.embeddings, depth=2)
        table = fit_qa_binning(ds, part, b=40)
        path = str(tmp_path / "table.json")
        save_table(table, path)
        back = load_table(path)
        assert back.b_min == table.b_min
        assert back.partitioner_ref == table.partitioner_ref
        assert set(back.per_partition) == set(table.per_partition)
        np.testing.assert_array_equal(back.root.edges, table.root.edges)
        got = predict_qa_binning_many(back, part, ds.embeddings, ds.confidences)
        want = predict_qa_binning_many(table, part, ds.embeddings, ds.confidences)
        np.testing.assert_array_equal(got, want)

    def test_format_guard(self):
        with pytest.raises(ValueError, match="format"):
            CalibratorTable.from_dict({"format": "qacal.table.v2"})
