"""Percentile binarization: cutoff fitting, encoding, and table transforms."""

import math

import numpy as np
import pytest

from latticesurv import quantize
from latticesurv.errors import DataError


def _oracle_cutoffs(column, grid):
    """Nearest-rank percentile cutoffs computed directly on the sorted column."""
    ordered = np.sort(np.asarray(column, dtype=float))
    n = ordered.size
    lo = ordered[0]
    picks = []
    for q in sorted(grid):
        v = float(ordered[math.ceil((n - 1) * q / 100.0)])
        if v > lo and (not picks or v > picks[-1]):
            picks.append(v)
    return picks


class TestFitCutoffs:
    def test_skewed_column_with_heavy_ties(self):
        col = [0, 0, 0, 1, 2, 5, 100]
        cuts = quantize.fit_cutoffs(col, percentile_grid=(25, 50, 75))
        assert cuts == [1.0, 5.0]

    def test_two_distinct_values(self):
        assert quantize.fit_cutoffs([1.0, 2.0], percentile_grid=(50,)) == [2.0]

    def test_constant_column_returns_empty(self):
        assert quantize.fit_cutoffs([3.0] * 10) == []

    def test_collapsed_grid_falls_back_to_one_separating_cutoff(self):
        # 99 zeros and a single large value: every decile lands on the minimum
        col = [0.0] * 99 + [7.5]
        cuts = quantize.fit_cutoffs(col)
        assert cuts == [7.5]

    def test_matches_sorted_array_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(300):
            kind = trial % 3
            n = int(rng.integers(5, 120))
            if kind == 0:
                col = rng.normal(size=n)
            elif kind == 1:
                col = rng.integers(0, 5, size=n).astype(float)
            else:
                col = np.exp(rng.normal(0, 2, size=n))
            if np.min(col) == np.max(col):
                continue
            got = quantize.fit_cutoffs(col)
            want = _oracle_cutoffs(col, quantize.DEFAULT_GRID)
            if not want:
                assert len(got) == 1
                continue
            assert got == want

    def test_cutoffs_strictly_increasing(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            col = rng.integers(0, 8, size=60).astype(float)
            if col.min() == col.max():
                continue
            cuts = quantize.fit_cutoffs(col)
            assert all(b > a for a, b in zip(cuts, cuts[1:]))

    def test_nan_rejected(self):
        with pytest.raises(DataError):
            quantize.fit_cutoffs([1.0, np.nan, 2.0])

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            quantize.fit_cutoffs([1.0, 2.0], percentile_grid=(0,))
        with pytest.raises(ValueError):
            quantize.fit_cutoffs([1.0, 2.0], percentile_grid=(100,))
        with pytest.raises(ValueError):
            quantize.fit_cutoffs([1.0, 2.0], percentile_grid=())

    def test_empty_column_rejected(self):
        with pytest.raises(ValueError):
            quantize.fit_cutoffs([])


class TestEncode:
    def test_staircase_shape(self):
        got = quantize.encode(np.array([0.0, 1.5, 10.0]), [1.0, 5.0])
        np.testing.assert_array_equal(got, [[0, 0], [1, 0], [1, 1]])

    def test_boundary_is_inclusive(self):
        np.testing.assert_array_equal(quantize.encode(5.0, [5.0]), [1.0])

    def test_rows_are_prefixes_of_ones(self):
        """Each encoded row must be 1...10...0, never 0 before a 1."""
        rng = np.random.default_rng(3)
        values = rng.normal(size=400)
        cuts = quantize.fit_cutoffs(values)
        rows = quantize.encode(values, cuts)
        diffs = np.diff(rows, axis=-1)
        assert np.all(diffs <= 0)

    def test_monotone_in_the_underlying_value(self):
        rng = np.random.default_rng(5)
        values = np.sort(rng.normal(size=200))
        cuts = quantize.fit_cutoffs(values)
        rows = quantize.encode(values, cuts)
        assert np.all(np.diff(rows, axis=0) >= 0)

    def test_unordered_cutoffs_rejected(self):
        with pytest.raises(ValueError):
            quantize.encode(np.array([1.0]), [2.0, 1.0])


class TestTableFit:
    def test_constant_columns_dropped_with_reason(self):
        table = {"age": [60.0, 70, 80, 90], "flag": [1.0, 1, 1, 1]}
        qmap = quantize.fit(table, percentile_grid=(50,))
        assert "flag" not in qmap.cutoffs
        assert qmap.dropped == {"flag": "constant column"}

    def test_no_constant_output_columns_on_training_data(self):
        rng = np.random.default_rng(11)
        table = {
            "a": rng.normal(size=50),
            "b": rng.integers(0, 3, size=50).astype(float),
            "c": np.full(50, 2.0),
        }
        qmap = quantize.fit(table)
        matrix, names = quantize.transform(table, qmap)
        assert matrix.shape[0] == 50
        assert len(names) == matrix.shape[1]
        col_means = matrix.mean(axis=0)
        assert np.all(col_means > 0) and np.all(col_means < 1)

    def test_unequal_lengths_rejected(self):
        with pytest.raises(DataError):
            quantize.fit({"a": [1.0, 2.0], "b": [1.0, 2.0, 3.0]})

    def test_column_names_embed_cutoffs(self):
        qmap = quantize.QuantizationMap(cutoffs={"age": [60.0, 75.0]})
        assert qmap.column_names() == ["age>=60", "age>=75"]
        assert qmap.n_columns == 2


class TestTransform:
    def test_missing_feature_rejected(self):
        qmap = quantize.QuantizationMap(cutoffs={"age": [60.0]})
        with pytest.raises(DataError):
            quantize.transform({"weight": [70.0]}, qmap)

    def test_nan_rejected(self):
        qmap = quantize.QuantizationMap(cutoffs={"age": [60.0]})
        with pytest.raises(DataError):
            quantize.transform({"age": [np.nan]}, qmap)

    def test_row_mismatch_rejected(self):
        qmap = quantize.QuantizationMap(cutoffs={"a": [1.0], "b": [1.0]})
        with pytest.raises(DataError):
            quantize.transform({"a": [0.0, 2.0], "b": [0.0]}, qmap)

    def test_extra_columns_ignored(self):
        qmap = quantize.QuantizationMap(cutoffs={"a": [1.0]})
        matrix, names = quantize.transform({"a": [0.0, 2.0], "junk": [9.0, 9.0]}, qmap)
        np.testing.assert_array_equal(matrix, [[0.0], [1.0]])
        assert names == ["a>=1"]

    def test_round_trip_through_disk(self, tmp_path):
        rng = np.random.default_rng(13)
        table = {"x": rng.normal(size=80), "y": rng.exponential(size=80)}
        qmap = quantize.fit(table)
        path = tmp_path / "qmap.json"
        qmap.save(path)
        loaded = quantize.QuantizationMap.load(path)
        assert loaded.cutoffs == qmap.cutoffs
        assert loaded.dropped == qmap.dropped
        m1, n1 = quantize.transform(table, qmap)
        m2, n2 = quantize.transform(table, loaded)
        np.testing.assert_array_equal(m1, m2)
        assert n1 == n2
