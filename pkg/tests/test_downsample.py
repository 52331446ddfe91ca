"""Unit tests for negative-class downsampling."""

import logging
import os
import tempfile

import numpy as np
import pandas as pd
import pytest

from downsample import (RatioConfig, SamplingError, build_ratio_grid, derive_rng, downsample, summarize_grid,
                        write_sample_manifest)


def labeled(n_pos, n_neg, prefix="L"):
    n = n_pos + n_neg
    return pd.DataFrame({
        "LOAN_ID": [f"{prefix}{i}" for i in range(n)],
        "ORIG_DATE": ["012023"] * n,
        "ACT_PERIOD": ["032023"] * n,
        "LABEL": [1] * n_pos + [0] * n_neg,
    })


class TestDownsample:
    """Tests for a single split at one ratio."""

    def test_keeps_all_positives_and_draws_ratio(self, balanced_split):
        """Test 3 positives and 10 negatives at x=2 give 3 + 6 rows."""
        result = downsample(balanced_split, 2, seed=0)
        assert result.positives == 3
        assert result.negatives == 6
        assert int(result.rows["LABEL"].sum()) == 3
        assert len(result.rows) == 9
        assert not result.exhausted

    def test_exhausted_pool_keeps_every_negative(self, caplog):
        """Test 3 positives and 4 negatives at x=5 keep all 4 with a warning."""
        split = labeled(3, 4)
        with caplog.at_level(logging.WARNING, logger="downsample"):
            result = downsample(split, 5, seed=0)
        assert result.negatives == 4
        assert result.exhausted
        assert result.achieved_ratio == pytest.approx(4 / 3)
        assert "exhausted" in caplog.text

    def test_same_seed_same_sequence(self, balanced_split):
        a = downsample(balanced_split, 2, seed=42).rows
        b = downsample(balanced_split, 2, seed=42).rows
        assert a["LOAN_ID"].tolist() == b["LOAN_ID"].tolist()

    def test_rows_are_drawn_without_replacement(self):
        result = downsample(labeled(20, 500), 10, seed=3)
        assert result.rows["LOAN_ID"].is_unique
        assert len(result.rows) == 220

    def test_original_index_labels_survive(self, balanced_split):
        result = downsample(balanced_split, 1, seed=5)
        pd.testing.assert_frame_equal(result.rows, balanced_split.loc[result.rows.index])

    def test_zero_positives_is_an_error(self):
        with pytest.raises(SamplingError, match="no positives"):
            downsample(labeled(0, 5), 1, seed=0)

    def test_accepts_generator(self, balanced_split):
        result = downsample(balanced_split, 2, derive_rng(0, 2, 0))
        assert result.negatives == 6


class TestRatioConfig:
    """Tests for ratio validation."""

    def test_defaults(self):
        assert RatioConfig().ratios == (1, 2, 5, 10)

    @pytest.mark.parametrize("ratios", [(), (0,), (2, -1), (1.5,)])
    def test_rejects_bad_ratios(self, ratios):
        with pytest.raises(ValueError):
            RatioConfig(ratios=ratios)


class TestRatioGrid:
    """Tests for the ratio grid over three splits."""

    @pytest.fixture
    def splits(self):
        return labeled(12, 300, "T"), labeled(5, 30, "V"), labeled(4, 500, "X")

    def test_negative_counts_follow_ratio(self, splits):
        """Test negatives equal min(x * #pos, #neg) for every ratio and split."""
        train, validation, test = splits
        grid = build_ratio_grid(train, validation, test, RatioConfig(seed=9))
        assert sorted(grid) == [1, 2, 5, 10]
        for x, cell in grid.items():
            for split, frame in ((train, cell.train), (validation, cell.validation)):
                n_pos = int(split["LABEL"].sum())
                n_neg = len(split) - n_pos
                assert int((frame["LABEL"] == 0).sum()) == min(x * n_pos, n_neg)

    def test_positives_identical_across_ratios(self, splits):
        train, validation, test = splits
        grid = build_ratio_grid(train, validation, test)
        expected = set(train.loc[train["LABEL"] == 1, "LOAN_ID"])
        for cell in grid.values():
            assert set(cell.train.loc[cell.train["LABEL"] == 1, "LOAN_ID"]) == expected

    def test_test_split_never_downsampled(self, splits):
        train, validation, test = splits
        grid = build_ratio_grid(train, validation, test)
        for cell in grid.values():
            assert cell.test is test

    def test_exhaustion_noted(self, splits):
        train, validation, test = splits
        grid = build_ratio_grid(train, validation, test)
        assert grid[10].notes["Validation"]["exhausted"]
        assert not grid[10].notes["Train"]["exhausted"]

    def test_identical_seed_identical_draws(self, splits):
        first = build_ratio_grid(*splits, RatioConfig(seed=4))
        second = build_ratio_grid(*splits, RatioConfig(seed=4))
        other = build_ratio_grid(*splits, RatioConfig(seed=5))
        for x in first:
            assert first[x].train["LOAN_ID"].tolist() == second[x].train["LOAN_ID"].tolist()
        assert any(first[x].train["LOAN_ID"].tolist() != other[x].train["LOAN_ID"].tolist() for x in first)

    def test_summary_and_manifest(self, splits):
        grid = build_ratio_grid(*splits, RatioConfig(ratios=(1, 2)))
        summary = summarize_grid(grid)
        assert summary.loc[(summary["ratio"] == "1:2") & (summary["split"] == "Train"), "negatives"].item() == 24
        assert summary.loc[(summary["ratio"] == "1:1") & (summary["split"] == "Test"), "negatives"].item() == 500
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, 'samples', 'sample_manifest.csv')
            write_sample_manifest(grid, path)
            manifest = pd.read_csv(path, dtype={"ORIG_DATE": str, "ACT_PERIOD": str})
        assert manifest.columns.tolist() == ["ratio", "split", "LOAN_ID", "ORIG_DATE", "ACT_PERIOD", "LABEL"]
        assert len(manifest) == (12 + 12) + (5 + 5) + (12 + 24) + (5 + 10)
        assert np.array_equal(sorted(manifest["ratio"].unique()), [1, 2])


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
