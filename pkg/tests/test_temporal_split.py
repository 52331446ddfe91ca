"""Unit tests for the dual-cutoff temporal partition."""

import os
import tempfile
import time

import numpy as np
import pandas as pd
import pytest

from periods import Period
from temporal_split import (DEFAULT_CUTOFFS, Cutoffs, OrderingViolation, Split, assign, assign_many,
                            partition_dataset)
from tests.conftest import loan_frame, loan_row


def region_oracle(orig: Period, act: Period, c1: Period, c2: Period) -> Split:
    """Direct evaluation of the three kept regions."""
    in_train = orig.index < c1.index and act.index < c1.index
    in_validation = c1.index <= orig.index < c2.index and c1.index <= act.index < c2.index
    in_test = orig.index >= c2.index and act.index >= c2.index
    assert in_train + in_validation + in_test <= 1
    if in_train:
        return Split.TRAIN
    if in_validation:
        return Split.VALIDATION
    if in_test:
        return Split.TEST
    return Split.DISCARD


class TestAssign:
    """Tests for single-row region assignment."""

    def test_both_before_first_cutoff_is_train(self):
        assert assign(Period(5, 2023), Period(8, 2023), DEFAULT_CUTOFFS) is Split.TRAIN

    def test_overlap_rectangle_is_discarded(self):
        assert assign(Period(5, 2023), Period(12, 2023), DEFAULT_CUTOFFS) is Split.DISCARD

    def test_validation_and_test_triangles(self):
        assert assign(Period(12, 2023), Period(3, 2024), DEFAULT_CUTOFFS) is Split.VALIDATION
        assert assign(Period(7, 2024), Period(8, 2024), DEFAULT_CUTOFFS) is Split.TEST

    def test_month_before_cutoff_is_train(self):
        """Test windows are half-open: October 2023 is strictly before November 2023."""
        assert assign(Period(10, 2023), Period(10, 2023), DEFAULT_CUTOFFS) is Split.TRAIN
        assert assign(Period(11, 2023), Period(11, 2023), DEFAULT_CUTOFFS) is Split.VALIDATION
        assert assign(Period(6, 2024), Period(6, 2024), DEFAULT_CUTOFFS) is Split.TEST

    def test_action_before_origination_raises(self):
        with pytest.raises(OrderingViolation):
            assign(Period(8, 2023), Period(5, 2023), DEFAULT_CUTOFFS)

    def test_cutoffs_must_be_ordered(self):
        with pytest.raises(ValueError):
            Cutoffs(Period(6, 2024), Period(11, 2023))
        with pytest.raises(ValueError):
            Cutoffs.from_strings("112023", "112023")


class TestRegionOracle:
    """Exhaustive comparison against the region predicates."""

    def test_exhaustive_grid_matches_oracle(self):
        """Test every (orig, act) pair with orig <= act in 2021-01..2025-12."""
        c1, c2 = DEFAULT_CUTOFFS.c1, DEFAULT_CUTOFFS.c2
        months = [Period.from_index(i) for i in range(Period(1, 2021).index, Period(12, 2025).index + 1)]
        started = time.perf_counter()
        mismatches = 0
        for i, orig in enumerate(months):
            for act in months[i:]:
                mismatches += assign(orig, act, DEFAULT_CUTOFFS) is not region_oracle(orig, act, c1, c2)
        elapsed = time.perf_counter() - started
        assert mismatches == 0
        assert elapsed < 1.0

    def test_vectorized_assignment_matches_scalar(self):
        start, end = Period(1, 2023).index, Period(12, 2024).index
        orig, act = np.meshgrid(np.arange(start, end + 1), np.arange(start, end + 1), indexing="ij")
        keep = orig <= act
        orig, act = orig[keep], act[keep]
        vectorized = assign_many(orig, act, DEFAULT_CUTOFFS)
        scalar = [assign(Period.from_index(o), Period.from_index(a), DEFAULT_CUTOFFS) for o, a in zip(orig, act)]
        assert list(vectorized) == scalar

    def test_vectorized_rejects_bad_ordering(self):
        with pytest.raises(OrderingViolation):
            assign_many(np.array([10, 20]), np.array([12, 19]), DEFAULT_CUTOFFS)


class TestPartitionDataset:
    """Tests for partitioning whole datasets."""

    def test_empty_input(self):
        result = partition_dataset([])
        assert len(result.train) == len(result.validation) == len(result.test) == 0
        assert result.discarded == 0

    def test_rows_land_in_their_regions(self, small_frame):
        result = partition_dataset(small_frame)
        assert result.train["ACT_PERIOD"].tolist() == ["082023", "092023"]
        assert result.validation["LOAN_ID"].tolist() == ["C"]
        assert result.test["LOAN_ID"].tolist() == ["D"]
        assert result.discarded == 1
        assert result.discard_keys["reason"].tolist() == ["Overlap"]

    def test_kept_rows_are_preserved_verbatim(self, small_frame):
        result = partition_dataset(small_frame)
        expected = small_frame.iloc[[0]].reset_index(drop=True)
        pd.testing.assert_frame_equal(result.train.iloc[[0]], expected)
        pd.testing.assert_frame_equal(result.test, small_frame.iloc[[4]].reset_index(drop=True))

    def test_accepts_loan_rows(self):
        rows = [loan_row("A", "052023", "082023"), loan_row("B", "072024", "082024", 1)]
        result = partition_dataset(rows)
        assert len(result.train) == 1 and len(result.test) == 1

    def test_ordering_violation_names_loan(self, small_frame):
        frame = small_frame.copy()
        frame.loc[2, "ACT_MONTH"] = frame.loc[2, "ORIG_MONTH"] - 1
        with pytest.raises(OrderingViolation, match="loan B"):
            partition_dataset(frame)

    def test_grid_counts_match_oracle(self):
        """Test split sizes over every pair in 2023-01..2024-12 match the oracle."""
        rows = []
        months = [Period.from_index(i) for i in range(Period(1, 2023).index, Period(12, 2024).index + 1)]
        for i, orig in enumerate(months):
            for act in months[i:]:
                rows.append(loan_row(f"L{orig.index}", str(orig), str(act)))
        result = partition_dataset(loan_frame(*rows))
        c1, c2 = DEFAULT_CUTOFFS.c1, DEFAULT_CUTOFFS.c2
        expected = pd.Series([region_oracle(r.orig_date, r.act_period, c1, c2) for r in rows]).value_counts()
        assert len(result.train) == expected[Split.TRAIN]
        assert len(result.validation) == expected[Split.VALIDATION]
        assert len(result.test) == expected[Split.TEST]
        assert result.discarded == expected[Split.DISCARD]

    def test_strict_mode_keeps_single_region_loans(self, small_frame):
        """Test a loan's kept rows share one origination, so consistent data loses nothing extra."""
        strict = partition_dataset(small_frame, strict=True)
        assert strict.strict_discarded == 0
        assert strict.discarded == 1

    def test_strict_mode_drops_reused_loan_ids(self):
        """Test a LOAN_ID seen in Train and Test is dropped entirely under strict mode."""
        rows = [
            loan_row("R", "052023", "062023"),
            loan_row("R", "072024", "082024", 1),
            loan_row("E", "052023", "062023"),
        ]
        relaxed = partition_dataset(loan_frame(*rows))
        assert relaxed.train["LOAN_ID"].tolist() == ["R", "E"]
        assert relaxed.test["LOAN_ID"].tolist() == ["R"]

        strict = partition_dataset(loan_frame(*rows), strict=True)
        assert strict.train["LOAN_ID"].tolist() == ["E"]
        assert strict.test.empty
        assert strict.strict_discarded == 2
        assert strict.discard_keys["reason"].tolist() == ["StrictLoan", "StrictLoan"]

    def test_audit_spool_written(self, small_frame):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, 'discarded.csv')
            partition_dataset(small_frame, audit_path=path)
            spool = pd.read_csv(path, dtype=str)
            assert spool.columns.tolist() == ["LOAN_ID", "ORIG_DATE", "ACT_PERIOD", "reason"]
            assert spool.iloc[0].tolist() == ["B", "052023", "122023", "Overlap"]

    def test_summary_counts(self, small_frame):
        summary = partition_dataset(small_frame).summary().set_index("split")
        assert summary.loc["Train", "rows"] == 2
        assert summary.loc["Train", "positives"] == 1
        assert summary.loc["Test", "positives"] == 1
        assert summary.loc["Discard", "rows"] == 1


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
