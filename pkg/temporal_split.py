"""Dual-cutoff temporal partition of loan-month rows.

Cutoffs are imposed on both ORIG_DATE and ACT_PERIOD. The kept regions are three
triangles in the (origination, action period) plane:

    Train       orig <  c1       and act <  c1
    Validation  c1 <= orig < c2  and c1 <= act < c2
    Test        orig >= c2       and act >= c2

Everything else falls in one of the two overlap rectangles and is discarded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from periods import LoanRow, Period, parse_period, rows_to_frame

logger = logging.getLogger(__name__)


class OrderingViolation(ValueError):
    """ACT_PERIOD earlier than ORIG_DATE."""


class Split(str, Enum):
    TRAIN = "Train"
    VALIDATION = "Validation"
    TEST = "Test"
    DISCARD = "Discard"


KEPT_SPLITS = (Split.TRAIN, Split.VALIDATION, Split.TEST)
_CODES = {Split.TRAIN: 0, Split.VALIDATION: 1, Split.TEST: 2, Split.DISCARD: 3}
_BY_CODE = {code: split for split, code in _CODES.items()}


@dataclass(frozen=True)
class Cutoffs:
    c1: Period
    c2: Period

    def __post_init__(self):
        if not self.c1 < self.c2:
            raise ValueError(f"cutoffs must satisfy c1 < c2, got {self.c1} and {self.c2}")

    @classmethod
    def from_strings(cls, c1: str, c2: str) -> "Cutoffs":
        return cls(parse_period(c1), parse_period(c2))


DEFAULT_CUTOFFS = Cutoffs(Period(11, 2023), Period(6, 2024))


def assign(orig: Period, act: Period, cutoffs: Cutoffs) -> Split:
    if act < orig:
        raise OrderingViolation(f"ACT_PERIOD {act} precedes ORIG_DATE {orig}")
    c1, c2 = cutoffs.c1, cutoffs.c2
    if orig < c1 and act < c1:
        return Split.TRAIN
    if c1 <= orig < c2 and c1 <= act < c2:
        return Split.VALIDATION
    if orig >= c2 and act >= c2:
        return Split.TEST
    return Split.DISCARD


def assign_many(orig_months: np.ndarray, act_months: np.ndarray, cutoffs: Cutoffs) -> np.ndarray:
    """Vectorized ``assign`` over month ordinals; returns an array of Split values."""
    orig = np.asarray(orig_months, dtype=np.int64)
    act = np.asarray(act_months, dtype=np.int64)
    bad = np.flatnonzero(act < orig)
    if bad.size:
        raise OrderingViolation(
            f"{bad.size} rows with ACT_PERIOD before ORIG_DATE (first at position {int(bad[0])})"
        )
    codes = _assign_codes(orig, act, cutoffs)
    return np.array([_BY_CODE[c] for c in codes], dtype=object)


def _assign_codes(orig: np.ndarray, act: np.ndarray, cutoffs: Cutoffs) -> np.ndarray:
    c1, c2 = cutoffs.c1.index, cutoffs.c2.index
    conditions = [
        (orig < c1) & (act < c1),
        (orig >= c1) & (orig < c2) & (act >= c1) & (act < c2),
        (orig >= c2) & (act >= c2),
    ]
    return np.select(conditions, [0, 1, 2], default=3)


@dataclass
class PartitionResult:
    train: pd.DataFrame
    validation: pd.DataFrame
    test: pd.DataFrame
    discarded: int
    strict_discarded: int = 0
    discard_keys: pd.DataFrame = field(default_factory=pd.DataFrame)

    def splits(self) -> dict[Split, pd.DataFrame]:
        return {Split.TRAIN: self.train, Split.VALIDATION: self.validation, Split.TEST: self.test}

    def summary(self) -> pd.DataFrame:
        records = []
        for split, frame in self.splits().items():
            positives = int(frame["LABEL"].sum()) if "LABEL" in frame and len(frame) else 0
            records.append({
                "split": split.value,
                "rows": len(frame),
                "positives": positives,
                "negatives": len(frame) - positives,
                "positive_rate": positives / len(frame) if len(frame) else 0.0,
            })
        records.append({
            "split": Split.DISCARD.value,
            "rows": self.discarded,
            "positives": 0,
            "negatives": 0,
            "positive_rate": 0.0,
        })
        return pd.DataFrame.from_records(records)


def partition_dataset(
    rows: Union[pd.DataFrame, Iterable[LoanRow]],
    cutoffs: Cutoffs = DEFAULT_CUTOFFS,
    strict: bool = False,
    audit_path: Optional[Union[str, Path]] = None,
) -> PartitionResult:
    """Split rows into Train / Validation / Test, counting the discarded overlap rows.

    With ``strict=True`` every row of a loan whose kept rows land in more than one
    region is discarded as well. Output frames keep input order and get a fresh
    RangeIndex.
    """
    frame = rows if isinstance(rows, pd.DataFrame) else rows_to_frame(rows)
    if frame.empty:
        empty = frame.iloc[0:0].reset_index(drop=True)
        return PartitionResult(empty, empty.copy(), empty.copy(), 0,
                               discard_keys=pd.DataFrame(columns=["LOAN_ID", "ORIG_DATE", "ACT_PERIOD", "reason"]))

    orig = frame["ORIG_MONTH"].to_numpy(dtype=np.int64)
    act = frame["ACT_MONTH"].to_numpy(dtype=np.int64)
    bad = np.flatnonzero(act < orig)
    if bad.size:
        first = frame.iloc[int(bad[0])]
        raise OrderingViolation(
            f"loan {first['LOAN_ID']}: ACT_PERIOD {first['ACT_PERIOD']} precedes ORIG_DATE {first['ORIG_DATE']}"
            f" ({bad.size} offending rows)"
        )
    codes = _assign_codes(orig, act, cutoffs)
    reasons = np.where(codes == 3, "Overlap", "")

    strict_dropped = 0
    if strict:
        kept = codes < 3
        regions = pd.DataFrame({"LOAN_ID": frame["LOAN_ID"].to_numpy()[kept], "code": codes[kept]})
        spread = regions.groupby("LOAN_ID")["code"].nunique()
        straddlers = set(spread.index[spread > 1])
        hit = kept & frame["LOAN_ID"].isin(straddlers).to_numpy()
        strict_dropped = int(hit.sum())
        codes = np.where(hit, 3, codes)
        reasons = np.where(hit, "StrictLoan", reasons)
        if strict_dropped:
            logger.warning("Strict mode discarded %d rows from %d loans spanning several regions",
                           strict_dropped, len(straddlers))

    discard_mask = codes == 3
    discard_keys = frame.loc[discard_mask, ["LOAN_ID", "ORIG_DATE", "ACT_PERIOD"]].copy()
    discard_keys["reason"] = reasons[discard_mask]
    discard_keys = discard_keys.reset_index(drop=True)
    if audit_path is not None:
        audit_path = Path(audit_path)
        audit_path.parent.mkdir(parents=True, exist_ok=True)
        discard_keys.to_csv(audit_path, index=False)

    result = PartitionResult(
        train=frame.loc[codes == 0].reset_index(drop=True),
        validation=frame.loc[codes == 1].reset_index(drop=True),
        test=frame.loc[codes == 2].reset_index(drop=True),
        discarded=int(discard_mask.sum()),
        strict_discarded=strict_dropped,
        discard_keys=discard_keys,
    )
    logger.info("Partition: train=%d validation=%d test=%d discarded=%d",
                len(result.train), len(result.validation), len(result.test), result.discarded)
    return result
