"""Calendar-month periods, loan-month rows and the default label.

All temporal logic in the benchmark is month granular. Periods travel as
6-character MMYYYY strings in source files and as integer month ordinals
(``year * 12 + month - 1``) inside data frames so that comparisons vectorize.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import total_ordering
from typing import Iterable, Iterator, Mapping, Optional

import pandas as pd

KEY_COLUMNS = ["LOAN_ID", "ORIG_DATE", "ACT_PERIOD"]
LABEL_SOURCE = "DLQ_STATUS"


class PeriodParseError(ValueError):
    """Raised when an MMYYYY value cannot be parsed."""


@total_ordering
@dataclass(frozen=True)
class Period:
    """A calendar month."""

    month: int
    year: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise PeriodParseError(f"month out of range: {self.month!r}")
        if not 1900 <= self.year <= 9999:
            raise PeriodParseError(f"year out of range: {self.year!r}")

    @property
    def index(self) -> int:
        return self.year * 12 + self.month - 1

    @classmethod
    def from_index(cls, index: int) -> "Period":
        year, month0 = divmod(int(index), 12)
        return cls(month0 + 1, year)

    def shift(self, months: int) -> "Period":
        return Period.from_index(self.index + months)

    def __lt__(self, other: "Period") -> bool:
        if not isinstance(other, Period):
            return NotImplemented
        return (self.year, self.month) < (other.year, other.month)

    def __str__(self) -> str:
        return format_period(self)


def parse_period(text: str) -> Period:
    """Parse a 6-digit MMYYYY string.

    Raises:
        PeriodParseError: wrong length, non-digit characters or month outside 1-12.
    """
    if not isinstance(text, str) or len(text) != 6:
        raise PeriodParseError(f"expected 6-character MMYYYY period, got {text!r}")
    if not text.isdigit() or not text.isascii():
        raise PeriodParseError(f"non-digit characters in period {text!r}")
    month, year = int(text[:2]), int(text[2:])
    if not 1 <= month <= 12:
        raise PeriodParseError(f"month {month} out of range in period {text!r}")
    return Period(month, year)


def format_period(period: Period) -> str:
    return f"{period.month:02d}{period.year:04d}"


def months_between(a: Period, b: Period) -> int:
    """Signed number of months from ``a`` to ``b``."""
    return b.index - a.index


class Label(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


def label_row(dlq_status: int) -> Label:
    """Label a loan-month by its own delinquency counter: 0 is current, anything above defaults."""
    if dlq_status < 0:
        raise ValueError(f"negative DLQ_STATUS: {dlq_status}")
    return Label.POSITIVE if dlq_status > 0 else Label.NEGATIVE


@dataclass(frozen=True)
class LoanRow:
    """One loan-month observation."""

    loan_id: str
    orig_date: Period
    act_period: Period
    dlq_status: int
    numeric_features: Mapping[str, Optional[float]] = field(default_factory=dict)
    categorical_features: Mapping[str, Optional[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.act_period < self.orig_date:
            raise ValueError(
                f"loan {self.loan_id}: ACT_PERIOD {self.act_period} precedes ORIG_DATE {self.orig_date}"
            )
        if self.dlq_status < 0:
            raise ValueError(f"loan {self.loan_id}: negative DLQ_STATUS {self.dlq_status}")

    @property
    def key(self) -> tuple[str, Period, Period]:
        return (self.loan_id, self.orig_date, self.act_period)

    @property
    def label(self) -> Label:
        return label_row(self.dlq_status)


def rows_to_frame(rows: Iterable[LoanRow]) -> pd.DataFrame:
    """Build the canonical loan frame from row objects."""
    records = []
    for row in rows:
        record = {
            "LOAN_ID": row.loan_id,
            "ORIG_DATE": format_period(row.orig_date),
            "ACT_PERIOD": format_period(row.act_period),
            "ORIG_MONTH": row.orig_date.index,
            "ACT_MONTH": row.act_period.index,
            "DLQ_STATUS": row.dlq_status,
            "LABEL": int(row.label),
        }
        record.update({name: value for name, value in row.numeric_features.items()})
        record.update({name: value for name, value in row.categorical_features.items()})
        records.append(record)
    columns = ["LOAN_ID", "ORIG_DATE", "ACT_PERIOD", "ORIG_MONTH", "ACT_MONTH", "DLQ_STATUS", "LABEL"]
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return pd.DataFrame(columns=columns)
    return frame


def frame_to_rows(
    frame: pd.DataFrame,
    numeric: Iterable[str] = (),
    categorical: Iterable[str] = (),
) -> Iterator[LoanRow]:
    numeric = list(numeric)
    categorical = list(categorical)
    for record in frame.to_dict(orient="records"):
        yield LoanRow(
            loan_id=str(record["LOAN_ID"]),
            orig_date=Period.from_index(record["ORIG_MONTH"]),
            act_period=Period.from_index(record["ACT_MONTH"]),
            dlq_status=int(record["DLQ_STATUS"]),
            numeric_features={n: None if pd.isna(record[n]) else float(record[n]) for n in numeric},
            categorical_features={c: None if pd.isna(record[c]) else str(record[c]) for c in categorical},
        )
