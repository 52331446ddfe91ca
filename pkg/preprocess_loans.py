"""Ingest loan-performance files and apply the leakage-safe feature policy.

Source files are single-character delimited text. The real loan-performance
files are header-less and pipe-delimited, so column names come from a sidecar
schema file (``name,position,kind,drop_reason``); files with a header row can be
read without one.

Usage examples:
  python preprocess_loans.py --input data/loans.psv --schema data/loans_schema.csv
  python preprocess_loans.py --input data/loans.psv --schema data/loans_schema.csv --output-csv processed/loans.csv
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from periods import LABEL_SOURCE

logger = logging.getLogger(__name__)

MANDATORY_COLUMNS = ("LOAN_ID", "ORIG_DATE", "ACT_PERIOD", "DLQ_STATUS")
# Exclusive upper bound on DLQ_STATUS.
MAX_DLQ_STATUS = 2.0 ** 62
COLUMN_KINDS = ("id", "date", "label", "numeric", "categorical")
_MMYYYY = re.compile(r"^(0[1-9]|1[0-2])(\d{4})$")


class SchemaError(ValueError):
    """Raised for fatal schema problems (missing mandatory or unclassified columns)."""


class DropReason(str, Enum):
    IDENTIFIER = "Identifier"
    DATE = "Date"
    PAYMENT_HISTORY = "PaymentHistory"
    HIGH_MISSING = "HighMissing"
    HIGH_CARDINALITY = "HighCardinality"


_DEFAULT_DROP = {"id": DropReason.IDENTIFIER, "date": DropReason.DATE, "label": DropReason.PAYMENT_HISTORY}


@dataclass(frozen=True)
class SchemaColumn:
    name: str
    position: int
    kind: str
    drop_reason: Optional[DropReason] = None


@dataclass(frozen=True)
class SchemaPolicy:
    """Which source columns are model features and why the others are excluded."""

    keep_numeric: tuple[str, ...]
    keep_categorical: tuple[str, ...]
    drop_reasons: dict[str, DropReason]
    cardinality_limit: int = 500
    missing_rate_limit: float = 0.5
    zip_column: Optional[str] = "ZIP"
    layout: tuple[SchemaColumn, ...] = ()
    filters_applied: bool = False

    def __post_init__(self):
        keep = set(self.keep_numeric) | set(self.keep_categorical)
        if len(keep) != len(self.keep_numeric) + len(self.keep_categorical):
            raise SchemaError("a column is listed as both numeric and categorical")
        overlap = keep & set(self.drop_reasons)
        if overlap:
            raise SchemaError(f"columns both kept and dropped: {sorted(overlap)}")
        if self.zip_column is not None and self.zip_column in self.keep_numeric:
            raise SchemaError(f"ZIP column {self.zip_column} must be categorical")

    @property
    def kept(self) -> tuple[str, ...]:
        return self.keep_numeric + self.keep_categorical

    @property
    def source_columns(self) -> list[str]:
        return [c.name for c in sorted(self.layout, key=lambda c: c.position)]

    def kind_of(self, name: str) -> str:
        for column in self.layout:
            if column.name == name:
                return column.kind
        if name in self.keep_numeric:
            return "numeric"
        if name in self.keep_categorical:
            return "categorical"
        return "unknown"


def policy_from_columns(
    columns: Iterable[SchemaColumn],
    cardinality_limit: int = 500,
    missing_rate_limit: float = 0.5,
    zip_column: Optional[str] = "ZIP",
) -> SchemaPolicy:
    columns = tuple(sorted(columns, key=lambda c: c.position))
    keep_numeric, keep_categorical, drops = [], [], {}
    for column in columns:
        if column.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {column.name}: unknown kind {column.kind!r}")
        reason = column.drop_reason or _DEFAULT_DROP.get(column.kind)
        if reason is not None:
            drops[column.name] = DropReason(reason)
        elif column.kind == "numeric":
            keep_numeric.append(column.name)
        else:
            keep_categorical.append(column.name)
    return SchemaPolicy(
        keep_numeric=tuple(keep_numeric),
        keep_categorical=tuple(keep_categorical),
        drop_reasons=drops,
        cardinality_limit=cardinality_limit,
        missing_rate_limit=missing_rate_limit,
        zip_column=zip_column if zip_column in keep_categorical else None,
        layout=columns,
    )


def load_schema_sidecar(path: Union[str, Path], **limits) -> SchemaPolicy:
    """Read a ``name,position,kind,drop_reason`` sidecar into a policy."""
    table = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = {"name", "position", "kind"} - set(table.columns)
    if missing:
        raise SchemaError(f"schema sidecar {path} lacks columns {sorted(missing)}")
    if "drop_reason" not in table.columns:
        table["drop_reason"] = ""
    columns = [
        SchemaColumn(
            name=row["name"].strip(),
            position=int(row["position"]),
            kind=row["kind"].strip().lower(),
            drop_reason=DropReason(row["drop_reason"].strip()) if row["drop_reason"].strip() else None,
        )
        for row in table.to_dict(orient="records")
    ]
    return policy_from_columns(columns, **limits)


def write_schema_sidecar(path: Union[str, Path], columns: Iterable[SchemaColumn]) -> None:
    records = [
        {"name": c.name, "position": c.position, "kind": c.kind,
         "drop_reason": c.drop_reason.value if c.drop_reason else ""}
        for c in sorted(columns, key=lambda c: c.position)
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame.from_records(records, columns=["name", "position", "kind", "drop_reason"]).to_csv(path, index=False)


@dataclass
class RejectionReport:
    counts: Counter = field(default_factory=Counter)
    examples: dict[str, list[str]] = field(default_factory=dict)

    def add(self, reason: str, loan_ids: Iterable[str], limit: int = 5) -> None:
        loan_ids = list(loan_ids)
        if not loan_ids:
            return
        self.counts[reason] += len(loan_ids)
        examples = self.examples.setdefault(reason, [])
        examples.extend(loan_ids[: max(0, limit - len(examples))])

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def is_empty(self) -> bool:
        return self.total == 0

    def as_dict(self) -> dict:
        return {"total": self.total, "counts": dict(sorted(self.counts.items())), "examples": self.examples}


@dataclass
class IngestResult:
    frame: pd.DataFrame
    rejections: RejectionReport
    source_columns: list[str]


def _period_ordinals(values: pd.Series) -> pd.Series:
    parts = values.fillna("").str.strip().str.extract(_MMYYYY)
    month = pd.to_numeric(parts[0], errors="coerce")
    year = pd.to_numeric(parts[1], errors="coerce")
    ordinal = year * 12 + month - 1
    return ordinal.where(year >= 1900)


def ingest(
    path: Union[str, Path],
    policy: SchemaPolicy,
    delimiter: str = "|",
    header: Optional[bool] = None,
) -> IngestResult:
    """Read a delimited loan-performance file into the canonical loan frame.

    Column names come from the policy layout when it has one, otherwise from the
    file's header row. Per-row defects are counted in the rejection report;
    unreadable files and missing mandatory columns are fatal.
    """
    if len(delimiter) != 1:
        raise ValueError(f"delimiter must be a single character, got {delimiter!r}")
    if header is None:
        header = not policy.layout
    names = None if header else policy.source_columns
    if not header and not names:
        raise SchemaError("header-less input needs a schema sidecar with column positions")

    raw = pd.read_csv(
        path,
        sep=delimiter,
        header=0 if header else None,
        names=names,
        dtype=str,
        keep_default_na=False,
        na_values=[""],
        index_col=False,
    )
    raw.columns = [str(c).strip() for c in raw.columns]
    missing = [c for c in MANDATORY_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"missing mandatory columns: {', '.join(missing)}")

    report = RejectionReport()
    ids = raw["LOAN_ID"].fillna("").str.strip()
    keep = ids != ""
    report.add("MissingKey", ids[~keep])

    orig = _period_ordinals(raw["ORIG_DATE"])
    act = _period_ordinals(raw["ACT_PERIOD"])
    bad_date = keep & (orig.isna() | act.isna())
    report.add("BadDate", ids[bad_date])
    keep &= ~bad_date

    dlq = pd.to_numeric(raw[LABEL_SOURCE].str.strip(), errors="coerce")
    finite = pd.Series(np.isfinite(dlq.to_numpy(dtype=float)), index=dlq.index)
    bad_label = keep & (~finite | (dlq < 0) | (dlq >= MAX_DLQ_STATUS) | (dlq != np.floor(dlq)))
    report.add("BadLabel", ids[bad_label])
    keep &= ~bad_label

    ordering = keep & (act < orig)
    report.add("OrderingViolation", ids[ordering])
    keep &= ~ordering

    frame = raw.loc[keep].copy()
    frame["LOAN_ID"] = ids[keep]
    frame["ORIG_DATE"] = frame["ORIG_DATE"].str.strip()
    frame["ACT_PERIOD"] = frame["ACT_PERIOD"].str.strip()
    frame["ORIG_MONTH"] = orig[keep].astype(np.int64)
    frame["ACT_MONTH"] = act[keep].astype(np.int64)
    frame["DLQ_STATUS"] = dlq[keep].astype(np.int64)
    frame["LABEL"] = (frame["DLQ_STATUS"] > 0).astype(np.int8)

    duplicated = frame.duplicated(subset=["LOAN_ID", "ORIG_MONTH", "ACT_MONTH"], keep="first")
    report.add("DuplicateKey", frame.loc[duplicated, "LOAN_ID"])
    frame = frame.loc[~duplicated]

    for name in raw.columns:
        if name in MANDATORY_COLUMNS:
            continue
        if policy.kind_of(name) == "numeric":
            frame[name] = pd.to_numeric(frame[name], errors="coerce")
        elif name in frame:
            frame[name] = frame[name].str.strip().replace("", np.nan)

    frame = frame.reset_index(drop=True)
    if not report.is_empty():
        logger.warning("Rejected %d rows: %s", report.total, dict(report.counts))
    logger.info("Ingested %d rows from %s", len(frame), path)
    return IngestResult(frame=frame, rejections=report, source_columns=list(raw.columns))


@dataclass
class SchemaAudit:
    kept: list[tuple[str, str]]
    dropped: list[tuple[str, DropReason]]
    absent: list[str]

    @property
    def kept_count(self) -> int:
        return len(self.kept)

    def to_frame(self) -> pd.DataFrame:
        records = [{"column": name, "status": "kept", "detail": kind} for name, kind in self.kept]
        records += [{"column": name, "status": "dropped", "detail": reason.value} for name, reason in self.dropped]
        records += [{"column": name, "status": "absent", "detail": "declared in policy, not in source"}
                    for name in self.absent]
        return pd.DataFrame.from_records(records, columns=["column", "status", "detail"])


def audit_schema(columns: Iterable[str], policy: SchemaPolicy) -> SchemaAudit:
    """Classify every source column as kept (with kind) or dropped (with reason).

    Raises:
        SchemaError: naming every column the policy does not classify.
    """
    columns = list(columns)
    unclassified = [c for c in columns if c not in policy.drop_reasons and c not in policy.kept]
    if unclassified:
        raise SchemaError(f"unclassified columns: {', '.join(unclassified)}")
    kept, dropped = [], []
    for name in columns:
        if name in policy.drop_reasons:
            dropped.append((name, policy.drop_reasons[name]))
        elif name == policy.zip_column:
            kept.append((name, "categorical (geocoded)"))
        else:
            kept.append((name, "numeric" if name in policy.keep_numeric else "categorical"))
    present = set(columns)
    absent = [name for name in policy.kept if name not in present]
    return SchemaAudit(kept=kept, dropped=dropped, absent=absent)


def apply_cardinality_and_missing_filters(train: pd.DataFrame, policy: SchemaPolicy) -> SchemaPolicy:
    """Drop high-missing columns and high-cardinality categoricals, judged on Train rows only.

    The returned policy is frozen and reused unchanged for Validation and Test.
    """
    drops = dict(policy.drop_reasons)
    n = len(train)

    def too_missing(name: str) -> bool:
        if name not in train or n == 0:
            return False
        return float(train[name].isna().mean()) > policy.missing_rate_limit

    keep_numeric = []
    for name in policy.keep_numeric:
        if too_missing(name):
            drops[name] = DropReason.HIGH_MISSING
        else:
            keep_numeric.append(name)

    keep_categorical = []
    for name in policy.keep_categorical:
        if too_missing(name):
            drops[name] = DropReason.HIGH_MISSING
        elif (name != policy.zip_column and name in train
              and int(train[name].nunique(dropna=True)) > policy.cardinality_limit):
            drops[name] = DropReason.HIGH_CARDINALITY
        else:
            keep_categorical.append(name)

    moved = {k: v.value for k, v in drops.items() if k not in policy.drop_reasons}
    if moved:
        logger.warning("Train-fit filters dropped %d columns: %s", len(moved), moved)
    return replace(
        policy,
        keep_numeric=tuple(keep_numeric),
        keep_categorical=tuple(keep_categorical),
        drop_reasons=drops,
        zip_column=policy.zip_column if policy.zip_column in keep_categorical else None,
        filters_applied=True,
    )


def main():
    parser = argparse.ArgumentParser(description='Ingest a loan-performance file and audit its schema')
    parser.add_argument('--input', required=True, help='Path to delimited loan-performance file')
    parser.add_argument('--schema', required=True, help='Path to schema sidecar CSV')
    parser.add_argument('--delimiter', default='|', help='Field delimiter (default: |)')
    parser.add_argument('--output-csv', default=None, help='Optional path for the cleaned frame')
    args = parser.parse_args()

    try:
        policy = load_schema_sidecar(args.schema)
        print(f"Loading {args.input}...")
        result = ingest(args.input, policy, delimiter=args.delimiter)
        audit = audit_schema(result.source_columns, policy)
        print(f"Accepted {len(result.frame)} rows, rejected {result.rejections.total}")
        for reason, count in sorted(result.rejections.counts.items()):
            print(f"  {reason}: {count}")
        print(f"Kept {audit.kept_count} columns, dropped {len(audit.dropped)}")
        if args.output_csv:
            Path(args.output_csv).parent.mkdir(parents=True, exist_ok=True)
            result.frame.to_csv(args.output_csv, index=False)
            print(f"✓ Saved cleaned rows -> {args.output_csv}")
        return 0
    except Exception as e:
        print(f"✗ Ingest failed: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
