"""Synthetic loan-performance files with planted default signal.

Loans originate uniformly over the span and report one row per month until the
span ends. Each row's default probability comes from a logistic model over
transformed, standardized features:

    LOAN_AGE        1 - exp(-age / 4)             saturating seasoning effect
    CSCORE_B        max(720 - score, 0)           credit-score hinge
    CURRENT_UPB     log balance
    ORIG_UPB        log original balance
    CSCORE_B*OLTV   max(-z_score, 0) * max(z_ltv, 0)
    DTI             debt-to-income
    ZIP3            per-prefix regional effect

The intercept is calibrated by bisection so the expected row-level positive rate
equals ``base_default_rate``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from feature_encoding import Zip3Table
from periods import Period, format_period, parse_period
from preprocess_loans import DropReason, SchemaColumn, write_schema_sidecar

logger = logging.getLogger(__name__)

GENERATOR_FORMAT = "synthetic-loans/1"

# (name, kind, explicit drop reason); order is the file's column order
LOAN_COLUMNS: tuple[tuple[str, str, Optional[DropReason]], ...] = (
    ("LOAN_ID", "id", None),
    ("ACT_PERIOD", "date", None),
    ("CHANNEL", "categorical", None),
    ("SERVICER", "categorical", None),
    ("ORIG_RATE", "numeric", None),
    ("CURR_RATE", "numeric", None),
    ("ORIG_UPB", "numeric", None),
    ("ISSUANCE_UPB", "numeric", None),
    ("CURRENT_UPB", "numeric", None),
    ("ORIG_TERM", "numeric", None),
    ("ORIG_DATE", "date", None),
    ("FIRST_PAY", "date", None),
    ("LOAN_AGE", "numeric", None),
    ("REM_MONTHS", "numeric", None),
    ("ADJ_REM_MONTHS", "numeric", None),
    ("MATR_DT", "date", None),
    ("OLTV", "numeric", None),
    ("OCLTV", "numeric", None),
    ("NUM_BO", "numeric", None),
    ("DTI", "numeric", None),
    ("CSCORE_B", "numeric", None),
    ("CSCORE_C", "numeric", None),
    ("FIRST_FLAG", "categorical", None),
    ("PURPOSE", "categorical", None),
    ("PROP", "categorical", None),
    ("NO_UNITS", "numeric", None),
    ("OCC_STAT", "categorical", None),
    ("STATE", "categorical", None),
    ("MSA", "categorical", None),
    ("ZIP", "categorical", None),
    ("MI_PCT", "numeric", None),
    ("PRODUCT", "categorical", None),
    ("PPMT_FLG", "categorical", None),
    ("IO", "categorical", None),
    ("DLQ_STATUS", "label", None),
    ("PMT_HISTORY", "categorical", DropReason.PAYMENT_HISTORY),
    ("MI_TYPE", "categorical", None),
    ("CURR_SCHD_PRNCPL", "numeric", DropReason.PAYMENT_HISTORY),
    ("MI_CANCEL_FLAG", "categorical", None),
    ("INITIAL_FIXED_RATE_PERIOD", "numeric", None),
    ("INTEREST_RATE_ADJUSTMENT_FREQUENCY", "numeric", None),
    ("MONTHS_TO_AMORTIZATION", "numeric", None),
    ("MARGIN", "numeric", None),
    ("INITIAL_RATE_CAP_UP_PCT", "numeric", None),
    ("PERIODIC_RATE_CAP_UP_PCT", "numeric", None),
    ("LIFETIME_RATE_CAP_UP_PCT", "numeric", None),
    ("ISSUE_SCOREB", "numeric", None),
    ("ISSUE_SCOREC", "numeric", None),
    ("RELOCATION_MORTGAGE_INDICATOR", "categorical", None),
    ("HIGH_BALANCE_LOAN_INDICATOR", "categorical", None),
    ("HOMEREADY_PROGRAM_INDICATOR", "categorical", None),
    ("PROPERTY_VALUATION_METHOD", "categorical", None),
)

DEFAULT_COEFFICIENTS: dict[str, float] = {
    "LOAN_AGE": 1.5,
    "CSCORE_B": 0.7,
    "CURRENT_UPB": 0.4,
    "ORIG_UPB": 0.2,
    "CSCORE_B*OLTV": 0.4,
    "DTI": 0.2,
    "ZIP3": 0.4,
}

_NOISE_CATEGORICALS: dict[str, tuple[tuple[str, ...], tuple[float, ...]]] = {
    "CHANNEL": (("R", "C", "B"), (0.55, 0.3, 0.15)),
    "FIRST_FLAG": (("N", "Y"), (0.6, 0.4)),
    "PURPOSE": (("P", "C", "R"), (0.6, 0.2, 0.2)),
    "PROP": (("SF", "PU", "CO", "MH", "CP"), (0.62, 0.27, 0.09, 0.015, 0.005)),
    "OCC_STAT": (("P", "S", "I"), (0.9, 0.04, 0.06)),
    "STATE": (("CA", "TX", "FL", "NY", "IL", "WA", "GA", "NC", "AZ", "CO", "MA", "PA"),
              (0.16, 0.12, 0.11, 0.08, 0.07, 0.07, 0.07, 0.07, 0.06, 0.06, 0.07, 0.06)),
    "PPMT_FLG": (("N", "Y"), (0.99, 0.01)),
    "IO": (("N", "Y"), (0.995, 0.005)),
    "RELOCATION_MORTGAGE_INDICATOR": (("N", "Y"), (0.995, 0.005)),
    "HIGH_BALANCE_LOAN_INDICATOR": (("N", "Y"), (0.95, 0.05)),
    "HOMEREADY_PROGRAM_INDICATOR": (("7", "9", "H"), (0.85, 0.1, 0.05)),
    "PROPERTY_VALUATION_METHOD": (("A", "P", "R", "W", "C", "O"), (0.6, 0.2, 0.08, 0.07, 0.03, 0.02)),
}


@dataclass(frozen=True)
class GenSpec:
    n_loans: int = 10_000
    start: Period = Period(1, 2023)
    end: Period = Period(12, 2024)
    base_default_rate: float = 0.01
    coefficients: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    seed: int = 0
    n_servicers: int = 2000
    unknown_zip_rate: float = 0.01
    arm_share: float = 0.03

    def __post_init__(self):
        if not 0.0 < self.base_default_rate < 1.0:
            raise ValueError(f"base_default_rate must lie in (0, 1), got {self.base_default_rate}")
        if self.end < self.start:
            raise ValueError(f"span {self.start}..{self.end} is too short for any row")
        if self.n_loans < 1:
            raise ValueError(f"n_loans must be >= 1, got {self.n_loans}")
        unknown = set(self.coefficients) - set(DEFAULT_COEFFICIENTS)
        if unknown:
            raise ValueError(f"unknown signal coefficients: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "GenSpec":
        values = dict(values)
        for key in ("start", "end"):
            if key in values and not isinstance(values[key], Period):
                values[key] = parse_period(f"{values[key]}".zfill(6))
        if "coefficients" in values:
            values["coefficients"] = {**{k: 0.0 for k in DEFAULT_COEFFICIENTS}, **values["coefficients"]}
        return cls(**values)

    def as_dict(self) -> dict[str, Any]:
        return {
            "n_loans": self.n_loans,
            "start": format_period(self.start),
            "end": format_period(self.end),
            "base_default_rate": self.base_default_rate,
            "coefficients": dict(sorted(self.coefficients.items())),
            "seed": self.seed,
            "n_servicers": self.n_servicers,
            "unknown_zip_rate": self.unknown_zip_rate,
            "arm_share": self.arm_share,
        }


@dataclass
class GeneratedData:
    frame: pd.DataFrame
    intercept: float
    expected_positive_rate: float
    manifest: dict[str, Any]


def schema_columns() -> list[SchemaColumn]:
    return [SchemaColumn(name, position, kind, reason)
            for position, (name, kind, reason) in enumerate(LOAN_COLUMNS)]


def _standardize(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    return (values - values.mean()) / sd if sd > 0 else np.zeros_like(values)


def calibrate_intercept(eta: np.ndarray, rate: float, iterations: int = 200) -> float:
    """Intercept ``b`` with ``mean(sigmoid(b + eta)) == rate`` by bisection."""
    lo, hi = -40.0, 40.0
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        if expit(mid + eta).mean() < rate:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def _balance(upb: np.ndarray, annual_rate: np.ndarray, term: np.ndarray, age: np.ndarray) -> np.ndarray:
    r = annual_rate / 1200.0
    growth_n = (1.0 + r) ** term
    return upb * (growth_n - (1.0 + r) ** age) / (growth_n - 1.0)


def _mmyyyy(months: np.ndarray) -> np.ndarray:
    months = np.asarray(months, dtype=np.int64)
    return np.char.add(np.char.zfill((months % 12 + 1).astype(str), 2), (months // 12).astype(str))


def generate(spec: GenSpec, zip3: Optional[Zip3Table] = None) -> GeneratedData:
    """Draw loans, expand them to monthly rows and label each row."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    zip3 = zip3 or Zip3Table.builtin()
    n = spec.n_loans
    start, end = spec.start.index, spec.end.index

    # loan-level attributes
    orig = rng.integers(start, end + 1, size=n)
    cscore_b = np.clip(np.round(rng.normal(745, 45, n)), 620, 840)
    cscore_c = np.clip(np.round(cscore_b + rng.normal(0, 30, n)), 620, 840)
    cscore_c[rng.random(n) < 0.45] = np.nan
    orig_upb = np.round(np.exp(rng.normal(12.5, 0.5, n)), -3)
    orig_rate = np.round(rng.normal(6.5, 0.6, n), 3)
    orig_term = rng.choice([360, 240, 180], size=n, p=[0.6, 0.15, 0.25])
    oltv = np.clip(np.round(rng.normal(78, 12, n)), 20, 97)
    ocltv = np.minimum(oltv + rng.choice([0, 0, 0, 2, 5], size=n), 105)
    num_bo = rng.choice([1, 2, 3], size=n, p=[0.5, 0.47, 0.03])
    dti = np.clip(np.round(rng.normal(36, 8, n)), 5, 50)
    no_units = rng.choice([1, 2, 3, 4], size=n, p=[0.96, 0.03, 0.005, 0.005])
    insured = oltv > 80
    mi_pct = np.where(insured, rng.choice([6, 12, 25, 30], size=n), np.nan)
    mi_type = np.where(insured, rng.choice(["1", "2", "3"], size=n, p=[0.9, 0.08, 0.02]), None)
    mi_cancel = np.where(rng.random(n) < 0.3, rng.choice(["N", "Y"], size=n, p=[0.9, 0.1]), None)
    servicer = np.char.add("SERVICER_", np.char.zfill(rng.integers(0, spec.n_servicers, n).astype(str), 4))
    msa = rng.choice([f"{c:05d}" for c in range(10180, 49740, 997)], size=n)
    arm = rng.random(n) < spec.arm_share
    product = np.where(arm, "ARM", "FRM")

    prefixes = np.array(sorted(zip3.centroids))
    zips = rng.choice(prefixes, size=n).astype(object)
    unknown_zip = rng.random(n) < spec.unknown_zip_rate
    zips[unknown_zip] = "999"
    regional = dict(zip(prefixes.tolist() + ["999"], rng.normal(0.0, 1.0, prefixes.size + 1)))

    noise = {name: rng.choice(levels, size=n, p=probs) for name, (levels, probs) in _NOISE_CATEGORICALS.items()}

    # monthly rows
    n_rows = end - orig + 1
    loan = np.repeat(np.arange(n), n_rows)
    first_row = np.repeat(np.cumsum(n_rows) - n_rows, n_rows)
    age = np.arange(loan.size) - first_row
    act = orig[loan] + age
    term = orig_term[loan]
    current_upb = np.round(_balance(orig_upb[loan], orig_rate[loan], term, age), 2)
    next_upb = _balance(orig_upb[loan], orig_rate[loan], term, age + 1)
    rem_months = term - age

    # planted signal
    z_score, z_ltv = _standardize(cscore_b[loan]), _standardize(oltv[loan])
    terms = {
        "LOAN_AGE": 1.0 - np.exp(-age / 4.0),
        "CSCORE_B": np.maximum(720.0 - cscore_b[loan], 0.0),
        "CURRENT_UPB": np.log(np.maximum(current_upb, 1.0)),
        "ORIG_UPB": np.log(orig_upb[loan]),
        "CSCORE_B*OLTV": np.maximum(-z_score, 0.0) * np.maximum(z_ltv, 0.0),
        "DTI": dti[loan],
        "ZIP3": np.array([regional[z] for z in zips])[loan],
    }
    eta = np.zeros(loan.size)
    for name, coefficient in spec.coefficients.items():
        if coefficient:
            eta += coefficient * _standardize(terms[name])
    intercept = calibrate_intercept(eta, spec.base_default_rate)
    probability = expit(intercept + eta)
    positive = rng.random(loan.size) < probability
    dlq = np.where(positive, rng.geometric(0.6, size=loan.size), 0)

    arm_rows = arm[loan]

    def arm_only(values) -> np.ndarray:
        return np.where(arm_rows, values, np.nan)

    columns = {
        "LOAN_ID": np.char.add("1", np.char.zfill(np.arange(n).astype(str), 11))[loan],
        "ACT_PERIOD": _mmyyyy(act),
        "CHANNEL": noise["CHANNEL"][loan],
        "SERVICER": servicer[loan],
        "ORIG_RATE": orig_rate[loan],
        "CURR_RATE": orig_rate[loan],
        "ORIG_UPB": orig_upb[loan],
        "ISSUANCE_UPB": orig_upb[loan],
        "CURRENT_UPB": current_upb,
        "ORIG_TERM": term,
        "ORIG_DATE": _mmyyyy(orig[loan]),
        "FIRST_PAY": _mmyyyy(orig[loan] + 1),
        "LOAN_AGE": age,
        "REM_MONTHS": rem_months,
        "ADJ_REM_MONTHS": rem_months,
        "MATR_DT": _mmyyyy(orig[loan] + term),
        "OLTV": oltv[loan],
        "OCLTV": ocltv[loan],
        "NUM_BO": num_bo[loan],
        "DTI": dti[loan],
        "CSCORE_B": cscore_b[loan],
        "CSCORE_C": cscore_c[loan],
        "FIRST_FLAG": noise["FIRST_FLAG"][loan],
        "PURPOSE": noise["PURPOSE"][loan],
        "PROP": noise["PROP"][loan],
        "NO_UNITS": no_units[loan],
        "OCC_STAT": noise["OCC_STAT"][loan],
        "STATE": noise["STATE"][loan],
        "MSA": msa[loan],
        "ZIP": zips[loan],
        "MI_PCT": mi_pct[loan],
        "PRODUCT": product[loan],
        "PPMT_FLG": noise["PPMT_FLG"][loan],
        "IO": noise["IO"][loan],
        "DLQ_STATUS": dlq,
        "PMT_HISTORY": np.where(positive, "1", "0"),
        "MI_TYPE": mi_type[loan],
        "CURR_SCHD_PRNCPL": np.round(current_upb - next_upb, 2),
        "MI_CANCEL_FLAG": mi_cancel[loan],
        "INITIAL_FIXED_RATE_PERIOD": arm_only(rng.choice([60, 84, 120], size=n)[loan]),
        "INTEREST_RATE_ADJUSTMENT_FREQUENCY": arm_only(6.0),
        "MONTHS_TO_AMORTIZATION": arm_only(term),
        "MARGIN": arm_only(2.75),
        "INITIAL_RATE_CAP_UP_PCT": arm_only(5.0),
        "PERIODIC_RATE_CAP_UP_PCT": arm_only(1.0),
        "LIFETIME_RATE_CAP_UP_PCT": arm_only(5.0),
        "ISSUE_SCOREB": cscore_b[loan],
        "ISSUE_SCOREC": cscore_c[loan],
        "RELOCATION_MORTGAGE_INDICATOR": noise["RELOCATION_MORTGAGE_INDICATOR"][loan],
        "HIGH_BALANCE_LOAN_INDICATOR": noise["HIGH_BALANCE_LOAN_INDICATOR"][loan],
        "HOMEREADY_PROGRAM_INDICATOR": noise["HOMEREADY_PROGRAM_INDICATOR"][loan],
        "PROPERTY_VALUATION_METHOD": noise["PROPERTY_VALUATION_METHOD"][loan],
    }
    frame = pd.DataFrame({name: columns[name] for name, _, _ in LOAN_COLUMNS})
    for name, kind, _ in LOAN_COLUMNS:
        if kind == "numeric" and np.allclose(frame[name].dropna() % 1, 0):
            frame[name] = frame[name].astype("Int64")
        elif kind == "label":
            frame[name] = frame[name].astype(np.int64)

    expected_rate = float(probability.mean())
    manifest = {
        "format": GENERATOR_FORMAT,
        "spec": spec.as_dict(),
        "intercept": intercept,
        "expected_positive_rate": expected_rate,
        "realized_positive_rate": float(positive.mean()),
        "n_rows": int(loan.size),
        "n_positive_rows": int(positive.sum()),
        "dominant_feature": max(spec.coefficients, key=lambda k: abs(spec.coefficients[k])),
        "zip3_digest": zip3.digest(),
    }
    logger.info("Generated %d rows for %d loans (%d positives, expected rate %.4f)",
                loan.size, n, int(positive.sum()), expected_rate)
    return GeneratedData(frame=frame, intercept=intercept, expected_positive_rate=expected_rate, manifest=manifest)


def write_generated(data: GeneratedData, out_dir: Union[str, Path]) -> dict[str, Path]:
    """Write ``loans.psv`` (pipe-delimited, no header), ``loans_schema.csv`` and ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "data": out_dir / "loans.psv",
        "schema": out_dir / "loans_schema.csv",
        "manifest": out_dir / "manifest.json",
    }
    data.frame.to_csv(paths["data"], sep="|", header=False, index=False, na_rep="")
    write_schema_sidecar(paths["schema"], schema_columns())
    with open(paths["manifest"], "w") as fh:
        json.dump(data.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
