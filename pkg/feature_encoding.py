"""Train-fit feature encoding: ZIP3 geocoding, median imputation and categorical pathways.

Every statistic (medians, category dictionaries, kept/dropped decisions) is fitted
on Training rows only and then frozen; transforming Validation or Test rows never
touches it.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from preprocess_loans import DropReason, SchemaPolicy, apply_cardinality_and_missing_filters

logger = logging.getLogger(__name__)

MISSING_CATEGORY = "MISSING"
UNSEEN_CODE = 0
BUILTIN_ZIP3_PATH = Path(__file__).resolve().parent / "data" / "zip3_centroids.csv"
ENCODER_FORMAT = "feature-encoder/1"
MATRIX_FORMAT = "feature-matrix/1"


class ColumnKind(str, Enum):
    NUMERIC = "Numeric"
    ONE_HOT = "OneHot"
    RAW_CATEGORICAL = "RawCategorical"
    MISSING_FLAG = "MissingFlag"


class Pathway(str, Enum):
    ONE_HOT = "OneHotPathway"
    RAW_CATEGORICAL = "RawCategoricalPathway"


@dataclass(frozen=True)
class Zip3Table:
    """ZIP3 prefix -> (latitude, longitude) centroid."""

    centroids: dict[str, tuple[float, float]]

    def __post_init__(self):
        for prefix, (lat, lon) in self.centroids.items():
            if len(prefix) != 3 or not prefix.isdigit():
                raise ValueError(f"ZIP3 prefix must be exactly 3 digits, got {prefix!r}")
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"ZIP3 {prefix}: coordinates out of range ({lat}, {lon})")

    @classmethod
    def from_csv(cls, path: Union[str, Path], delimiter: str = ",") -> "Zip3Table":
        table = pd.read_csv(path, sep=delimiter, dtype={"prefix": str})
        if list(table.columns[:3]) != ["prefix", "lat", "lon"]:
            table = pd.read_csv(path, sep=delimiter, header=None, names=["prefix", "lat", "lon"], dtype={"prefix": str})
        centroids = {
            str(row.prefix).strip().zfill(3): (float(row.lat), float(row.lon))
            for row in table.itertuples(index=False)
        }
        return cls(centroids)

    @classmethod
    def builtin(cls) -> "Zip3Table":
        return cls.from_csv(BUILTIN_ZIP3_PATH)

    def lookup(self, zip_value) -> Optional[tuple[float, float]]:
        if zip_value is None or (isinstance(zip_value, float) and np.isnan(zip_value)):
            return None
        prefix = str(zip_value).strip()[:3]
        if len(prefix) != 3 or not prefix.isdigit():
            return None
        return self.centroids.get(prefix)

    def digest(self) -> str:
        canonical = json.dumps(sorted(self.centroids.items()), separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    kind: ColumnKind
    source: str
    categories: tuple[str, ...] = ()


@dataclass
class FeatureMatrix:
    """Encoded design matrix with column provenance and the label vector."""

    values: np.ndarray
    columns: list[FeatureColumn]
    labels: np.ndarray
    pathway: Pathway
    keys: Optional[pd.DataFrame] = None
    zip_misses: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.labels), len(self.columns))
        self.labels = np.asarray(self.labels, dtype=np.int8)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        keys = None if self.keys is None else self.keys.iloc[rows].reset_index(drop=True)
        return FeatureMatrix(self.values[rows], list(self.columns), self.labels[rows], self.pathway, keys)

    def groups(self) -> dict[str, list[int]]:
        """Source feature -> column indices (one-hot blocks and ZIP coordinates stay together)."""
        groups: dict[str, list[int]] = {}
        for i, column in enumerate(self.columns):
            groups.setdefault(column.source, []).append(i)
        return groups

    def categorical_mask(self) -> np.ndarray:
        return np.array([c.kind == ColumnKind.RAW_CATEGORICAL for c in self.columns], dtype=bool)

    def to_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(self.values, columns=self.names)
        frame["LABEL"] = self.labels
        with open(path, "w", newline="") as fh:
            fh.write(f"# {MATRIX_FORMAT}\n")
            fh.write(f"# pathway {self.pathway.value}\n")
            for column in self.columns:
                meta = {"name": column.name, "kind": column.kind.value, "source": column.source,
                        "categories": list(column.categories)}
                fh.write(f"# column {json.dumps(meta, sort_keys=True)}\n")
            frame.to_csv(fh, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "FeatureMatrix":
        columns, pathway = [], None
        with open(path) as fh:
            lines = fh.readlines()
        if not lines or lines[0].strip() != f"# {MATRIX_FORMAT}":
            raise ValueError(f"{path} is not a {MATRIX_FORMAT} file")
        n_meta = 0
        for line in lines:
            if not line.startswith("#"):
                break
            n_meta += 1
            body = line[2:].strip()
            if body.startswith("pathway "):
                pathway = Pathway(body.split(" ", 1)[1])
            elif body.startswith("column "):
                meta = json.loads(body.split(" ", 1)[1])
                columns.append(FeatureColumn(meta["name"], ColumnKind(meta["kind"]), meta["source"],
                                             tuple(meta["categories"])))
        frame = pd.read_csv(path, skiprows=n_meta)
        labels = frame.pop("LABEL").to_numpy()
        return cls(frame.to_numpy(dtype=np.float64), columns, labels, pathway)


class FeatureEncoder:
    """Statistics fitted on Training rows, applied unchanged to every split."""

    def __init__(self, policy: SchemaPolicy, medians: dict[str, float], categories: dict[str, list[str]],
                 zip3: Zip3Table, train_rows: int):
        self.policy = policy
        self.medians = dict(medians)
        self.categories = {k: list(v) for k, v in categories.items()}
        self.zip3 = zip3
        self.train_rows = train_rows
        self.audit_log: list[dict] = [{"stage": "fit", "split": "Train", "rows": train_rows}]

    @classmethod
    def fit(cls, rows: pd.DataFrame, policy: SchemaPolicy, zip3: Zip3Table) -> "FeatureEncoder":
        """Fit on Training rows. Frames carrying a ``SPLIT`` column are restricted to Train first."""
        if "SPLIT" in rows.columns:
            rows = rows.loc[rows["SPLIT"] == "Train"]
        if not policy.filters_applied:
            policy = apply_cardinality_and_missing_filters(rows, policy)

        medians: dict[str, float] = {}
        for name in policy.keep_numeric:
            medians[name] = _median(pd.to_numeric(rows[name], errors="coerce") if name in rows else pd.Series(dtype=float))
        if policy.zip_column:
            coords = _geocode(rows[policy.zip_column] if policy.zip_column in rows else pd.Series(dtype=object), zip3)
            medians["ZIP_LAT"] = _median(pd.Series(coords[:, 0]))
            medians["ZIP_LON"] = _median(pd.Series(coords[:, 1]))

        categories: dict[str, list[str]] = {}
        for name in policy.keep_categorical:
            if name == policy.zip_column:
                continue
            values = _categorical_values(rows, name)
            categories[name] = sorted(values.unique().tolist())
        logger.info("Fitted encoder on %d Train rows: %d numeric, %d categorical",
                    len(rows), len(policy.keep_numeric), len(categories))
        return cls(policy, medians, categories, zip3, len(rows))

    def transform(self, rows: pd.DataFrame, pathway: Pathway = Pathway.ONE_HOT) -> FeatureMatrix:
        pathway = Pathway(pathway)
        n = len(rows)
        blocks: list[np.ndarray] = []
        columns: list[FeatureColumn] = []

        for name in self.policy.keep_numeric:
            x = pd.to_numeric(rows[name], errors="coerce").to_numpy(dtype=np.float64) if name in rows else np.full(n, np.nan)
            missing = np.isnan(x)
            blocks += [np.where(missing, self.medians[name], x), missing.astype(np.float64)]
            columns += [FeatureColumn(name, ColumnKind.NUMERIC, name),
                        FeatureColumn(f"{name}__missing", ColumnKind.MISSING_FLAG, name)]

        zip_misses = 0
        if self.policy.zip_column:
            zip_name = self.policy.zip_column
            raw = rows[zip_name] if zip_name in rows else pd.Series([np.nan] * n, dtype=object)
            coords = _geocode(raw, self.zip3)
            missing = np.isnan(coords[:, 0])
            zip_misses = int((missing & raw.notna().to_numpy()).sum())
            if zip_misses:
                logger.warning("%d rows carry a ZIP prefix absent from the ZIP3 table", zip_misses)
            blocks += [np.where(missing, self.medians["ZIP_LAT"], coords[:, 0]),
                       np.where(missing, self.medians["ZIP_LON"], coords[:, 1]),
                       missing.astype(np.float64)]
            columns += [FeatureColumn("ZIP_LAT", ColumnKind.NUMERIC, zip_name),
                        FeatureColumn("ZIP_LON", ColumnKind.NUMERIC, zip_name),
                        FeatureColumn(f"{zip_name}__missing", ColumnKind.MISSING_FLAG, zip_name)]

        for name, cats in self.categories.items():
            codes = pd.Categorical(_categorical_values(rows, name), categories=cats).codes.astype(np.int64)
            if pathway is Pathway.ONE_HOT:
                onehot = np.zeros((n, len(cats)))
                seen = np.flatnonzero(codes >= 0)
                onehot[seen, codes[seen]] = 1.0
                blocks += list(onehot.T)
                columns += [FeatureColumn(f"{name}={cat}", ColumnKind.ONE_HOT, name) for cat in cats]
            else:
                # known categories are 1..K, unseen values share the reserved code
                blocks.append(np.where(codes >= 0, codes + 1, UNSEEN_CODE).astype(np.float64))
                columns.append(FeatureColumn(name, ColumnKind.RAW_CATEGORICAL, name, tuple(cats)))

        values = np.column_stack(blocks) if blocks else np.empty((n, 0))
        keys = rows[["LOAN_ID", "ORIG_DATE", "ACT_PERIOD"]].reset_index(drop=True) if "LOAN_ID" in rows else None
        labels = rows["LABEL"].to_numpy() if "LABEL" in rows else np.zeros(n, dtype=np.int8)
        self.audit_log.append({"stage": "transform", "pathway": pathway.value, "rows": n})
        return FeatureMatrix(values, columns, labels, pathway, keys, zip_misses)

    def to_json(self) -> str:
        state = {
            "format": ENCODER_FORMAT,
            "keep_numeric": list(self.policy.keep_numeric),
            "keep_categorical": list(self.policy.keep_categorical),
            "drop_reasons": {k: v.value for k, v in self.policy.drop_reasons.items()},
            "cardinality_limit": self.policy.cardinality_limit,
            "missing_rate_limit": self.policy.missing_rate_limit,
            "zip_column": self.policy.zip_column,
            "medians": self.medians,
            "categories": self.categories,
            "zip3_digest": self.zip3.digest(),
            "train_rows": self.train_rows,
        }
        return json.dumps(state, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str, zip3: Zip3Table) -> "FeatureEncoder":
        state = json.loads(text)
        if state.get("format") != ENCODER_FORMAT:
            raise ValueError(f"unsupported encoder format {state.get('format')!r}")
        if state["zip3_digest"] != zip3.digest():
            raise ValueError("ZIP3 table differs from the one the encoder was fitted with")
        policy = SchemaPolicy(
            keep_numeric=tuple(state["keep_numeric"]),
            keep_categorical=tuple(state["keep_categorical"]),
            drop_reasons={k: DropReason(v) for k, v in state["drop_reasons"].items()},
            cardinality_limit=state["cardinality_limit"],
            missing_rate_limit=state["missing_rate_limit"],
            zip_column=state["zip_column"],
            filters_applied=True,
        )
        return cls(policy, state["medians"], state["categories"], zip3, state["train_rows"])


def encode(
    rows: pd.DataFrame,
    schema: SchemaPolicy,
    zip3: Zip3Table,
    pathway: Pathway = Pathway.ONE_HOT,
    encoder: Optional[FeatureEncoder] = None,
) -> FeatureMatrix:
    """Encode rows; without a fitted encoder the rows themselves are the Training split."""
    if encoder is None:
        encoder = FeatureEncoder.fit(rows, schema, zip3)
    return encoder.transform(rows, pathway)


def _median(values: pd.Series) -> float:
    median = values.median()
    return 0.0 if pd.isna(median) else float(median)


def _categorical_values(rows: pd.DataFrame, name: str) -> pd.Series:
    if name not in rows:
        return pd.Series([MISSING_CATEGORY] * len(rows), dtype=object)
    return rows[name].astype(object).where(rows[name].notna(), MISSING_CATEGORY).astype(str)


def _geocode(values: pd.Series, zip3: Zip3Table) -> np.ndarray:
    coords = np.full((len(values), 2), np.nan)
    if len(values) == 0:
        return coords
    items = [None if pd.isna(v) else str(v) for v in values.to_numpy(dtype=object)]
    lookup = {}
    for value in set(items):
        hit = zip3.lookup(value)
        lookup[value] = hit if hit is not None else (np.nan, np.nan)
    coords[:] = np.array([lookup[v] for v in items], dtype=np.float64).reshape(-1, 2)
    return coords
