"""Shared fixtures: small loan frames, a generated dataset and encoded matrices."""

from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from feature_encoding import ColumnKind, FeatureColumn, FeatureEncoder, FeatureMatrix, Pathway, Zip3Table
from generate_loans import GenSpec, generate, write_generated
from periods import LoanRow, parse_period, rows_to_frame
from preprocess_loans import ingest, load_schema_sidecar
from temporal_split import partition_dataset


def loan_row(loan_id, orig, act, dlq=0, **features):
    numeric = {k: v for k, v in features.items() if not isinstance(v, str) and v is not None}
    categorical = {k: v for k, v in features.items() if isinstance(v, str)}
    return LoanRow(loan_id, parse_period(orig), parse_period(act), dlq, numeric, categorical)


def loan_frame(*rows):
    return rows_to_frame(rows)


def numeric_matrix(X, y, names=None, pathway=Pathway.ONE_HOT):
    X = np.asarray(X, dtype=float)
    names = names or [f"x{i}" for i in range(X.shape[1])]
    columns = [FeatureColumn(name, ColumnKind.NUMERIC, name) for name in names]
    return FeatureMatrix(X, columns, np.asarray(y), pathway)


@pytest.fixture
def planted_data():
    """Logistic labels driven by x0 (strong) and x1 (weak); x2 is noise."""
    rng = np.random.default_rng(11)
    X = rng.normal(size=(600, 3))
    p = 1.0 / (1.0 + np.exp(-(2.5 * X[:, 0] + 0.5 * X[:, 1] - 1.0)))
    y = (rng.random(600) < p).astype(int)
    return X, y


@pytest.fixture(scope="session")
def generated_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("generated")
    spec = GenSpec(n_loans=1500, base_default_rate=0.05, seed=7)
    data = generate(spec)
    paths = write_generated(data, out)
    return SimpleNamespace(spec=spec, data=data, paths=paths, out=out)


@pytest.fixture(scope="session")
def encoded(generated_files):
    """Ingested, partitioned and encoded generated data (both pathways)."""
    policy = load_schema_sidecar(generated_files.paths["schema"])
    result = ingest(generated_files.paths["data"], policy)
    partition = partition_dataset(result.frame)
    encoder = FeatureEncoder.fit(partition.train, policy, Zip3Table.builtin())
    matrices = {
        pathway: {
            "train": encoder.transform(partition.train, pathway),
            "validation": encoder.transform(partition.validation, pathway),
            "test": encoder.transform(partition.test, pathway),
        }
        for pathway in Pathway
    }
    return SimpleNamespace(policy=policy, ingest=result, partition=partition, encoder=encoder, matrices=matrices)


@pytest.fixture
def small_frame():
    rows = [
        loan_row("A", "052023", "082023", 0, CSCORE_B=700.0, CHANNEL="R"),
        loan_row("A", "052023", "092023", 1, CSCORE_B=700.0, CHANNEL="R"),
        loan_row("B", "052023", "122023", 0, CSCORE_B=650.0, CHANNEL="C"),
        loan_row("C", "122023", "032024", 0, CSCORE_B=None, CHANNEL="B"),
        loan_row("D", "072024", "082024", 2, CSCORE_B=780.0, CHANNEL="R"),
    ]
    return loan_frame(*rows)


@pytest.fixture
def balanced_split():
    return pd.DataFrame({
        "LOAN_ID": [f"L{i}" for i in range(13)],
        "ORIG_DATE": ["012023"] * 13,
        "ACT_PERIOD": ["032023"] * 13,
        "LABEL": [1, 1, 1] + [0] * 10,
    })
