"""train_model.py
Uniform learner contract: learner specs with the benchmark defaults, fit dispatch
to the native learners, probability prediction with column checks, and joblib
persistence. Run as a script it trains one learner on encoded feature-matrix
files and writes the model plus a metrics JSON, with optional MLflow tracking.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

import joblib
import mlflow
import numpy as np

from config import config
from evaluation import auroc
from feature_encoding import ColumnKind, FeatureMatrix, Pathway
from gbdt import BoostedEnsemble, fit_gbdt
from logreg import LogisticFit, fit_logreg
from trees import fit_random_forest, predict_forest

logger = logging.getLogger(__name__)

MODEL_FORMAT = "mortgage-bench-model/1"


class LearnerKind(str, Enum):
    LOGREG_L1 = "LogRegL1"
    LOGREG_L2 = "LogRegL2"
    RANDOM_FOREST = "RandomForest"
    GBDT = "GBDT"


DEFAULT_HYPERPARAMS: dict[LearnerKind, dict[str, Any]] = {
    LearnerKind.LOGREG_L1: {"C": 1.0, "max_epochs": 1000, "tol": 1e-8},
    LearnerKind.LOGREG_L2: {"C": 1.0, "max_epochs": 1000, "tol": 1e-8},
    LearnerKind.RANDOM_FOREST: {
        "n_trees": 150, "min_samples_split": 8, "max_depth": 15,
        "max_features": "sqrt", "bootstrap": True,
    },
    LearnerKind.GBDT: {
        "num_iterations": 200, "learning_rate": 0.05, "max_depth": 8,
        "early_stopping_patience": 20, "reg_lambda": 1.0, "min_samples_leaf": 20,
        "min_split_gain": 0.0, "max_bins": 256,
    },
}


class ColumnMismatchError(ValueError):
    """Prediction columns differ from the columns the model was trained on."""

    def __init__(self, missing: list[str], extra: list[str]):
        self.missing = missing
        self.extra = extra
        super().__init__(f"column mismatch: missing {missing}, extra {extra}")


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    kind: LearnerKind
    hyperparams: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    pathway: Optional[Pathway] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LearnerKind(self.kind))
        if self.pathway is not None:
            object.__setattr__(self, "pathway", Pathway(self.pathway))
        unknown = set(self.hyperparams) - set(DEFAULT_HYPERPARAMS[self.kind])
        if unknown:
            raise ValueError(f"{self.name}: unknown hyperparameters for {self.kind.value}: {sorted(unknown)}")
        if self.kind is not LearnerKind.GBDT and self.pathway is Pathway.RAW_CATEGORICAL:
            raise ValueError(f"{self.name}: {self.kind.value} needs the one-hot pathway")

    @property
    def resolved_hyperparams(self) -> dict[str, Any]:
        return {**DEFAULT_HYPERPARAMS[self.kind], **self.hyperparams}

    @property
    def resolved_pathway(self) -> Pathway:
        if self.pathway is not None:
            return self.pathway
        return Pathway.RAW_CATEGORICAL if self.kind is LearnerKind.GBDT else Pathway.ONE_HOT

    def with_seed(self, seed: int) -> "LearnerSpec":
        return LearnerSpec(self.name, self.kind, dict(self.hyperparams), seed, self.pathway)


DEFAULT_LEARNERS = (
    LearnerSpec("logreg_l1", LearnerKind.LOGREG_L1),
    LearnerSpec("logreg_l2", LearnerKind.LOGREG_L2),
    LearnerSpec("random_forest", LearnerKind.RANDOM_FOREST),
    LearnerSpec("gbdt_onehot", LearnerKind.GBDT, pathway=Pathway.ONE_HOT),
    LearnerSpec("gbdt_raw", LearnerKind.GBDT, pathway=Pathway.RAW_CATEGORICAL),
)


@dataclass(frozen=True)
class FittedModel:
    name: str
    kind: LearnerKind
    hyperparams: dict[str, Any]
    columns: tuple[str, ...]
    estimator: Union[LogisticFit, tuple, BoostedEnsemble]
    metadata: dict[str, Any] = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return np.empty(0)
        if self.kind is LearnerKind.RANDOM_FOREST:
            return predict_forest(self.estimator, X)
        return self.estimator.predict_proba(X)


def fit_model(spec: LearnerSpec, train: FeatureMatrix, validation: Optional[FeatureMatrix] = None,
              n_jobs: int = 1) -> FittedModel:
    """Fit ``spec`` on an encoded Train matrix; the GBDT also needs the Validation matrix."""
    if train.pathway is not spec.resolved_pathway:
        raise ValueError(f"{spec.name} expects {spec.resolved_pathway.value}, got {train.pathway.value}")
    params = spec.resolved_hyperparams
    X, y = train.values, train.labels.astype(np.float64)
    metadata: dict[str, Any] = {
        "pathway": train.pathway.value,
        "train_rows": train.n_rows,
        "train_positives": int(train.labels.sum()),
        "seed": spec.seed,
    }

    if spec.kind in (LearnerKind.LOGREG_L1, LearnerKind.LOGREG_L2):
        numeric = np.array([c.kind == ColumnKind.NUMERIC for c in train.columns], dtype=bool)
        estimator = fit_logreg(
            X, y, penalty="l1" if spec.kind is LearnerKind.LOGREG_L1 else "l2",
            C=params["C"], seed=spec.seed, standardize=numeric,
            max_epochs=params["max_epochs"], tol=params["tol"],
        )
        metadata.update(epochs=estimator.epochs, converged=estimator.converged)
    elif spec.kind is LearnerKind.RANDOM_FOREST:
        estimator = fit_random_forest(X, y, seed=spec.seed, n_jobs=n_jobs, **params)
    else:
        if validation is None:
            raise ValueError(f"{spec.name}: boosting needs a validation matrix for early stopping")
        if validation.names != train.names:
            raise ColumnMismatchError(*_column_diff(train.names, validation.names))
        estimator = fit_gbdt(
            X, y, validation.values, validation.labels.astype(np.float64),
            seed=spec.seed, categorical=train.categorical_mask(), **params,
        )
        metadata.update(
            best_iteration=estimator.best_iteration,
            iterations_run=estimator.iterations_run,
            best_validation_auroc=estimator.best_score,
        )

    logger.info("Fitted %s (%s) on %d rows", spec.name, spec.kind.value, train.n_rows)
    return FittedModel(spec.name, spec.kind, params, tuple(train.names), estimator, metadata)


def _column_diff(expected: list[str], given: list[str]) -> tuple[list[str], list[str]]:
    given_set, expected_set = set(given), set(expected)
    return [c for c in expected if c not in given_set], [c for c in given if c not in expected_set]


def predict_proba(model: FittedModel, X: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    """Probabilities of default in [0, 1]; feature-matrix columns are checked by name."""
    if isinstance(X, FeatureMatrix):
        names = X.names
        if names != list(model.columns):
            missing, extra = _column_diff(list(model.columns), names)
            if missing or extra:
                raise ColumnMismatchError(missing, extra)
            position = {name: i for i, name in enumerate(names)}
            values = X.values[:, [position[c] for c in model.columns]]
        else:
            values = X.values
    else:
        values = np.asarray(X, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(model.columns):
            raise ValueError(f"expected {len(model.columns)} columns, got shape {values.shape}")
    return model.predict_proba(values)


def save_model(model: FittedModel, path: str) -> None:
    out_dir = os.path.dirname(path) or '.'
    os.makedirs(out_dir, exist_ok=True)
    joblib.dump({
        "format": MODEL_FORMAT,
        "name": model.name,
        "kind": model.kind.value,
        "hyperparams": model.hyperparams,
        "columns": list(model.columns),
        "estimator": model.estimator,
        "metadata": model.metadata,
    }, path)


def load_model(path: str) -> FittedModel:
    payload = joblib.load(path)
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a {MODEL_FORMAT} model file")
    return FittedModel(
        name=payload["name"],
        kind=LearnerKind(payload["kind"]),
        hyperparams=payload["hyperparams"],
        columns=tuple(payload["columns"]),
        estimator=payload["estimator"],
        metadata=payload["metadata"],
    )


def log_to_mlflow(model: FittedModel, metrics: dict[str, float], artifacts: tuple[str, ...] = (),
                  run_name: Optional[str] = None) -> Optional[str]:
    """Record one fitted model in the local MLflow store; returns the run id or None."""
    try:
        mlflow.set_tracking_uri(config.mlflow_tracking_uri)
        mlflow.set_experiment(config.mlflow_experiment_name)
        with mlflow.start_run(run_name=run_name or model.name) as run:
            mlflow.log_param("kind", model.kind.value)
            for key, value in model.hyperparams.items():
                mlflow.log_param(key, value)
            for key, value in model.metadata.items():
                if isinstance(value, (int, float, str, bool)):
                    mlflow.log_param(f"meta_{key}", value)
            for metric_name, metric_value in metrics.items():
                mlflow.log_metric(metric_name, metric_value)
            for artifact in artifacts:
                mlflow.log_artifact(artifact)
            return run.info.run_id
    except Exception as e:
        print(f"Warning: MLflow tracking disabled: {e}", file=sys.stderr)
        return None


def _spec_from_args(args) -> LearnerSpec:
    for spec in DEFAULT_LEARNERS:
        if args.learner == spec.name:
            return spec.with_seed(args.seed)
    return LearnerSpec(args.learner, LearnerKind(args.learner), seed=args.seed)


def main(args):
    train = FeatureMatrix.read_csv(args.train_matrix)
    validation = FeatureMatrix.read_csv(args.val_matrix) if args.val_matrix else None
    spec = _spec_from_args(args)
    if spec.pathway is None:
        spec = LearnerSpec(spec.name, spec.kind, spec.hyperparams, spec.seed, train.pathway)

    model = fit_model(spec, train, validation, n_jobs=args.n_jobs)
    metrics = {"train_auroc": auroc(predict_proba(model, train), train.labels)}
    if validation is not None:
        metrics["validation_auroc"] = auroc(predict_proba(model, validation), validation.labels)

    save_model(model, args.output_model)
    print(f"✓ Saved model to {args.output_model}")

    out_dir = os.path.dirname(args.output_model) or '.'
    metrics_path = args.metrics_path if args.metrics_path else os.path.join(out_dir, 'metrics.json')
    with open(metrics_path, 'w') as fh:
        json.dump({"model": model.name, "kind": model.kind.value, **metrics, **model.metadata},
                  fh, indent=2, sort_keys=True)
    print(f"✓ Saved metrics to {metrics_path}")

    print("Metrics:")
    for k, v in metrics.items():
        print(f"  {k}: {v:.4f}")

    if args.mlflow or config.enable_mlflow:
        run_id = log_to_mlflow(model, metrics, artifacts=(metrics_path,))
        if run_id:
            print(f"✓ MLflow run completed: {run_id}")
    return 0


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='Train one benchmark learner on encoded feature matrices')
    parser.add_argument('--train-matrix', type=str, required=True, help='Encoded Train feature-matrix CSV')
    parser.add_argument('--val-matrix', type=str, default=None, help='Encoded Validation feature-matrix CSV (required for GBDT)')
    parser.add_argument('--learner', type=str, default='gbdt_raw',
                        help='Default learner name (e.g. logreg_l2) or kind (LogRegL1, LogRegL2, RandomForest, GBDT)')
    parser.add_argument('--seed', type=int, default=0, help='Learner seed')
    parser.add_argument('--n-jobs', type=int, default=config.n_jobs, help='Parallel workers for forest trees')
    parser.add_argument('--output-model', type=str, default='model.joblib', help='Local path to save trained model')
    parser.add_argument('--metrics-path', type=str, default=None, help='Path to write metrics JSON (default: same dir as model)')
    parser.add_argument('--mlflow', action='store_true', help='Log the run to the local MLflow store')
    args = parser.parse_args()

    logging.basicConfig(level=config.logging_level(),
                        format='%(asctime)s - %(levelname)s - %(name)s - %(message)s')
    try:
        sys.exit(main(args))
    except Exception as e:
        print(f"✗ Training failed: {e}", file=sys.stderr)
        sys.exit(1)
