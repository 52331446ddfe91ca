"""AUROC, ROC curves and grouped permutation importance."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import rankdata

from feature_encoding import FeatureMatrix

logger = logging.getLogger(__name__)


class ScoresProbabilities(Protocol):
    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores for {labels.size} labels")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    positives = labels == 1
    if not positives.any() or positives.all():
        raise ValueError("AUROC is undefined with a single class")
    return scores, positives


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties counting one half."""
    scores, positives = _check_inputs(scores, labels)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    ranks = rankdata(scores, method="average")
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "fpr": self.fpr, "tpr": self.tpr})


def roc_curve(scores, labels) -> RocCurve:
    """One point per distinct score, from (0, 0) at threshold +inf to (1, 1)."""
    scores, positives = _check_inputs(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    hits = positives[order].astype(np.float64)
    # last position of every run of equal scores
    ends = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    tp = np.cumsum(hits)[ends]
    fp = (ends + 1) - tp
    return RocCurve(
        thresholds=np.r_[np.inf, sorted_scores[ends]],
        fpr=np.r_[0.0, fp / fp[-1]],
        tpr=np.r_[0.0, tp / tp[-1]],
    )


def write_roc_csv(curve: RocCurve, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.to_frame().to_csv(path, index=False, float_format="%.10g")


@dataclass(frozen=True)
class ImportanceReport:
    baseline: float
    features: tuple[str, ...]
    drops: np.ndarray  # (n_features, repeats)

    @property
    def mean_drop(self) -> np.ndarray:
        return self.drops.mean(axis=1)

    @property
    def sd(self) -> np.ndarray:
        return self.drops.std(axis=1, ddof=0)

    @property
    def rank(self) -> np.ndarray:
        order = sorted(range(len(self.features)), key=lambda i: (-self.mean_drop[i], self.features[i]))
        ranks = np.empty(len(self.features), dtype=np.int64)
        ranks[order] = np.arange(1, len(self.features) + 1)
        return ranks

    def top(self, k: int = 1) -> list[str]:
        frame = self.to_frame()
        return frame["feature"].head(k).tolist()

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "feature": list(self.features),
            "mean_drop": self.mean_drop,
            "sd": self.sd,
            "rank": self.rank,
        })
        return frame.sort_values("rank", kind="mergesort").reset_index(drop=True)


def write_importance_csv(report: ImportanceReport, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(path, index=False, float_format="%.10g")


def _group_drops(model, values, labels, columns, baseline, seed, group_index, repeats) -> np.ndarray:
    drops = np.empty(repeats)
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, group_index, r]))
        perm = rng.permutation(values.shape[0])
        shuffled = values.copy()
        shuffled[:, columns] = values[perm][:, columns]
        drops[r] = baseline - auroc(model.predict_proba(shuffled), labels)
    return drops


def permutation_importance(
    model: ScoresProbabilities,
    X: FeatureMatrix,
    y: Optional[np.ndarray] = None,
    repeats: int = 5,
    seed: int = 0,
    n_jobs: int = 1,
) -> ImportanceReport:
    """AUROC drop when each source feature's columns are shuffled jointly.

    One-hot blocks, missing flags and the ZIP coordinates are permuted together
    with their source feature. Repeat ``r`` of group ``g`` draws its permutation
    from ``SeedSequence([seed, g, r])``.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    labels = X.labels if y is None else np.asarray(y)
    values = X.values
    baseline = auroc(model.predict_proba(values), labels)
    groups = X.groups()
    drops = Parallel(n_jobs=n_jobs)(
        delayed(_group_drops)(model, values, labels, columns, baseline, seed, g, repeats)
        for g, columns in enumerate(groups.values())
    )
    drops = np.vstack(drops) if drops else np.empty((0, repeats))
    report = ImportanceReport(baseline=baseline, features=tuple(groups), drops=drops)
    logger.info("Permutation importance over %d features (baseline AUROC %.4f), top: %s",
                len(groups), baseline, ", ".join(report.top(3)))
    return report
