"""Histogram gradient-boosted trees on the logistic loss with validation early stopping.

Each iteration grows one depth-wise regression tree on the per-sample gradient
``p - y`` and hessian ``p (1 - p)``. Leaves hold the Newton step ``-G / (H + lambda)``
and the raw score is ``base_score + learning_rate * sum(leaf values)``.

Numeric columns are split on histogram bins fitted on the training rows. Raw
categorical columns (``RawCategoricalPathway`` codes) are split by ordering their
categories on ``G / (H + lambda)`` and scanning prefixes; codes never seen at the
node go right.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from evaluation import auroc
from trees import TreeNode, predict_tree, tree_depth

logger = logging.getLogger(__name__)

MetricFn = Callable[[np.ndarray, np.ndarray], float]


def logistic_grad_hess(y: np.ndarray, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = expit(raw)
    return p - y, p * (1.0 - p)


def logistic_loss(y: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Per-sample logistic loss on raw (log-odds) scores."""
    return np.logaddexp(0.0, raw) - y * raw


class EarlyStopping:
    """Stop once the score has not strictly improved for ``patience`` updates."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_score = -np.inf
        self.best_iteration = 0
        self.history: list[float] = []

    def update(self, iteration: int, score: float) -> bool:
        """Record ``score`` for ``iteration``; True means stop now."""
        self.history.append(float(score))
        if score > self.best_score:
            self.best_score = float(score)
            self.best_iteration = iteration
        return iteration - self.best_iteration >= self.patience


@dataclass(frozen=True)
class BinMapper:
    """Per-column bin edges fitted on training rows.

    A numeric value lands in bin ``searchsorted(edges, x, 'left')``, so bin ``b``
    holds ``edges[b-1] < x <= edges[b]`` and a split after bin ``b`` has threshold
    ``edges[b]``. Categorical columns use their integer codes as bins.
    """

    edges: tuple[Optional[np.ndarray], ...]
    categorical: np.ndarray
    n_bins: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, categorical: Optional[np.ndarray] = None, max_bins: int = 256) -> "BinMapper":
        if max_bins < 2:
            raise ValueError(f"max_bins must be >= 2, got {max_bins}")
        p = X.shape[1]
        categorical = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
        edges: list[Optional[np.ndarray]] = []
        n_bins = np.empty(p, dtype=np.int64)
        for j in range(p):
            column = X[:, j]
            if categorical[j]:
                edges.append(None)
                n_bins[j] = int(column.max()) + 1 if column.size else 1
                continue
            distinct = np.unique(column)
            if distinct.size <= max_bins:
                cuts = distinct[:-1] + (distinct[1:] - distinct[:-1]) / 2.0
            else:
                cuts = np.unique(np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1]))
            edges.append(cuts)
            n_bins[j] = cuts.size + 1
        return cls(edges=tuple(edges), categorical=categorical, n_bins=n_bins)

    def transform(self, X: np.ndarray) -> np.ndarray:
        bins = np.empty(X.shape, dtype=np.int64)
        for j, cuts in enumerate(self.edges):
            if cuts is None:
                bins[:, j] = np.clip(X[:, j].astype(np.int64), 0, self.n_bins[j] - 1)
            else:
                bins[:, j] = np.searchsorted(cuts, X[:, j], side="left")
        return bins


@dataclass(frozen=True)
class GrowthParams:
    max_depth: int = 8
    reg_lambda: float = 1.0
    min_samples_leaf: int = 20
    min_split_gain: float = 0.0


def _histograms(bins: np.ndarray, g: np.ndarray, h: np.ndarray, width: int):
    n, p = bins.shape
    flat = (bins + np.arange(p) * width).ravel()
    size = p * width
    hist_g = np.bincount(flat, weights=np.repeat(g, p), minlength=size).reshape(p, width)
    hist_h = np.bincount(flat, weights=np.repeat(h, p), minlength=size).reshape(p, width)
    hist_n = np.bincount(flat, minlength=size).reshape(p, width)
    return hist_g, hist_h, hist_n


def _gain(GL, HL, GR, HR, G, H, lam):
    return GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - G ** 2 / (H + lam)


def _best_split(bins, g, h, mapper: BinMapper, params: GrowthParams):
    """Best (gain, feature, bin, category set) over all columns, or None."""
    lam, min_leaf = params.reg_lambda, params.min_samples_leaf
    width = int(mapper.n_bins.max())
    hist_g, hist_h, hist_n = _histograms(bins, g, h, width)
    G, H, N = g.sum(), h.sum(), g.size
    best = None

    numeric = ~mapper.categorical
    if numeric.any():
        GL = np.cumsum(hist_g[numeric], axis=1)
        HL = np.cumsum(hist_h[numeric], axis=1)
        NL = np.cumsum(hist_n[numeric], axis=1)
        gains = _gain(GL, HL, G - GL, H - HL, G, H, lam)
        valid = (NL >= min_leaf) & (N - NL >= min_leaf)
        valid &= np.arange(width)[None, :] < (mapper.n_bins[numeric] - 1)[:, None]
        gains = np.where(valid, gains, -np.inf)
        flat = int(np.argmax(gains))
        row, b = divmod(flat, width)
        if np.isfinite(gains[row, b]):
            best = (float(gains[row, b]), int(np.flatnonzero(numeric)[row]), b, None)

    for j in np.flatnonzero(mapper.categorical):
        present = np.flatnonzero(hist_n[j] > 0)
        if present.size < 2:
            continue
        ratio = hist_g[j, present] / (hist_h[j, present] + lam)
        ordered = present[np.argsort(ratio, kind="mergesort")]
        GL = np.cumsum(hist_g[j, ordered])[:-1]
        HL = np.cumsum(hist_h[j, ordered])[:-1]
        NL = np.cumsum(hist_n[j, ordered])[:-1]
        gains = _gain(GL, HL, G - GL, H - HL, G, H, lam)
        gains = np.where((NL >= min_leaf) & (N - NL >= min_leaf), gains, -np.inf)
        k = int(np.argmax(gains))
        if np.isfinite(gains[k]) and (best is None or gains[k] > best[0]):
            best = (float(gains[k]), int(j), None, frozenset(int(c) for c in ordered[: k + 1]))
    return best


def grow_tree(bins: np.ndarray, g: np.ndarray, h: np.ndarray, mapper: BinMapper,
              params: GrowthParams = GrowthParams()) -> TreeNode:
    """Depth-wise second-order regression tree over pre-binned rows."""

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        gi, hi = g[idx], h[idx]
        value = float(-gi.sum() / (hi.sum() + params.reg_lambda))
        if depth >= params.max_depth or idx.size < 2 * params.min_samples_leaf:
            return TreeNode(value=value, n_samples=idx.size)
        split = _best_split(bins[idx], gi, hi, mapper, params)
        if split is None or split[0] <= params.min_split_gain:
            return TreeNode(value=value, n_samples=idx.size)
        _, feature, b, categories = split
        column = bins[idx, feature]
        if categories is None:
            left = column <= b
            threshold = float(mapper.edges[feature][b])
        else:
            left = np.isin(column, np.fromiter(categories, dtype=np.int64))
            threshold = float("nan")
        return TreeNode(
            value=value, n_samples=idx.size, feature=feature, threshold=threshold, categories=categories,
            left=grow(idx[left], depth + 1), right=grow(idx[~left], depth + 1),
        )

    return grow(np.arange(bins.shape[0]), 0)


@dataclass(frozen=True)
class BoostedEnsemble:
    base_score: float
    learning_rate: float
    trees: tuple[TreeNode, ...]
    best_iteration: int
    best_score: float
    iterations_run: int
    validation_history: tuple[float, ...] = field(default=())

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        raw = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            raw += self.learning_rate * predict_tree(tree, X)
        return raw

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.raw_score(X))


def fit_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    val_X: np.ndarray,
    val_y: np.ndarray,
    num_iterations: int = 200,
    learning_rate: float = 0.05,
    max_depth: int = 8,
    early_stopping_patience: int = 20,
    seed: int = 0,
    reg_lambda: float = 1.0,
    min_samples_leaf: int = 20,
    min_split_gain: float = 0.0,
    max_bins: int = 256,
    categorical: Optional[np.ndarray] = None,
    eval_metric: Optional[MetricFn] = None,
) -> BoostedEnsemble:
    """Boost up to ``num_iterations`` trees, keeping the prefix with the best validation score.

    ``eval_metric(scores, labels)`` defaults to validation AUROC. Growth is
    deterministic; ``seed`` is accepted for the uniform learner contract.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    val_X = np.asarray(val_X, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=np.float64)
    if val_X.shape[0] == 0:
        raise ValueError("validation set is empty; early stopping needs validation rows")
    if np.unique(val_y).size < 2:
        raise ValueError("validation set needs both classes")
    if np.unique(y).size < 2:
        raise ValueError("boosting needs both classes in y")
    if num_iterations < 1:
        raise ValueError(f"num_iterations must be >= 1, got {num_iterations}")

    metric = eval_metric or auroc
    params = GrowthParams(max_depth=max_depth, reg_lambda=reg_lambda,
                          min_samples_leaf=min_samples_leaf, min_split_gain=min_split_gain)
    mapper = BinMapper.fit(X, categorical, max_bins=max_bins)
    bins = mapper.transform(X)

    rate = y.mean()
    base_score = float(np.log(rate / (1.0 - rate)))
    raw_train = np.full(X.shape[0], base_score)
    raw_val = np.full(val_X.shape[0], base_score)
    stopper = EarlyStopping(early_stopping_patience)
    trees: list[TreeNode] = []
    for iteration in range(1, num_iterations + 1):
        g, h = logistic_grad_hess(y, raw_train)
        tree = grow_tree(bins, g, h, mapper, params)
        trees.append(tree)
        raw_train += learning_rate * predict_tree(tree, X)
        raw_val += learning_rate * predict_tree(tree, val_X)
        if stopper.update(iteration, metric(raw_val, val_y)):
            break

    kept = tuple(trees[: stopper.best_iteration])
    logger.info("GBDT stopped after %d iterations; best iteration %d (validation %.4f), max depth %d",
                len(trees), stopper.best_iteration, stopper.best_score,
                max((tree_depth(t) for t in kept), default=0))
    return BoostedEnsemble(
        base_score=base_score,
        learning_rate=float(learning_rate),
        trees=kept,
        best_iteration=stopper.best_iteration,
        best_score=stopper.best_score,
        iterations_run=len(trees),
        validation_history=tuple(stopper.history),
    )
