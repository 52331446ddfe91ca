"""Binary decision trees: the shared node type, CART (Gini) growth and random forests."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from joblib import Parallel, delayed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeNode:
    """A split node or a leaf.

    Rows go left when ``x[feature] <= threshold``; for a categorical split they go
    left when their code is in ``categories``. Leaves carry ``value``: the positive
    fraction for classification trees, the raw leaf weight for boosted trees.
    """

    value: float
    n_samples: int = 0
    feature: int = -1
    threshold: float = float("nan")
    categories: Optional[frozenset] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def goes_left(self, column: np.ndarray) -> np.ndarray:
        if self.categories is not None:
            return np.isin(column, np.array(sorted(self.categories), dtype=np.float64))
        return column <= self.threshold


def predict_tree(root: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf value reached by every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.float64)
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            out[idx] = node.value
            continue
        left = node.goes_left(X[idx, node.feature])
        stack.append((node.left, idx[left]))
        stack.append((node.right, idx[~left]))
    return out


def tree_depth(root: TreeNode) -> int:
    if root.is_leaf:
        return 0
    return 1 + max(tree_depth(root.left), tree_depth(root.right))


def count_leaves(root: TreeNode) -> int:
    if root.is_leaf:
        return 1
    return count_leaves(root.left) + count_leaves(root.right)


def features_used(root: TreeNode) -> set[int]:
    if root.is_leaf:
        return set()
    return {root.feature} | features_used(root.left) | features_used(root.right)


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    return a if mid >= b else mid


def _n_candidate_features(max_features: Union[None, str, int], p: int) -> int:
    if max_features is None:
        return p
    if max_features == "sqrt":
        return max(1, int(np.ceil(np.sqrt(p))))
    if isinstance(max_features, int) and 0 < max_features:
        return min(p, max_features)
    raise ValueError(f"max_features must be None, 'sqrt' or a positive int, got {max_features!r}")


def _best_gini_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, features: np.ndarray):
    """Lowest weighted child Gini impurity over the candidate features.

    Returns ``(impurity, feature, threshold)`` or ``None`` when every candidate is constant.
    """
    n = idx.size
    best = None
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="mergesort")
        xs, ys = xs[order], y[idx][order]
        boundary = np.flatnonzero(xs[:-1] < xs[1:])
        if boundary.size == 0:
            continue
        n_left = boundary + 1.0
        n_right = n - n_left
        pos_left = np.cumsum(ys)[boundary]
        pos_right = ys.sum() - pos_left
        p_left = pos_left / n_left
        p_right = pos_right / n_right
        impurity = (n_left * 2.0 * p_left * (1.0 - p_left) + n_right * 2.0 * p_right * (1.0 - p_right)) / n
        k = int(np.argmin(impurity))
        if best is None or impurity[k] < best[0]:
            best = (float(impurity[k]), int(f), _midpoint(float(xs[boundary[k]]), float(xs[boundary[k] + 1])))
    return best


def fit_decision_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int = 15,
    min_samples_split: int = 8,
    max_features: Union[None, str, int] = None,
    rng: Optional[np.random.Generator] = None,
) -> TreeNode:
    """Grow a CART classification tree on Gini impurity.

    A node becomes a leaf when it is pure, sits at ``max_depth``, holds fewer than
    ``min_samples_split`` rows, or no candidate feature separates its rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("cannot grow a tree on zero rows")
    p = X.shape[1]
    k = _n_candidate_features(max_features, p)
    rng = rng if rng is not None else np.random.default_rng(0)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        n = idx.size
        positives = y[idx].sum()
        value = float(positives / n)
        if positives == 0 or positives == n or depth >= max_depth or n < min_samples_split:
            return TreeNode(value=value, n_samples=n)
        features = np.arange(p) if k == p else rng.choice(p, size=k, replace=False)
        split = _best_gini_split(X, y, idx, features)
        if split is None:
            return TreeNode(value=value, n_samples=n)
        _, feature, threshold = split
        left = X[idx, feature] <= threshold
        return TreeNode(
            value=value, n_samples=n, feature=feature, threshold=threshold,
            left=grow(idx[left], depth + 1), right=grow(idx[~left], depth + 1),
        )

    return grow(np.arange(X.shape[0]), 0)


def _fit_forest_member(X, y, seed_seq, bootstrap, **tree_params) -> TreeNode:
    rng = np.random.default_rng(seed_seq)
    if bootstrap:
        sample = rng.integers(0, X.shape[0], size=X.shape[0])
        X, y = X[sample], y[sample]
    return fit_decision_tree(X, y, rng=rng, **tree_params)


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 150,
    min_samples_split: int = 8,
    max_depth: int = 15,
    max_features: Union[None, str, int] = "sqrt",
    bootstrap: bool = True,
    seed: int = 0,
    n_jobs: int = 1,
) -> tuple[TreeNode, ...]:
    """Bagged CART trees; each tree gets its own child of ``SeedSequence(seed)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(y).size < 2:
        raise ValueError("random forest needs both classes in y")
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_forest_member)(
            X, y, child, bootstrap,
            max_depth=max_depth, min_samples_split=min_samples_split, max_features=max_features,
        )
        for child in children
    )
    logger.debug("random forest: %d trees, mean depth %.1f", n_trees,
                 float(np.mean([tree_depth(t) for t in trees])))
    return tuple(trees)


def predict_forest(trees: tuple[TreeNode, ...], X: np.ndarray) -> np.ndarray:
    """Mean of the per-tree positive fractions."""
    return np.mean([predict_tree(tree, X) for tree in trees], axis=0)
