"""Negative-class downsampling with fixed positive sets.

For a ratio x every positive in a split is kept and ``min(x * #pos, #neg)``
negatives are drawn uniformly without replacement. Draws are independent per
ratio and per split, each seeded from ``SeedSequence([seed, x, split])``.
The Test split is never downsampled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (1, 2, 5, 10)
_SPLIT_STREAMS = {"Train": 0, "Validation": 1}


class SamplingError(ValueError):
    """Raised when a ratio is undefined (no positives) or invalid."""


@dataclass(frozen=True)
class RatioConfig:
    ratios: tuple[int, ...] = DEFAULT_RATIOS
    seed: int = 0

    def __post_init__(self):
        if not self.ratios:
            raise ValueError("at least one downsampling ratio is required")
        for x in self.ratios:
            if int(x) != x or x < 1:
                raise ValueError(f"ratios must be positive integers, got {x!r}")
        object.__setattr__(self, "ratios", tuple(int(x) for x in self.ratios))


@dataclass
class DownsampleResult:
    rows: pd.DataFrame
    ratio: int
    positives: int
    negatives: int
    exhausted: bool

    @property
    def achieved_ratio(self) -> float:
        return self.negatives / self.positives


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream]))


def downsample(split_rows: pd.DataFrame, x: int, seed: Union[int, np.random.Generator],
               label_column: str = "LABEL") -> DownsampleResult:
    """Keep all positives and draw ``min(x * #pos, #neg)`` negatives, then shuffle."""
    if x < 1:
        raise SamplingError(f"ratio must be >= 1, got {x}")
    labels = split_rows[label_column].to_numpy()
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    if pos_idx.size == 0:
        raise SamplingError("split has no positives; the positive-to-negative ratio is undefined")

    rng = np.random.default_rng(seed) if isinstance(seed, (int, np.integer)) else seed
    wanted = x * pos_idx.size
    exhausted = wanted > neg_idx.size
    n_neg = min(wanted, neg_idx.size)
    chosen = rng.choice(neg_idx, size=n_neg, replace=False) if n_neg else np.empty(0, dtype=np.int64)
    order = np.concatenate([pos_idx, np.sort(chosen)])
    order = order[rng.permutation(order.size)]
    if exhausted:
        logger.warning("Negative pool exhausted at 1:%d: kept all %d negatives for %d positives (achieved 1:%.2f)",
                       x, neg_idx.size, pos_idx.size, neg_idx.size / pos_idx.size)
    return DownsampleResult(
        rows=split_rows.iloc[order],
        ratio=x,
        positives=int(pos_idx.size),
        negatives=int(n_neg),
        exhausted=exhausted,
    )


@dataclass
class RatioCell:
    train: pd.DataFrame
    validation: pd.DataFrame
    test: pd.DataFrame
    notes: dict = field(default_factory=dict)


def build_ratio_grid(
    train: pd.DataFrame,
    validation: pd.DataFrame,
    test: pd.DataFrame,
    config: RatioConfig = RatioConfig(),
) -> dict[int, RatioCell]:
    """Downsample Train and Validation per ratio; Test is passed through untouched."""
    grid: dict[int, RatioCell] = {}
    for x in config.ratios:
        sampled = {}
        notes = {}
        for name, frame in (("Train", train), ("Validation", validation)):
            result = downsample(frame, x, derive_rng(config.seed, x, _SPLIT_STREAMS[name]))
            sampled[name] = result.rows
            notes[name] = {"positives": result.positives, "negatives": result.negatives,
                           "exhausted": result.exhausted}
        grid[x] = RatioCell(sampled["Train"], sampled["Validation"], test, notes)
    return grid


def summarize_grid(grid: dict[int, RatioCell]) -> pd.DataFrame:
    records = []
    for x, cell in grid.items():
        for name, frame in (("Train", cell.train), ("Validation", cell.validation), ("Test", cell.test)):
            positives = int(frame["LABEL"].sum())
            records.append({"ratio": f"1:{x}", "split": name, "positives": positives,
                            "negatives": len(frame) - positives})
    return pd.DataFrame.from_records(records, columns=["ratio", "split", "positives", "negatives"])


def write_sample_manifest(grid: dict[int, RatioCell], path: Union[str, Path]) -> None:
    """Row keys of every downsampled Train/Validation set, for audit."""
    frames = []
    for x, cell in grid.items():
        for name, frame in (("Train", cell.train), ("Validation", cell.validation)):
            keys = frame[["LOAN_ID", "ORIG_DATE", "ACT_PERIOD", "LABEL"]].copy()
            keys.insert(0, "split", name)
            keys.insert(0, "ratio", x)
            frames.append(keys)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
