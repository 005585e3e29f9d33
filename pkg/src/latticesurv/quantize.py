"""Percentile-grid binarization of numeric features.

Each numeric column is summarized by empirical percentile cutoffs on the
training data and encoded as threshold indicators: bit ``j`` is 1 exactly
when the value is at or above cutoff ``j``. Encodings are monotone staircases
in the underlying value, which keeps downstream linear models easy to read.

Cutoffs are upper order statistics: for percentile ``q`` on ``n`` sorted
values the cutoff is the element at index ``ceil((n - 1) * q / 100)``. Ties
in the data collapse to duplicate percentiles, which are deduplicated, and a
cutoff equal to the column minimum is discarded because its indicator would
be constant on the training data. Columns that are entirely constant are
dropped. A varying column whose grid percentiles all collapse onto the
minimum falls back to a single cutoff at its smallest separating value, so
every retained feature produces at least one informative bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

#: Decile grid used when no percentile grid is supplied.
DEFAULT_GRID = tuple(range(10, 100, 10))


def fit_cutoffs(column, percentile_grid: Sequence[float] = DEFAULT_GRID) -> list[float]:
    """Deduplicated, strictly increasing cutoffs for one numeric column.

    Returns an empty list for constant columns. Raises on NaN input and on
    percentiles outside ``(0, 100)``.
    """
    col = np.asarray(column, dtype=float)
    if col.ndim != 1 or col.size == 0:
        raise ValueError("column must be a non-empty 1-d array")
    if np.any(np.isnan(col)):
        raise DataError("column contains NaN")
    grid = [float(q) for q in percentile_grid]
    if not grid or any(q <= 0 or q >= 100 for q in grid):
        raise ValueError("percentiles must lie strictly between 0 and 100")
    lo = float(col.min())
    hi = float(col.max())
    if lo == hi:
        return []
    ordered = np.sort(col)
    n = ordered.size
    cutoffs: list[float] = []
    for q in sorted(grid):
        value = float(ordered[math.ceil((n - 1) * q / 100.0)])
        if value > lo and (not cutoffs or value > cutoffs[-1]):
            cutoffs.append(value)
    if not cutoffs:
        # Skewed column whose grid never clears the minimum: keep the
        # smallest value that separates it from the minimum.
        cutoffs = [float(ordered[np.searchsorted(ordered, lo, side="right")])]
    return cutoffs


def encode(values, cutoffs: Sequence[float]) -> np.ndarray:
    """Threshold indicators ``value >= cutoff`` for each cutoff.

    ``values`` may be a scalar or 1-d array; the result appends one axis of
    length ``len(cutoffs)``.
    """
    values = np.asarray(values, dtype=float)
    cuts = np.asarray(list(cutoffs), dtype=float)
    if cuts.size and np.any(np.diff(cuts) <= 0):
        raise ValueError("cutoffs must be strictly increasing")
    return (values[..., None] >= cuts).astype(float)


@dataclass
class QuantizationMap:
    """Fitted cutoffs per feature plus the features dropped at fit time."""

    cutoffs: dict[str, list[float]]
    dropped: dict[str, str] = field(default_factory=dict)

    @property
    def n_columns(self) -> int:
        return sum(len(c) for c in self.cutoffs.values())

    def column_names(self) -> list[str]:
        return [f"{feat}>={cut:g}"
                for feat, cuts in self.cutoffs.items() for cut in cuts]

    def save(self, path: str | Path) -> None:
        payload = {"cutoffs": self.cutoffs, "dropped": self.dropped}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "QuantizationMap":
        payload = json.loads(Path(path).read_text())
        return cls(cutoffs={k: [float(c) for c in v]
                            for k, v in payload["cutoffs"].items()},
                   dropped=dict(payload.get("dropped", {})))


def fit(table: Mapping[str, Sequence[float]],
        percentile_grid: Sequence[float] = DEFAULT_GRID) -> QuantizationMap:
    """Fit cutoffs for every column of a feature table.

    ``table`` maps feature names to equal-length numeric columns. Constant
    columns are dropped and recorded (with a reason) on the returned map.
    """
    cutoffs: dict[str, list[float]] = {}
    dropped: dict[str, str] = {}
    lengths = set()
    for name, column in table.items():
        col = np.asarray(column, dtype=float)
        lengths.add(col.shape[0] if col.ndim else 0)
        cuts = fit_cutoffs(col, percentile_grid)
        if cuts:
            cutoffs[name] = cuts
        else:
            dropped[name] = "constant column"
            logger.warning("dropping constant feature %r", name)
    if len(lengths) > 1:
        raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
    return QuantizationMap(cutoffs=cutoffs, dropped=dropped)


def transform(table: Mapping[str, Sequence[float]],
              qmap: QuantizationMap) -> tuple[np.ndarray, list[str]]:
    """Encode a feature table against a fitted map.

    Returns the binary design matrix (rows by total cutoffs) and the output
    column names. Every feature retained in the map must be present; extra
    table columns are ignored.
    """
    blocks = []
    n_rows = None
    for name, cuts in qmap.cutoffs.items():
        if name not in table:
            raise DataError(f"feature {name!r} missing from table")
        col = np.asarray(table[name], dtype=float)
        if np.any(np.isnan(col)):
            raise DataError(f"feature {name!r} contains NaN")
        if n_rows is None:
            n_rows = col.shape[0]
        elif col.shape[0] != n_rows:
            raise DataError(f"feature {name!r} has {col.shape[0]} rows, "
                            f"expected {n_rows}")
        blocks.append(encode(col, cuts))
    if not blocks:
        return np.zeros((0, 0)), []
    return np.concatenate(blocks, axis=-1), qmap.column_names()
