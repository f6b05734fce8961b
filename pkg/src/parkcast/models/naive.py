"""Training-free benchmark forecasters."""
from __future__ import annotations

import numpy as np

from ..datamodel import MINUTES_PER_WEEK, MinuteSeries
from ..errors import InsufficientHistory


def naive_seasonal(history: MinuteSeries, t: int, h: int, period: int = MINUTES_PER_WEEK) -> float:
    """Value observed one period (a week) before the predicted instant ``t + h``."""
    value = float(history.at(t + h - period))
    if not np.isfinite(value):
        raise InsufficientHistory(f"no observation at minute {t + h - period}")
    return value


def naive_random_walk(history: MinuteSeries, t: int, h: int = 0) -> float:
    """Last observed value at or before ``t``; identical for every horizon."""
    i = min(t - history.start, len(history.values) - 1)
    if i < 0:
        raise InsufficientHistory(f"no observation at or before minute {t}")
    past = np.asarray(history.values[:i + 1], dtype=float)
    finite = np.flatnonzero(np.isfinite(past))
    if finite.size == 0:
        raise InsufficientHistory(f"no observation at or before minute {t}")
    return float(past[finite[-1]])


def seasonal_naive_matrix(history: MinuteSeries, times, horizons,
                          period: int = MINUTES_PER_WEEK) -> np.ndarray:
    """(rows, horizons) seasonal predictions; NaN where history is missing."""
    times = np.asarray(times, dtype=np.int64)
    return np.column_stack([history.at(times + h - period) for h in horizons])


def random_walk_matrix(history: MinuteSeries, times, horizons) -> np.ndarray:
    values = np.asarray(history.values, dtype=float)
    # forward-fill so each minute carries the last finite observation
    idx = np.where(np.isfinite(values), np.arange(len(values)), -1)
    idx = np.maximum.accumulate(idx)
    held = np.where(idx >= 0, values[np.clip(idx, 0, None)], np.nan)
    last = MinuteSeries(history.start, held).at(np.asarray(times, dtype=np.int64))
    return np.repeat(last[:, None], len(list(horizons)), axis=1)
