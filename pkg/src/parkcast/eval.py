"""Forecast metrics, per-horizon evaluation reports, error exports and latency.

MAE and MSE follow their usual definitions. MASE divides a model's MAE by the
MAE of a naive benchmark over the same instances, so values below 1 beat the
benchmark. The per-instance scaled error is ``|e| / MAE_naive(h)``, making its
mean over a horizon equal to that horizon's MASE.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import MinuteSeries, to_iso
from .errors import EmptyInput, NaiveZero
from .features import target_series
from .models.naive import random_walk_matrix, seasonal_naive_matrix


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if pred.size == 0 or actual.size == 0:
        raise EmptyInput("metrics need at least one value")
    if pred.shape != actual.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {actual.size} actuals")
    return pred, actual


def mse(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.mean((p - a) ** 2))


def mae(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.mean(np.abs(p - a)))


def mase(model_mae: float, naive_mae: float) -> float:
    if not naive_mae > 0:
        raise NaiveZero(f"naive MAE is {naive_mae}; MASE undefined")
    return float(model_mae / naive_mae)


@dataclass
class MetricSet:
    mse: float
    mae: float
    mase: float  # NaN when the naive MAE is zero
    n: int
    naive_mae: float = float("nan")

    @classmethod
    def compute(cls, pred, actual, naive) -> "MetricSet":
        m = mae(pred, actual)
        nm = mae(naive, actual)
        try:
            s = mase(m, nm)
        except NaiveZero:
            s = float("nan")
        return cls(mse(pred, actual), m, s, int(np.size(pred)), nm)

    @property
    def naive_zero(self) -> bool:
        return not self.naive_mae > 0


@dataclass
class LatencyStats:
    n: int
    mean: float
    median: float
    p95: float
    min: float
    max: float


@dataclass
class EvaluationReport:
    target: str
    horizons: tuple
    per_horizon: list
    pooled: MetricSet
    times: np.ndarray = field(repr=False)
    scaled_errors: np.ndarray = field(repr=False)  # (rows, horizons)
    n_dropped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def naive_zero_horizons(self) -> list:
        return [h for h, m in zip(self.horizons, self.per_horizon) if m.naive_zero]

    def mase_by_horizon(self) -> dict:
        return {h: m.mase for h, m in zip(self.horizons, self.per_horizon)}

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "horizons": list(self.horizons),
            "pooled": _clean(asdict(self.pooled)),
            "per_horizon": {str(h): _clean(asdict(m))
                            for h, m in zip(self.horizons, self.per_horizon)},
            "naive_zero_horizons": self.naive_zero_horizons,
            "n_rows": int(len(self.times)),
            "n_dropped": int(self.n_dropped),
            "scaled_error_summary": error_summary(self.scaled_errors),
            "meta": self.meta,
        }


def _clean(d):
    # JSON has no NaN; undefined values are written as null
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
            for k, v in d.items()}


def evaluate_predictions(pred, actual, naive, times, horizons, target="occupancy",
                         meta=None) -> EvaluationReport:
    """Metrics per horizon column and pooled over all (row, horizon) pairs.

    Rows where the naive benchmark is unavailable are dropped and counted.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    actual = np.atleast_2d(np.asarray(actual, dtype=float))
    naive = np.atleast_2d(np.asarray(naive, dtype=float))
    if not pred.shape == actual.shape == naive.shape:
        raise ValueError(f"shape mismatch {pred.shape} / {actual.shape} / {naive.shape}")
    horizons = tuple(int(h) for h in horizons)
    if pred.shape[1] != len(horizons):
        raise ValueError("one column per horizon required")
    keep = np.all(np.isfinite(naive), axis=1) & np.all(np.isfinite(actual), axis=1)
    if not keep.any():
        raise EmptyInput("no rows with both ground truth and naive benchmark")
    pred, actual, naive = pred[keep], actual[keep], naive[keep]
    times = np.asarray(times)[keep]
    per_h = [MetricSet.compute(pred[:, j], actual[:, j], naive[:, j])
             for j in range(len(horizons))]
    pooled = MetricSet.compute(pred, actual, naive)
    scale = np.array([m.naive_mae if m.naive_mae > 0 else np.nan for m in per_h])
    scaled = np.abs(pred - actual) / scale
    return EvaluationReport(target, horizons, per_h, pooled, times, scaled,
                            int(np.count_nonzero(~keep)), dict(meta or {}))


def naive_baseline(dataset, target, times, horizons, kind="seasonal") -> np.ndarray:
    """Naive predictions for each row time and horizon from the full dataset history."""
    history = MinuteSeries(dataset.grid.start, target_series(dataset, target))
    if kind == "seasonal":
        return seasonal_naive_matrix(history, times, horizons)
    if kind == "random_walk":
        return random_walk_matrix(history, times, horizons)
    raise ValueError(f"unknown naive kind {kind!r}")


def evaluate(artifact, test_set, naive_pred, meta=None) -> EvaluationReport:
    """Score an artifact on a supervised test set against given naive predictions."""
    artifact.check_schema(test_set.schema_digest)
    pred = artifact.predict(test_set.X, test_set.schema_digest)
    m = {"model_kind": artifact.kind}
    m.update(meta or {})
    return evaluate_predictions(pred, test_set.Y, naive_pred, test_set.times,
                                test_set.horizons, test_set.target, m)


def error_summary(scaled) -> dict:
    s = np.asarray(scaled, dtype=float).ravel()
    s = s[np.isfinite(s)]
    if s.size == 0:
        return {"n": 0, "q1": None, "median": None, "q3": None, "fraction_below_1": None}
    q1, med, q3 = np.percentile(s, [25, 50, 75])
    return {"n": int(s.size), "q1": float(q1), "median": float(med), "q3": float(q3),
            "mean": float(s.mean()), "fraction_below_1": float(np.mean(s < 1.0))}


def export_error_distribution(report: EvaluationReport, path) -> dict:
    """Write ``timestamp,horizon_min,scaled_error`` rows and return the summary.

    The summary is also stored next to the CSV as ``<stem>_summary.json``.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "horizon_min", "scaled_error"])
        for i, t in enumerate(report.times):
            stamp = to_iso(int(t))
            for j, h in enumerate(report.horizons):
                w.writerow([stamp, h, repr(float(report.scaled_errors[i, j]))])
    summary = error_summary(report.scaled_errors)
    with open(path.with_name(path.stem + "_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def write_report(reports, path, meta=None):
    """Write one or more reports as a single deterministic JSON document."""
    if isinstance(reports, EvaluationReport):
        reports = [reports]
    doc = {"reports": [r.to_dict() for r in reports], "meta": dict(meta or {})}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return doc


def measure_latency(artifact, samples, repetitions=100) -> LatencyStats:
    """Wall-clock seconds per single-row prediction after one warm-up pass."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    for x in samples:
        artifact.predict(x)
    times = np.empty(repetitions)
    for r in range(repetitions):
        x = samples[r % len(samples)]
        t0 = time.perf_counter()
        artifact.predict(x)
        times[r] = time.perf_counter() - t0
    return LatencyStats(repetitions, float(times.mean()), float(np.median(times)),
                        float(np.percentile(times, 95)), float(times.min()),
                        float(times.max()))
