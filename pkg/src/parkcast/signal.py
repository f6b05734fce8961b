"""Smoothing filter, resampling, rolling sums and lookback windows.

Cutoff frequencies are normalized to the Nyquist frequency (1.0 == Nyquist).
Filtering is always causal and single-pass so that offline features match
what a real-time consumer can compute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidCutoff

OCCUPANCY_CADENCE = 11
N_OCCUPANCY_LAGS = 5
FLOW_WINDOW = 10
N_FLOW_LAGS = 3


@dataclass(frozen=True)
class FilterCoefficients:
    b: tuple
    a: tuple

    @property
    def order(self) -> int:
        return len(self.a) - 1

    @property
    def dc_gain(self) -> float:
        return sum(self.b) / sum(self.a)

    def poles(self) -> np.ndarray:
        return np.roots(self.a)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def frequency_response(self, w) -> np.ndarray:
        """Complex response at normalized frequencies ``w`` (1.0 == Nyquist)."""
        z = np.exp(-1j * np.pi * np.asarray(w, dtype=float))
        num = np.polyval(self.b[::-1], z)
        den = np.polyval(self.a[::-1], z)
        return num / den

    def steady_state(self, x0: float = 1.0) -> np.ndarray:
        """Transposed direct-form II state for a constant input ``x0``."""
        b, a = np.asarray(self.b), np.asarray(self.a)
        gain = b.sum() / a.sum()
        diff = b[1:] - a[1:] * gain
        return np.cumsum(diff[::-1])[::-1] * x0


def butterworth_design(order: int = 2, cutoff: float = 0.05) -> FilterCoefficients:
    """Digital low-pass Butterworth filter via the bilinear transform.

    The analog prototype poles are placed on the left half of the unit circle,
    scaled to the prewarped cutoff and mapped with ``z = (4 + s) / (4 - s)``
    (sampling rate 2, so Nyquist is 1). All zeros land on ``z = -1``.
    """
    if not 0.0 < cutoff < 1.0:
        raise InvalidCutoff(f"cutoff must lie in (0, 1) as a fraction of Nyquist, got {cutoff}")
    if order < 1:
        raise ValueError("order must be >= 1")
    fs = 2.0
    warped = 2.0 * fs * np.tan(np.pi * cutoff / fs)
    k = np.arange(1, order + 1)
    poles = warped * np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    z_poles = (2 * fs + poles) / (2 * fs - poles)
    gain = np.real(warped ** order / np.prod(2 * fs - poles))
    b = gain * np.real(np.poly(-np.ones(order)))
    a = np.real(np.poly(z_poles))
    # remove the last rounding error so that DC gain is 1 to machine precision
    b = b * (a.sum() / b.sum())
    coeffs = FilterCoefficients(tuple(float(v) for v in b), tuple(float(v) for v in a))
    # high orders at tiny cutoffs cluster the poles near z = 1 and the
    # polynomial form loses the -3 dB point; refuse rather than filter wrongly
    drift = abs(abs(coeffs.frequency_response(cutoff)) - np.sqrt(0.5))
    if not drift < 1e-6:
        raise InvalidCutoff(f"order {order} at cutoff {cutoff} is ill-conditioned "
                            f"(-3 dB point off by {drift:.1e}); raise the cutoff or lower the order")
    return coeffs


def filter_apply_causal(coeffs: FilterCoefficients, series) -> np.ndarray:
    """Single-pass causal IIR filtering with steady-state initialization.

    NaN gaps split the series into independent runs; each run restarts from the
    steady state of its first value, and gaps stay NaN.
    """
    x = np.asarray(series, dtype=float)
    out = np.full_like(x, np.nan)
    if x.size == 0:
        return out
    zi = coeffs.steady_state(1.0)
    finite = np.isfinite(x)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], finite.view(np.int8), [0]])))
    for lo, hi in zip(edges[::2], edges[1::2]):
        seg = x[lo:hi]
        out[lo:hi], _ = lfilter(coeffs.b, coeffs.a, seg, zi=zi * seg[0])
    return out


class StreamingFilter:
    """Sample-by-sample version of :func:`filter_apply_causal` for live feeds.

    ``step`` accepts a scalar or a vector of independent channels. A
    non-finite sample outputs NaN and restarts that channel, as a gap does
    offline.
    """

    def __init__(self, coeffs: FilterCoefficients):
        self.b = np.asarray(coeffs.b, dtype=float)
        self.a = np.asarray(coeffs.a, dtype=float)
        self._unit_state = coeffs.steady_state(1.0)
        self.state = None

    def reset(self):
        self.state = None

    def step(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        n = len(self._unit_state)
        if self.state is None or self.state.shape[1] != x.size:
            self.state = np.full((n, x.size), np.nan)
        bad = ~np.isfinite(x)
        fresh = np.isnan(self.state[0]) & ~bad
        self.state[:, fresh] = self._unit_state[:, None] * x[fresh]
        y = self.b[0] * x + self.state[0]
        new = np.empty_like(self.state)
        for i in range(n - 1):
            new[i] = self.b[i + 1] * x - self.a[i + 1] * y + self.state[i + 1]
        new[n - 1] = self.b[n] * x - self.a[n] * y
        new[:, bad] = np.nan
        y[bad] = np.nan
        self.state = new
        return float(y[0]) if scalar else y


def resample_to_minutes(times, values, grid, max_hold=None) -> np.ndarray:
    """Step-hold resampling of time-sorted observations onto a minute grid.

    Each grid minute takes the latest observation at or before it. Minutes
    before the first observation, or more than ``max_hold`` minutes after the
    latest one, are NaN.
    """
    times = np.asarray(times, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    out = np.full(grid.n, np.nan)
    if times.size == 0:
        return out
    if np.any(np.diff(times) < 0):
        raise ValueError("observations must be time-sorted")
    g = grid.times
    idx = np.searchsorted(times, g, side="right") - 1
    ok = idx >= 0
    if max_hold is not None:
        ok &= (g - times[np.clip(idx, 0, None)]) <= max_hold
    out[ok] = values[idx[ok]]
    return out


def rolling_sum(series, window: int = FLOW_WINDOW) -> np.ndarray:
    """Trailing sum ``y[t] = x[t-window+1] + ... + x[t]`` along the last axis.

    The first ``window - 1`` entries are NaN. Terms are accumulated oldest
    first so the result is reproducible bit-for-bit by a plain loop.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[-1]
    out = np.full(x.shape, np.nan)
    if n < window:
        return out
    m = n - window + 1
    acc = x[..., 0:m].copy()
    for k in range(1, window):
        acc += x[..., k:k + m]
    out[..., window - 1:] = acc
    return out


def smoothed_flow_sums(traffic_flow, coeffs: FilterCoefficients,
                       window: int = FLOW_WINDOW) -> np.ndarray:
    """Butterworth-smoothed flows summed over trailing ``window`` minutes."""
    flows = np.atleast_2d(np.asarray(traffic_flow, dtype=float))
    smoothed = np.vstack([filter_apply_causal(coeffs, row) for row in flows])
    return rolling_sum(smoothed, window)


def attach_flow_sums(dataset, cutoff=0.05, order=2, window=FLOW_WINDOW):
    """Return ``dataset`` with smoothed rolling flow sums computed on its grid."""
    from .datamodel import with_flow_sums

    coeffs = butterworth_design(order, cutoff)
    return with_flow_sums(dataset, smoothed_flow_sums(dataset.exogenous.traffic_flow,
                                                      coeffs, window))


def lagged(series, lags) -> np.ndarray:
    """Stack ``series[..., t - lag]`` for each lag; out-of-range entries are NaN."""
    x = np.asarray(series, dtype=float)
    n = x.shape[-1]
    out = np.full((len(lags),) + x.shape, np.nan)
    for i, lag in enumerate(lags):
        if lag < n:
            out[i, ..., lag:] = x[..., :n - lag]
    return out


@dataclass(frozen=True)
class LookbackWindow:
    occupancy_lags: np.ndarray  # (5,), newest first
    flow_lags: np.ndarray       # (locations, 3), newest first
    occupancy_times: tuple = ()


def build_lookbacks(update_times, update_values, flow_sums, flow_start, t,
                    n_occupancy=N_OCCUPANCY_LAGS, n_flow=N_FLOW_LAGS,
                    flow_step=FLOW_WINDOW):
    """Lookback window at minute ``t`` or ``None`` when incomplete.

    ``update_times``/``update_values`` are the time-sorted occupancy feed
    updates; ``flow_sums`` is a (locations, minutes) array of rolling sums
    whose first column is minute ``flow_start``.
    """
    update_times = np.asarray(update_times, dtype=np.int64)
    update_values = np.asarray(update_values, dtype=float)
    k = int(np.searchsorted(update_times, t, side="right"))
    if k < n_occupancy:
        return None
    occ = update_values[k - n_occupancy:k][::-1]
    if not np.all(np.isfinite(occ)):
        return None
    sums = np.atleast_2d(np.asarray(flow_sums, dtype=float))
    cols = [t - flow_start - j * flow_step for j in range(n_flow)]
    if min(cols) < 0 or max(cols) >= sums.shape[1]:
        return None
    flow = sums[:, cols]
    if not np.all(np.isfinite(flow)):
        return None
    times = tuple(int(v) for v in update_times[k - n_occupancy:k][::-1])
    return LookbackWindow(occ, flow, times)
