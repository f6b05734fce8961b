"""Minute-grid time-series types, dataset assembly and chronological splitting.

All timestamps are integer minutes since the Unix epoch (UTC). Every series in
one dataset shares the grid origin and a one-minute step. Occupancy is kept as
a rate in [0, 1]; conversion to percent happens only at I/O boundaries.

Minute ``t`` of a garage series covers the interval ``[t, t + 1)``. The
occupancy value at ``t`` counts the vehicles parked during that minute, so

    occupancy_count[t] - occupancy_count[t - 1] == influx[t] - outflux[t]

with ``occupancy_count[-1]`` equal to the initial occupancy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import EmptyGrid, GridMismatch, OccupancyOutOfBounds, TooFewRows

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
MINUTES_PER_DAY = 1440
MINUTES_PER_WEEK = 7 * MINUTES_PER_DAY


def to_minutes(value) -> int:
    """Convert an ISO-8601 string or datetime to integer minutes since epoch.

    Seconds are truncated; naive datetimes are taken as UTC.
    """
    if isinstance(value, str):
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        value = datetime.fromisoformat(text)
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return int((value - _EPOCH).total_seconds() // 60)


def to_iso(minutes: int) -> str:
    dt = _EPOCH + timedelta(minutes=int(minutes))
    return dt.strftime("%Y-%m-%dT%H:%MZ")


def weekday(minutes) -> np.ndarray:
    """Day of week with Monday = 0 (the epoch was a Thursday)."""
    return (np.floor_divide(minutes, MINUTES_PER_DAY) + 3) % 7


def minute_of_day(minutes) -> np.ndarray:
    return np.mod(minutes, MINUTES_PER_DAY)


@dataclass(frozen=True)
class Grid:
    """A contiguous range of whole minutes ``[start, start + n)``."""

    start: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("grid length must be non-negative")

    @property
    def stop(self) -> int:
        return self.start + self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.stop, dtype=np.int64)

    def index(self, t: int) -> int:
        if not self.start <= t < self.stop:
            raise IndexError(f"minute {t} outside grid [{self.start}, {self.stop})")
        return int(t - self.start)

    def __contains__(self, t) -> bool:
        return self.start <= t < self.stop

    @classmethod
    def between(cls, first, stop) -> "Grid":
        first, stop = to_minutes(first), to_minutes(stop)
        return cls(first, max(stop - first, 0))


@dataclass
class GarageStateSeries:
    garage_id: str
    capacity: int
    start: int
    occupancy_rate: np.ndarray
    influx: np.ndarray
    outflux: np.ndarray

    def __post_init__(self):
        self.occupancy_rate = np.asarray(self.occupancy_rate, dtype=float)
        self.influx = np.asarray(self.influx, dtype=float)
        self.outflux = np.asarray(self.outflux, dtype=float)
        n = len(self.occupancy_rate)
        if len(self.influx) != n or len(self.outflux) != n:
            raise GridMismatch("occupancy, influx and outflux lengths differ")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        rate = self.occupancy_rate[np.isfinite(self.occupancy_rate)]
        if rate.size and (rate.min() < 0 or rate.max() > 1):
            raise OccupancyOutOfBounds("occupancy rate outside [0, 1]")
        for name in ("influx", "outflux"):
            arr = getattr(self, name)
            if np.any(arr[np.isfinite(arr)] < 0):
                raise ValueError(f"{name} must be non-negative")

    def __len__(self):
        return len(self.occupancy_rate)

    @property
    def grid(self) -> Grid:
        return Grid(self.start, len(self))

    @property
    def occupancy_count(self) -> np.ndarray:
        return np.round(self.occupancy_rate * self.capacity)

    def conservation_residual(self, initial_occupancy: int) -> np.ndarray:
        """Per-minute ``Δcount - (influx - outflux)``; all zeros when conserved."""
        counts = self.occupancy_count
        prev = np.concatenate([[initial_occupancy], counts[:-1]])
        return (counts - prev) - (self.influx - self.outflux)


def derive_states_from_transactions(transactions, capacity, initial_occupancy, grid,
                                    garage_id="garage") -> GarageStateSeries:
    """Count entries and exits per minute and integrate them into occupancy.

    ``transactions`` holds ``(entry_time, exit_time)`` pairs in epoch minutes
    or objects with ``entry_time``/``exit_time`` attributes. Events outside the
    grid are ignored; vehicles already parked at ``grid.start`` must be counted
    in ``initial_occupancy``.
    """
    if grid.n == 0:
        raise EmptyGrid("grid has zero minutes")
    if not 0 <= initial_occupancy <= capacity:
        raise OccupancyOutOfBounds(
            f"initial occupancy {initial_occupancy} outside [0, {capacity}]")

    entries, exits = [], []
    for tr in transactions:
        if hasattr(tr, "entry_time"):
            entry, exit_ = tr.entry_time, tr.exit_time
        else:
            entry, exit_ = tr
        if exit_ < entry:
            raise ValueError(f"exit {exit_} before entry {entry}")
        entries.append(entry)
        exits.append(exit_)
    entries = np.asarray(entries, dtype=np.int64) - grid.start
    exits = np.asarray(exits, dtype=np.int64) - grid.start

    def per_minute(offsets):
        inside = offsets[(offsets >= 0) & (offsets < grid.n)]
        return np.bincount(inside, minlength=grid.n).astype(float)

    influx = per_minute(entries)
    outflux = per_minute(exits)
    counts = initial_occupancy + np.cumsum(influx - outflux)
    bad = np.flatnonzero((counts < 0) | (counts > capacity))
    if bad.size:
        t = int(bad[0])
        raise OccupancyOutOfBounds(
            f"derived occupancy {counts[t]:.0f} outside [0, {capacity}] "
            f"at minute {to_iso(grid.start + t)}")
    return GarageStateSeries(garage_id, int(capacity), grid.start,
                             counts / capacity, influx, outflux)


@dataclass
class ExogenousSeries:
    """Independent variables on the minute grid; NaN marks a missing value."""

    start: int
    location_ids: tuple
    traffic_flow: np.ndarray  # (locations, minutes), veh/h
    temperature: np.ndarray   # 0.1 degC
    rain: np.ndarray          # {0, 1}
    holiday: np.ndarray       # {0, 1}

    def __post_init__(self):
        self.location_ids = tuple(self.location_ids)
        self.traffic_flow = np.atleast_2d(np.asarray(self.traffic_flow, dtype=float))
        self.temperature = np.asarray(self.temperature, dtype=float)
        self.rain = np.asarray(self.rain, dtype=float)
        self.holiday = np.asarray(self.holiday, dtype=float)
        n = len(self.temperature)
        if self.traffic_flow.shape != (len(self.location_ids), n):
            raise GridMismatch("traffic_flow must be (locations, minutes)")
        if len(self.rain) != n or len(self.holiday) != n:
            raise GridMismatch("exogenous series lengths differ")
        for name in ("rain", "holiday"):
            arr = getattr(self, name)
            vals = arr[np.isfinite(arr)]
            if np.any((vals != 0) & (vals != 1)):
                raise ValueError(f"{name} must be binary")
        flows = self.traffic_flow[np.isfinite(self.traffic_flow)]
        if np.any(flows < 0):
            raise ValueError("traffic flow must be non-negative")

    def __len__(self):
        return len(self.temperature)


def _align(values, start, grid, name):
    """Slice a series (last axis) starting at ``start`` onto ``grid``."""
    values = np.asarray(values)
    n = values.shape[-1]
    lo = grid.start - start
    if lo < 0 or lo + grid.n > n:
        raise GridMismatch(
            f"{name} covers [{start}, {start + n}) which does not contain "
            f"grid [{grid.start}, {grid.stop})")
    return values[..., lo:lo + grid.n]


@dataclass
class Dataset:
    grid: Grid
    garage: GarageStateSeries
    exogenous: ExogenousSeries
    row_mask: np.ndarray
    # smoothed 10-minute flow sums (locations, minutes), filled by signal.attach_flow_sums
    flow_sums: np.ndarray | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def deletion_fraction(self) -> float:
        return 1.0 - float(np.mean(self.row_mask)) if self.grid.n else 0.0

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.row_mask))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def masked(self, values) -> np.ndarray:
        """Copy of a per-minute array with deleted rows set to NaN."""
        out = np.array(values, dtype=float, copy=True)
        out[..., ~self.row_mask] = np.nan
        return out

    def slice(self, lo: int, hi: int) -> "Dataset":
        """Sub-dataset over grid indices ``[lo, hi)``."""
        g = self.garage
        e = self.exogenous
        start = self.grid.start + lo
        garage = GarageStateSeries(g.garage_id, g.capacity, start,
                                   g.occupancy_rate[lo:hi], g.influx[lo:hi],
                                   g.outflux[lo:hi])
        exo = ExogenousSeries(start, e.location_ids, e.traffic_flow[:, lo:hi],
                              e.temperature[lo:hi], e.rain[lo:hi], e.holiday[lo:hi])
        sums = None if self.flow_sums is None else self.flow_sums[:, lo:hi]
        return Dataset(Grid(start, hi - lo), garage, exo, self.row_mask[lo:hi].copy(),
                       sums, dict(self.meta))

    def truncate(self, t: int) -> "Dataset":
        """Keep minutes up to and including ``t``; drop everything later."""
        return self.slice(0, max(0, min(self.grid.n, t - self.grid.start + 1)))


def assemble_dataset(garage: GarageStateSeries, exogenous: ExogenousSeries,
                     grid: Grid) -> Dataset:
    """Align all series to ``grid`` and flag incomplete rows.

    Rows with any missing variable are kept in the arrays but marked invalid in
    ``row_mask`` (complete-case deletion); nothing is imputed.
    """
    occ = _align(garage.occupancy_rate, garage.start, grid, "occupancy")
    inf = _align(garage.influx, garage.start, grid, "influx")
    out = _align(garage.outflux, garage.start, grid, "outflux")
    flow = _align(exogenous.traffic_flow, exogenous.start, grid, "traffic_flow")
    temp = _align(exogenous.temperature, exogenous.start, grid, "temperature")
    rain = _align(exogenous.rain, exogenous.start, grid, "rain")
    hol = _align(exogenous.holiday, exogenous.start, grid, "holiday")

    g = GarageStateSeries(garage.garage_id, garage.capacity, grid.start, occ, inf, out)
    e = ExogenousSeries(grid.start, exogenous.location_ids, flow, temp, rain, hol)
    stacked = np.vstack([occ, inf, out, flow, temp, rain, hol])
    mask = np.all(np.isfinite(stacked), axis=0)
    return Dataset(grid, g, e, mask)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.72
    validation_fraction: float = 0.08
    test_fraction: float = 0.20

    def __post_init__(self):
        fracs = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f < 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")

    def sizes(self, n: int) -> tuple:
        # floor with a guard against 0.29 * 100 == 28.999...
        n_train = int(math.floor(self.train_fraction * n + 1e-9))
        n_val = int(math.floor(self.validation_fraction * n + 1e-9))
        return n_train, n_val, n - n_train - n_val


def chronological_split(dataset: Dataset, spec: SplitSpec = SplitSpec()):
    """Cut the grid into contiguous train, validation and test datasets.

    Partition sizes count valid rows; each partition spans the grid minutes from
    its first valid row up to the next partition's first valid row.
    """
    valid = np.flatnonzero(dataset.row_mask)
    if valid.size < 3:
        raise TooFewRows(f"need at least 3 valid rows, have {valid.size}")
    n_train, n_val, _ = spec.sizes(valid.size)
    cut1 = int(valid[n_train]) if n_train < valid.size else dataset.grid.n
    cut2 = int(valid[n_train + n_val]) if n_train + n_val < valid.size else dataset.grid.n
    return (dataset.slice(0, cut1), dataset.slice(cut1, cut2),
            dataset.slice(cut2, dataset.grid.n))


def with_flow_sums(dataset: Dataset, flow_sums) -> Dataset:
    return replace(dataset, flow_sums=np.asarray(flow_sums, dtype=float))


@dataclass(frozen=True)
class MinuteSeries:
    """A single per-minute series anchored at epoch minute ``start``."""

    start: int
    values: np.ndarray

    @property
    def stop(self) -> int:
        return self.start + len(self.values)

    def at(self, t) -> np.ndarray:
        """Values at minutes ``t`` (scalar or array); NaN outside the series."""
        t = np.asarray(t, dtype=np.int64)
        i = t - self.start
        inside = (i >= 0) & (i < len(self.values))
        out = np.full(t.shape, np.nan)
        out[inside] = np.asarray(self.values, dtype=float)[i[inside]]
        return out
