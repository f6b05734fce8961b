"""Feature encoding and multi-horizon supervised sets.

Feature categories are the units of the elimination study:

    time                 sin/cos of minute-of-day, holiday flag
    calendar             weekday one-hot (Monday = 0)
    weather              temperature (min-max scaled), rain flag
    traffic_flow         smoothed 10-minute flow sums at t, t-10, t-20 per location
    occupancy_lookback   occupancy rate at t, t-11, ..., t-44 (raw rate)

A row is complete when every variable of the full feature set is present, so
dropping a category never changes which rows exist.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import Dataset, minute_of_day, weekday
from .errors import EmptyResult, IncompleteRow, UnknownCategory
from .signal import (FLOW_WINDOW, N_FLOW_LAGS, N_OCCUPANCY_LAGS, OCCUPANCY_CADENCE,
                     attach_flow_sums, lagged, rolling_sum)

CATEGORIES = ("time", "calendar", "weather", "traffic_flow", "occupancy_lookback")
TARGETS = ("occupancy", "influx", "outflux")
FLUX_INTERVAL = 5


@dataclass(frozen=True)
class HorizonGrid:
    horizons: tuple = tuple(range(5, 95, 5))

    def __post_init__(self):
        h = tuple(int(v) for v in self.horizons)
        object.__setattr__(self, "horizons", h)
        if not h or list(h) != sorted(set(h)) or any(v % 5 or v <= 0 for v in h) or h[-1] > 90:
            raise ValueError(f"horizons must be ascending positive multiples of 5 up to 90, got {h}")

    def __iter__(self):
        return iter(self.horizons)

    def __len__(self):
        return len(self.horizons)

    def index(self, h) -> int:
        return self.horizons.index(int(h))

    @property
    def max(self) -> int:
        return self.horizons[-1]


HORIZONS = HorizonGrid()


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple
    categories: tuple
    scaling: dict = field(default_factory=dict)  # name -> (min, max) for scaled features
    location_ids: tuple = ()
    occupancy_cadence: int = OCCUPANCY_CADENCE
    n_occupancy_lags: int = N_OCCUPANCY_LAGS
    flow_step: int = FLOW_WINDOW
    n_flow_lags: int = N_FLOW_LAGS

    def __len__(self):
        return len(self.names)

    @property
    def width(self) -> int:
        return len(self.names)

    @property
    def max_lookback(self) -> int:
        return max(self.occupancy_cadence * (self.n_occupancy_lags - 1),
                   self.flow_step * (self.n_flow_lags - 1))

    def columns(self, category) -> list:
        return [i for i, c in enumerate(self.categories) if c == category]

    def present_categories(self) -> tuple:
        return tuple(c for c in CATEGORIES if c in self.categories)

    def without(self, category) -> "FeatureSchema":
        if category not in self.categories:
            raise UnknownCategory(f"category {category!r} not in schema "
                                  f"(have {self.present_categories()})")
        keep = [i for i, c in enumerate(self.categories) if c != category]
        if not keep:
            raise EmptyResult("eliminating this category leaves no features")
        names = tuple(self.names[i] for i in keep)
        return replace(self, names=names,
                       categories=tuple(self.categories[i] for i in keep),
                       scaling={k: v for k, v in self.scaling.items() if k in names})

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "categories": list(self.categories),
            "scaling": {k: [float(a), float(b)] for k, (a, b) in sorted(self.scaling.items())},
            "location_ids": list(self.location_ids),
            "occupancy_cadence": self.occupancy_cadence,
            "n_occupancy_lags": self.n_occupancy_lags,
            "flow_step": self.flow_step,
            "n_flow_lags": self.n_flow_lags,
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureSchema":
        d = dict(d)
        d["names"] = tuple(d["names"])
        d["categories"] = tuple(d["categories"])
        d["location_ids"] = tuple(d.get("location_ids", ()))
        d["scaling"] = {k: (float(v[0]), float(v[1])) for k, v in d.get("scaling", {}).items()}
        return cls(**d)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def scale(self, raw: np.ndarray) -> np.ndarray:
        """Apply min-max scaling in place to the columns listed in ``scaling``."""
        for i, name in enumerate(self.names):
            if name in self.scaling:
                lo, hi = self.scaling[name]
                span = hi - lo
                raw[..., i] = (raw[..., i] - lo) / span if span > 0 else 0.0
        return raw


def _feature_layout(location_ids, n_occ=N_OCCUPANCY_LAGS, n_flow=N_FLOW_LAGS):
    names, cats = [], []

    def add(name, cat):
        names.append(name)
        cats.append(cat)

    add("tod_sin", "time")
    add("tod_cos", "time")
    add("holiday", "time")
    for d in range(7):
        add(f"dow_{d}", "calendar")
    add("temperature", "weather")
    add("rain", "weather")
    for loc in location_ids:
        for k in range(n_flow):
            add(f"flow_{loc}_lag{k}", "traffic_flow")
    for k in range(n_occ):
        add(f"occ_lag{k}", "occupancy_lookback")
    return tuple(names), tuple(cats)


def time_features(times, holiday) -> dict:
    times = np.asarray(times)
    phase = 2.0 * np.pi * minute_of_day(times) / 1440.0
    out = {"tod_sin": np.sin(phase), "tod_cos": np.cos(phase),
           "holiday": np.asarray(holiday, dtype=float)}
    dow = weekday(times)
    for d in range(7):
        out[f"dow_{d}"] = (dow == d).astype(float)
    return out


def raw_feature_columns(dataset: Dataset, schema_like) -> dict:
    """Unscaled per-minute columns for the full feature layout, NaN where missing."""
    ds = dataset if dataset.flow_sums is not None else attach_flow_sums(dataset)
    e = ds.exogenous
    cols = time_features(ds.times, ds.masked(e.holiday))
    cols["temperature"] = ds.masked(e.temperature)
    cols["rain"] = ds.masked(e.rain)
    flow_lags = lagged(ds.masked(ds.flow_sums),
                       [schema_like.flow_step * k for k in range(schema_like.n_flow_lags)])
    for i, loc in enumerate(e.location_ids):
        for k in range(schema_like.n_flow_lags):
            cols[f"flow_{loc}_lag{k}"] = flow_lags[k, i]
    occ_lags = lagged(ds.masked(ds.garage.occupancy_rate),
                      [schema_like.occupancy_cadence * k
                       for k in range(schema_like.n_occupancy_lags)])
    for k in range(schema_like.n_occupancy_lags):
        cols[f"occ_lag{k}"] = occ_lags[k]
    return cols


def _complete_rows(dataset, cols) -> np.ndarray:
    ok = dataset.row_mask.copy()
    for v in cols.values():
        ok &= np.isfinite(v)
    return ok


def fit_schema(train: Dataset, occupancy_cadence=OCCUPANCY_CADENCE,
               n_occupancy_lags=N_OCCUPANCY_LAGS, flow_step=FLOW_WINDOW,
               n_flow_lags=N_FLOW_LAGS) -> FeatureSchema:
    """Full feature schema with scaling constants from the training rows only."""
    loc = train.exogenous.location_ids
    names, cats = _feature_layout(loc, n_occupancy_lags, n_flow_lags)
    proto = FeatureSchema(names, cats, {}, loc, occupancy_cadence, n_occupancy_lags,
                          flow_step, n_flow_lags)
    cols = raw_feature_columns(train, proto)
    ok = _complete_rows(train, cols)
    if not ok.any():
        raise EmptyResult("no complete training rows to fit scaling constants")
    scaled = [n for n, c in zip(names, cats) if n == "temperature" or c == "traffic_flow"]
    scaling = {n: (float(np.min(cols[n][ok])), float(np.max(cols[n][ok]))) for n in scaled}
    return replace(proto, scaling=scaling)


def encode_rows(dataset: Dataset, schema: FeatureSchema):
    """Encode every grid minute; returns ``(X, complete)`` with X shaped (minutes, width)."""
    missing = set(schema.location_ids) - set(dataset.exogenous.location_ids)
    if missing:
        raise UnknownCategory(f"dataset lacks traffic locations {sorted(missing)}")
    cols = raw_feature_columns(dataset, schema)
    full_names, _ = _feature_layout(schema.location_ids, schema.n_occupancy_lags,
                                    schema.n_flow_lags)
    ok = _complete_rows(dataset, {n: cols[n] for n in full_names})
    X = np.empty((dataset.grid.n, schema.width))
    for i, name in enumerate(schema.names):
        X[:, i] = cols[name]
    X = schema.scale(X)
    X[~ok] = np.nan
    return X, ok


def encode_row(dataset: Dataset, t: int, schema: FeatureSchema) -> np.ndarray:
    """Feature vector for minute ``t``; raises ``IncompleteRow`` when any input is missing."""
    i = dataset.grid.index(t)
    lo = max(0, i - schema.max_lookback)
    X, ok = encode_rows(_window(dataset, lo, i + 1), schema)
    if not ok[-1]:
        raise IncompleteRow(f"row at minute {t} is incomplete")
    return X[-1]


def _window(dataset, lo, hi):
    ds = dataset if dataset.flow_sums is not None else attach_flow_sums(dataset)
    return ds.slice(lo, hi)


def encode_values(schema: FeatureSchema, t0: int, occupancy_lags, flow_lags,
                  temperature, rain, holiday) -> np.ndarray:
    """Encode one observation directly from lookback values (real-time path).

    ``flow_lags`` is indexed (location, lag) in ``schema.location_ids`` order.
    """
    cols = {k: float(v[0]) for k, v in time_features(np.array([t0]), [holiday]).items()}
    cols["temperature"] = float(temperature)
    cols["rain"] = float(rain)
    flow_lags = np.asarray(flow_lags, dtype=float)
    for i, loc in enumerate(schema.location_ids):
        for k in range(schema.n_flow_lags):
            cols[f"flow_{loc}_lag{k}"] = flow_lags[i, k]
    for k in range(schema.n_occupancy_lags):
        cols[f"occ_lag{k}"] = float(occupancy_lags[k])
    x = np.array([[cols[n] for n in schema.names]], dtype=float)
    x = schema.scale(x)[0]
    if not np.all(np.isfinite(x)):
        raise IncompleteRow("non-finite feature value")
    return x


def target_series(dataset: Dataset, target: str) -> np.ndarray:
    """Per-minute target whose value at ``t + h`` is the horizon-``h`` label.

    Occupancy is the rate at that minute. Flux is the vehicle count over the
    five minutes ending at that minute, i.e. ``count[t+h] - count[t+h-5]``
    splits into its entry and exit parts.
    """
    g = dataset.garage
    if target == "occupancy":
        return dataset.masked(g.occupancy_rate)
    if target == "influx":
        return rolling_sum(dataset.masked(g.influx), FLUX_INTERVAL)
    if target == "outflux":
        return rolling_sum(dataset.masked(g.outflux), FLUX_INTERVAL)
    raise ValueError(f"unknown target {target!r}; expected one of {TARGETS}")


@dataclass
class SupervisedSet:
    X: np.ndarray
    Y: np.ndarray
    times: np.ndarray
    target: str
    horizons: HorizonGrid
    schema_digest: str

    def __post_init__(self):
        if len(self.X) != len(self.Y) or len(self.X) != len(self.times):
            raise ValueError("X, Y and times must have the same number of rows")

    def __len__(self):
        return len(self.X)

    def subset(self, rows) -> "SupervisedSet":
        return replace(self, X=self.X[rows], Y=self.Y[rows], times=self.times[rows])


def build_supervised(dataset: Dataset, schema: FeatureSchema, horizons=HORIZONS,
                     target="occupancy", stride=1) -> SupervisedSet:
    """Rows with complete features at ``t`` and all labels at ``t + h`` present.

    ``stride`` keeps only minutes whose epoch index is a multiple of it.
    """
    if not isinstance(horizons, HorizonGrid):
        horizons = HorizonGrid(tuple(horizons))
    X, ok = encode_rows(dataset, schema)
    Z = target_series(dataset, target)
    n = dataset.grid.n
    Y = np.full((n, len(horizons)), np.nan)
    for j, h in enumerate(horizons):
        if h < n:
            Y[:n - h, j] = Z[h:]
    keep = ok & np.all(np.isfinite(Y), axis=1)
    if stride > 1:
        keep &= (dataset.times % stride) == 0
    rows = np.flatnonzero(keep)
    if rows.size == 0:
        raise EmptyResult(f"no complete {target} rows in dataset")
    return SupervisedSet(X[rows], Y[rows], dataset.times[rows], target, horizons,
                         schema.digest())


def eliminate_category(sset: SupervisedSet, schema: FeatureSchema, category: str):
    reduced = schema.without(category)
    keep = [i for i, c in enumerate(schema.categories) if c != category]
    return replace(sset, X=sset.X[:, keep], schema_digest=reduced.digest()), reduced
