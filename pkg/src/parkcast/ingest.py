"""CSV parsers for the three historic sources and a seeded synthetic city.

File schemas (ISO-8601 UTC timestamps, minute precision)::

    transactions.csv  garage_id,entry_time,exit_time
    traffic.csv       location_id,time,flow_veh_per_hour
    weather.csv       time,temperature_tenth_celsius,rain_binary
    holidays.csv      date,is_holiday

Malformed rows never abort a parse. They are collected with a reason in
``ParseResult.rejects`` and can be written to a sidecar file.
"""
from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .datamodel import (MINUTES_PER_DAY, Grid, derive_states_from_transactions,
                        to_iso, to_minutes)
from .errors import FileUnreadable, InvalidConfig, SchemaMismatch
from .signal import resample_to_minutes

log = logging.getLogger(__name__)

TRANSACTION_COLUMNS = ("garage_id", "entry_time", "exit_time")
TRAFFIC_COLUMNS = ("location_id", "time", "flow_veh_per_hour")
WEATHER_COLUMNS = ("time", "temperature_tenth_celsius", "rain_binary")
HOLIDAY_COLUMNS = ("date", "is_holiday")


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    entry_time: int
    exit_time: int
    garage_id: str

    def __post_init__(self):
        if self.exit_time < self.entry_time:
            raise ValueError("exit before entry")


@dataclass(frozen=True, slots=True)
class TrafficObservation:
    location_id: str
    time: int
    flow: float

    def __post_init__(self):
        if not math.isfinite(self.flow) or self.flow < 0:
            raise ValueError("flow must be finite and non-negative")


@dataclass(frozen=True, slots=True)
class WeatherObservation:
    time: int
    temperature: float
    rain: int

    def __post_init__(self):
        if self.rain not in (0, 1):
            raise ValueError("rain must be 0 or 1")
        if not math.isfinite(self.temperature):
            raise ValueError("temperature must be finite")


@dataclass
class Reject:
    line: int
    row: dict
    reason: str


@dataclass
class ParseResult:
    records: list
    rejects: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def write_rejects(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["line", "reason", "row"])
            for r in self.rejects:
                w.writerow([r.line, r.reason, json.dumps(r.row, sort_keys=True)])


def _read_rows(path, required):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FileUnreadable(f"{path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing required columns {missing}")
        # line 1 is the header
        for line, row in enumerate(reader, start=2):
            yield line, row


def _parse(path, required, build):
    records, rejects = [], []
    for line, row in _read_rows(path, required):
        try:
            records.append(build(row))
        except (ValueError, TypeError, KeyError) as exc:
            rejects.append(Reject(line, row, str(exc) or type(exc).__name__))
    if rejects:
        log.info("%s: %d rows rejected", path, len(rejects))
    return ParseResult(records, rejects)


def _binary(text):
    value = float(text)
    if value not in (0.0, 1.0):
        raise ValueError(f"value {text!r} is not binary")
    return int(value)


def parse_transactions_csv(path) -> ParseResult:
    def build(row):
        entry, exit_ = to_minutes(row["entry_time"]), to_minutes(row["exit_time"])
        if exit_ < entry:
            raise ValueError("exit_time before entry_time")
        return TransactionRecord(entry, exit_, row["garage_id"].strip())
    return _parse(path, TRANSACTION_COLUMNS, build)


def parse_traffic_csv(path) -> ParseResult:
    def build(row):
        flow = float(row["flow_veh_per_hour"])
        if not math.isfinite(flow) or flow < 0:
            raise ValueError(f"invalid flow {row['flow_veh_per_hour']!r}")
        return TrafficObservation(row["location_id"].strip(), to_minutes(row["time"]), flow)
    return _parse(path, TRAFFIC_COLUMNS, build)


def parse_weather_csv(path) -> ParseResult:
    def build(row):
        temp = float(row["temperature_tenth_celsius"])
        if not math.isfinite(temp):
            raise ValueError("temperature must be finite")
        return WeatherObservation(to_minutes(row["time"]), temp, _binary(row["rain_binary"]))
    return _parse(path, WEATHER_COLUMNS, build)


def parse_holidays_csv(path) -> ParseResult:
    def build(row):
        return date.fromisoformat(row["date"].strip()), _binary(row["is_holiday"])
    return _parse(path, HOLIDAY_COLUMNS, build)


def _fmt(value):
    return repr(float(value)) if not float(value).is_integer() else str(int(value))


def write_transactions_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRANSACTION_COLUMNS)
        for r in records:
            w.writerow([r.garage_id, to_iso(r.entry_time), to_iso(r.exit_time)])


def write_traffic_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAFFIC_COLUMNS)
        for r in records:
            w.writerow([r.location_id, to_iso(r.time), _fmt(r.flow)])


def write_weather_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WEATHER_COLUMNS)
        for r in records:
            w.writerow([to_iso(r.time), _fmt(r.temperature), int(r.rain)])


def write_holidays_csv(days, path):
    """``days`` is an iterable of ``(date, is_holiday)`` pairs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HOLIDAY_COLUMNS)
        for d, flag in days:
            w.writerow([d.isoformat(), int(flag)])


# -- conversion onto the minute grid ----------------------------------------

def traffic_to_grid(observations, grid, location_ids=None):
    """(location_ids, flows) with flows shaped (locations, minutes).

    Traffic is reported every minute, so nothing is held forward: a minute
    without an observation stays NaN.
    """
    if location_ids is None:
        location_ids = sorted({o.location_id for o in observations})
    col = {loc: i for i, loc in enumerate(location_ids)}
    flows = np.full((len(location_ids), grid.n), np.nan)
    for o in observations:
        i = col.get(o.location_id)
        if i is not None and grid.start <= o.time < grid.stop:
            flows[i, o.time - grid.start] = o.flow
    return tuple(location_ids), flows


def weather_to_grid(observations, grid, max_hold=60):
    obs = sorted(observations, key=lambda o: o.time)
    times = [o.time for o in obs]
    temp = resample_to_minutes(times, [o.temperature for o in obs], grid, max_hold)
    rain = resample_to_minutes(times, [o.rain for o in obs], grid, max_hold)
    return temp, rain


def holidays_to_grid(days, grid):
    """Per-minute holiday flag from ``(date, flag)`` pairs; unlisted dates are 0."""
    flags = {d: int(f) for d, f in days}
    out = np.zeros(grid.n)
    first_day = grid.start // MINUTES_PER_DAY
    last_day = (grid.stop - 1) // MINUTES_PER_DAY if grid.n else first_day - 1
    epoch = date(1970, 1, 1)
    for day in range(first_day, last_day + 1):
        if flags.get(epoch + timedelta(days=day)):
            lo = max(day * MINUTES_PER_DAY, grid.start) - grid.start
            hi = min((day + 1) * MINUTES_PER_DAY, grid.stop) - grid.start
            out[lo:hi] = 1.0
    return out


# -- synthetic city ---------------------------------------------------------

# arrivals per hour, scaled so 5-minute flux peaks near 100 vehicles
_DEFAULT_PROFILE = [20, 12, 8, 6, 6, 12, 40, 120, 240, 320, 380, 420,
                    440, 420, 400, 380, 360, 340, 300, 240, 180, 120, 70, 36]
_DEFAULT_WEEK = [0.85, 0.85, 0.9, 0.95, 1.1, 1.3, 0.75]


@dataclass
class WeatherProcess:
    temp_mean: float = 100.0          # 0.1 degC
    temp_daily_amplitude: float = 40.0
    temp_seasonal_amplitude: float = 50.0
    temp_noise: float = 8.0
    rain_probability: float = 0.08    # chance a dry hour turns wet
    rain_persistence: float = 0.6     # chance a wet hour stays wet
    rain_arrival_multiplier: float = 1.15


@dataclass
class SyntheticCityConfig:
    seed: int = 7
    days: int = 120
    capacity: int = 2400
    start: str = "2018-01-01"
    garage_id: str = "centraal"
    daily_profile: list = field(default_factory=lambda: list(_DEFAULT_PROFILE))
    weekly_multipliers: list = field(default_factory=lambda: list(_DEFAULT_WEEK))
    # optional per-weekday (Monday = 0) replacement of the daily profile shape
    weekday_profiles: dict = field(default_factory=dict)
    event_days: list = field(default_factory=list)
    holidays: list = field(default_factory=list)
    holiday_multiplier: float = 0.6
    noise_level: float = 0.15
    median_stay: float = 150.0
    stay_sigma: float = 0.9
    weather_process: WeatherProcess = field(default_factory=WeatherProcess)
    n_locations: int = 11
    ambient_flow: float = 900.0       # veh/h at the daily traffic peak
    flow_coupling: float = 4.0
    flow_noise: float = 0.08

    def __post_init__(self):
        if isinstance(self.weather_process, dict):
            self.weather_process = WeatherProcess(**self.weather_process)
        self.event_days = [tuple(e) for e in self.event_days]
        self.weekday_profiles = {int(k): list(v) for k, v in self.weekday_profiles.items()}

    def validate(self):
        problems = []
        if self.days < 1:
            problems.append("days must be >= 1")
        if self.capacity < 1:
            problems.append("capacity must be >= 1")
        if len(self.daily_profile) != 24:
            problems.append("daily_profile needs 24 hourly rates")
        elif any(r < 0 for r in self.daily_profile):
            problems.append("daily_profile rates must be >= 0")
        if len(self.weekly_multipliers) != 7:
            problems.append("weekly_multipliers needs 7 factors")
        elif any(r < 0 for r in self.weekly_multipliers):
            problems.append("weekly_multipliers must be >= 0")
        for d, prof in self.weekday_profiles.items():
            if not 0 <= d <= 6:
                problems.append(f"weekday_profiles key {d} is not a weekday 0..6")
            elif len(prof) != 24 or any(r < 0 for r in prof):
                problems.append(f"weekday_profiles[{d}] needs 24 rates >= 0")
        for day, intensity in self.event_days:
            if intensity < -1:
                problems.append(f"event intensity {intensity} makes rates negative")
        if self.noise_level < 0:
            problems.append("noise_level must be >= 0")
        if self.median_stay <= 0 or self.stay_sigma < 0:
            problems.append("stay distribution parameters must be positive")
        if self.n_locations < 1:
            problems.append("n_locations must be >= 1")
        if self.flow_coupling < 0 or self.ambient_flow < 0 or self.flow_noise < 0:
            problems.append("flow parameters must be >= 0")
        wp = self.weather_process
        if not (0 <= wp.rain_probability <= 1 and 0 <= wp.rain_persistence <= 1):
            problems.append("rain probabilities must lie in [0, 1]")
        if wp.rain_arrival_multiplier < 0 or self.holiday_multiplier < 0:
            problems.append("multipliers must be >= 0")
        if problems:
            raise InvalidConfig("; ".join(problems))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SyntheticCity:
    config: SyntheticCityConfig
    grid: Grid
    transactions: list
    traffic: list
    weather: list
    holidays: list           # (date, flag) for every day of the grid
    truth: object            # GarageStateSeries
    rejected_arrivals: int
    location_ids: tuple
    traffic_flow: np.ndarray  # (locations, minutes), the data behind ``traffic``


def _gamma_factors(rng, noise, size):
    if noise <= 0:
        return np.ones(size)
    shape = 1.0 / noise ** 2
    return rng.gamma(shape, 1.0 / shape, size)


def generate_synthetic_city(config: SyntheticCityConfig) -> SyntheticCity:
    """Simulate one garage plus its surrounding traffic and weather.

    Arrivals are Poisson with a daily x weekly rate profile, gamma-distributed
    day and hour level noise, event-day spikes, holidays and a rain effect.
    Stays are log-normal. Arrivals that find the garage full are rejected.
    Loop-detector flows combine an ambient daily curve with the garage traffic
    passing each detector a few minutes before arrival or after departure.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    days = config.days
    start = to_minutes(config.start)
    start -= start % MINUTES_PER_DAY
    grid = Grid(start, days * MINUTES_PER_DAY)
    T = grid.n
    minutes = np.arange(T)
    day_idx = minutes // MINUTES_PER_DAY
    hour = (minutes % MINUTES_PER_DAY) / 60.0
    dow = (day_idx + (start // MINUTES_PER_DAY + 3)) % 7

    # weather: hourly rain Markov chain and a temperature sinusoid with AR noise
    wp = config.weather_process
    n_hours = days * 24
    wet = np.zeros(n_hours, dtype=int)
    for i in range(1, n_hours):
        p = wp.rain_persistence if wet[i - 1] else wp.rain_probability
        wet[i] = int(rng.random() < p)
    ar = np.zeros(n_hours)
    eps = rng.normal(0.0, wp.temp_noise, n_hours)
    for i in range(1, n_hours):
        ar[i] = 0.9 * ar[i - 1] + eps[i]
    hours = np.arange(n_hours)
    temp_hourly = (wp.temp_mean
                   + wp.temp_seasonal_amplitude * np.sin(2 * np.pi * hours / (24 * 365.0))
                   + wp.temp_daily_amplitude * np.sin(2 * np.pi * ((hours % 24) - 9) / 24)
                   + ar)
    rain_minute = wet[minutes // 60]

    # arrival rate per minute
    profile = np.asarray(config.daily_profile, dtype=float)
    ext = np.concatenate([profile, profile[:1]])
    base = np.interp(hour, np.arange(25), ext) / 60.0
    for d, prof in config.weekday_profiles.items():
        sel = dow == d
        p = np.asarray(prof, dtype=float)
        base[sel] = np.interp(hour[sel], np.arange(25), np.concatenate([p, p[:1]])) / 60.0
    rate = base * np.asarray(config.weekly_multipliers, dtype=float)[dow]
    rate *= _gamma_factors(rng, config.noise_level, days)[day_idx]
    rate *= _gamma_factors(rng, config.noise_level, n_hours)[minutes // 60]
    rate *= np.where(rain_minute == 1, wp.rain_arrival_multiplier, 1.0)
    holiday_days = {int(d) for d in config.holidays}
    for d in holiday_days:
        if 0 <= d < days:
            rate[day_idx == d] *= config.holiday_multiplier
    for d, intensity in config.event_days:
        sel = (day_idx == int(d)) & (hour >= 12) & (hour < 22)
        rate[sel] *= 1.0 + float(intensity)
    arrivals = rng.poisson(rate)

    # stays and the capacity constraint
    n_arr = int(arrivals.sum())
    stays = np.maximum(1, np.round(
        config.median_stay * np.exp(config.stay_sigma * rng.standard_normal(n_arr)))).astype(np.int64)
    arrival_minutes = np.repeat(minutes, arrivals)
    departures = []
    count = 0
    rejected = 0
    records = []
    gid = config.garage_id
    for m, stay in zip(arrival_minutes.tolist(), stays.tolist()):
        while departures and departures[0] <= m:
            heapq.heappop(departures)
            count -= 1
        if count >= config.capacity:
            rejected += 1
            continue
        exit_ = m + stay
        heapq.heappush(departures, exit_)
        count += 1
        records.append(TransactionRecord(start + m, start + exit_, gid))
    if rejected:
        log.info("synthetic city: %d arrivals rejected at capacity", rejected)
    truth = derive_states_from_transactions(records, config.capacity, 0, grid, gid)

    # loop detector flows (veh/h reported each minute)
    L = config.n_locations
    loc_rng = np.random.default_rng([config.seed, 1])
    leads = loc_rng.integers(3, 26, L)
    scales = loc_rng.uniform(0.5, 1.5, L)
    shares = loc_rng.dirichlet(np.ones(L)) * L
    traffic_shape = np.interp(hour, np.arange(25), np.concatenate(
        [profile / profile.max(), profile[:1] / profile.max()]))
    week_traffic = np.asarray([1.0, 1.0, 1.0, 1.0, 1.05, 0.8, 0.6])[dow]
    moves_in = arrivals.astype(float)
    moves_out = truth.outflux
    flow = np.empty((L, T))
    for i in range(L):
        ahead = np.zeros(T)
        ahead[:T - leads[i]] = moves_in[leads[i]:]
        behind = np.zeros(T)
        behind[leads[i]:] = moves_out[:T - leads[i]]
        ambient = config.ambient_flow * scales[i] * (0.15 + 0.85 * traffic_shape) * week_traffic
        garage = config.flow_coupling * shares[i] * 60.0 * (ahead + behind) / L
        noise = rng.normal(0.0, config.flow_noise, T) * ambient
        flow[i] = np.maximum(0.0, np.round(ambient + garage + noise))
    location_ids = tuple(f"loc{i:02d}" for i in range(L))
    traffic = _TrafficView(location_ids, start, flow)

    weather = []
    for m in range(0, T, 10):
        h = m // 60
        weather.append(WeatherObservation(start + m, float(round(temp_hourly[h])), int(wet[h])))

    epoch = date(1970, 1, 1)
    first = start // MINUTES_PER_DAY
    holidays = [(epoch + timedelta(days=first + d), int(d in holiday_days)) for d in range(days)]
    return SyntheticCity(config, grid, records, traffic, weather, holidays, truth,
                         rejected, location_ids, flow)


class _TrafficView:
    """Lazy sequence of ``TrafficObservation`` over a (locations, minutes) array."""

    def __init__(self, location_ids, start, flow):
        self.location_ids = location_ids
        self.start = start
        self.flow = flow

    def __len__(self):
        return self.flow.size

    def __iter__(self):
        L, T = self.flow.shape
        for m in range(T):
            for i in range(L):
                v = self.flow[i, m]
                if np.isfinite(v):
                    yield TrafficObservation(self.location_ids[i], self.start + m, float(v))
