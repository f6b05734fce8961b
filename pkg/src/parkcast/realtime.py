"""Replayed real-time prediction loop.

Historic series are turned back into feed events at their native cadences
(occupancy roughly every 11 minutes, traffic every minute, weather every 10
minutes). A single owner folds the events into a ``FeedState``; every 5
minutes the state is encoded as of the last occupancy observation ``t0`` and
each requested horizon ``h`` is served from the trained horizon

    h' = ceil((h + staleness) / 5) * 5

so stale occupancy data is covered by the extra trained horizons up to 90.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .datamodel import MINUTES_PER_DAY, MinuteSeries, to_iso, to_minutes
from .errors import (CoverageGap, IncompleteRow, IncompleteState, StaleFeed,
                     WindowUncovered)
from .eval import evaluate_predictions
from .features import encode_values, target_series
from .models.naive import seasonal_naive_matrix
from .signal import FLOW_WINDOW, StreamingFilter, butterworth_design

log = logging.getLogger(__name__)

SERVED_HORIZONS = tuple(range(5, 65, 5))
MAX_STALENESS = 30
TICK = 5
WEATHER_MAX_HOLD = 60
# events at the same minute are applied in this order, ticks last
_KIND_ORDER = {"traffic": 0, "weather": 1, "occupancy": 2, "tick": 3}


def trained_horizon(h: int, staleness: int, step: int = 5) -> int:
    """Trained horizon that covers a lead time of ``h`` minutes after staleness."""
    if staleness > MAX_STALENESS:
        raise StaleFeed(f"occupancy feed is {staleness} min old (limit {MAX_STALENESS})")
    if staleness < 0:
        raise ValueError("staleness cannot be negative")
    return int(math.ceil((h + staleness) / step) * step)


@dataclass(frozen=True)
class FeedEvent:
    time: int
    kind: str  # occupancy | traffic | weather | tick
    value: object = None

    def sort_key(self):
        return (self.time, _KIND_ORDER[self.kind])


def occupancy_schedule(start, stop, cadence=11, jitter=0, seed=0) -> list:
    """Occupancy publication minutes in ``[start, stop)``.

    Slot ``k`` is nominally ``start + k * cadence``, shifted by a seeded
    integer jitter in ``[-jitter, jitter]``. Jitter for slot ``k`` depends only
    on ``k``, never on ``stop``.
    """
    rng = np.random.default_rng(seed)
    out = []
    k = 0
    while True:
        nominal = start + k * cadence
        if nominal >= stop + jitter:
            break
        shift = int(rng.integers(-jitter, jitter + 1)) if jitter else 0
        t = nominal + shift
        if start <= t < stop and (not out or t > out[-1]):
            out.append(t)
        k += 1
    return out


def replay_feeds(dataset, start, stop, cadence=11, jitter=0, seed=0, speed=math.inf,
                 weather_cadence=10, warmup=240):
    """Feed events for ``[start - warmup, stop)`` in timestamp order.

    ``speed`` is replay minutes per wall-clock minute; ``inf`` replays as fast
    as possible. Pacing never changes the events produced.
    """
    start, stop = int(start), int(stop)
    first = start - warmup
    if first < dataset.grid.start or stop > dataset.grid.stop or stop <= start:
        raise WindowUncovered(
            f"replay [{to_iso(first)}, {to_iso(stop)}) not inside data "
            f"[{to_iso(dataset.grid.start)}, {to_iso(dataset.grid.stop)})")
    g0 = dataset.grid.start
    occ = dataset.garage.occupancy_rate
    flow = dataset.exogenous.traffic_flow
    temp, rain = dataset.exogenous.temperature, dataset.exogenous.rain
    occ_times = set(occupancy_schedule(first, stop, cadence, jitter, seed))
    wall0 = time.monotonic()
    for t in range(first, stop):
        i = t - g0
        if math.isfinite(speed):
            due = wall0 + (t - first) * 60.0 / speed
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        yield FeedEvent(t, "traffic", tuple(float(v) for v in flow[:, i]))
        if (t - first) % weather_cadence == 0 and np.isfinite(temp[i]) and np.isfinite(rain[i]):
            yield FeedEvent(t, "weather", (float(temp[i]), float(rain[i])))
        if t in occ_times and np.isfinite(occ[i]):
            yield FeedEvent(t, "occupancy", float(occ[i]))


class FeedState:
    """Everything the predictor knows at the replay clock."""

    def __init__(self, location_ids, holiday_days=(), cutoff=0.05, order=2,
                 n_occupancy=5, n_flow=3, flow_step=FLOW_WINDOW, window=FLOW_WINDOW,
                 history=64):
        self.location_ids = tuple(location_ids)
        self.holiday_days = frozenset(int(d) for d in holiday_days)
        self.filter = StreamingFilter(butterworth_design(order, cutoff))
        self.occupancy = deque(maxlen=n_occupancy)   # (time, rate), newest last
        self.n_flow = n_flow
        self.flow_step = flow_step
        self.window = window
        self._smoothed = deque(maxlen=window)        # (time, vector)
        self.flow_sums = {}                          # minute -> (locations,) sums
        self.history = history
        self.weather = deque(maxlen=16)              # (time, temperature, rain)
        self.clock = None

    def advance(self, t):
        if self.clock is not None and t < self.clock:
            raise ValueError(f"event at {t} precedes clock {self.clock}")
        self.clock = t

    def apply(self, event: FeedEvent):
        self.advance(event.time)
        if event.kind == "occupancy":
            self.occupancy.append((event.time, float(event.value)))
        elif event.kind == "weather":
            self.weather.append((event.time, *event.value))
        elif event.kind == "traffic":
            self._on_traffic(event.time, np.asarray(event.value, dtype=float))

    def _on_traffic(self, t, flows):
        y = self.filter.step(flows)
        if self._smoothed and self._smoothed[-1][0] != t - 1:
            self._smoothed.clear()
            self.filter.reset()
            y = self.filter.step(flows)
        self._smoothed.append((t, y))
        if len(self._smoothed) == self.window:
            acc = self._smoothed[0][1].copy()
            for _, v in list(self._smoothed)[1:]:
                acc += v
            self.flow_sums[t] = acc
        for old in [m for m in self.flow_sums if m <= t - self.history]:
            del self.flow_sums[old]

    @property
    def last_occupancy_time(self):
        return self.occupancy[-1][0] if self.occupancy else None

    def staleness(self, clock=None) -> int:
        clock = self.clock if clock is None else clock
        if not self.occupancy:
            raise IncompleteState("no occupancy observation yet")
        return int(clock - self.occupancy[-1][0])

    def lookbacks(self):
        """``(t0, occupancy lags, flow lags, temperature, rain, holiday)`` anchored at t0."""
        if len(self.occupancy) < self.occupancy.maxlen:
            raise IncompleteState(f"{len(self.occupancy)} of {self.occupancy.maxlen} "
                                  f"occupancy updates received")
        t0 = self.occupancy[-1][0]
        occ = [v for _, v in reversed(self.occupancy)]
        flow = []
        for j in range(self.n_flow):
            s = self.flow_sums.get(t0 - j * self.flow_step)
            if s is None or not np.all(np.isfinite(s)):
                raise IncompleteState(f"no flow sums at {to_iso(t0 - j * self.flow_step)}")
            flow.append(s)
        known = [w for w in self.weather if w[0] <= t0]
        if not known or t0 - known[-1][0] > WEATHER_MAX_HOLD:
            raise IncompleteState("no recent weather observation")
        _, temp, rain = known[-1]
        holiday = 1.0 if (t0 // MINUTES_PER_DAY) in self.holiday_days else 0.0
        return t0, occ, np.column_stack(flow), temp, rain, holiday


@dataclass
class PredictionBundle:
    issued: int
    garage: str
    target: str
    staleness_min: int
    predictions: dict  # horizon (int) -> value
    model_digest: str
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"issued": to_iso(self.issued), "garage": self.garage, "target": self.target,
                "staleness_min": int(self.staleness_min),
                "predictions": {str(h): float(v) for h, v in sorted(self.predictions.items())},
                "model_digest": self.model_digest}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text) -> "PredictionBundle":
        d = json.loads(text)
        return cls(to_minutes(d["issued"]), d["garage"], d["target"], int(d["staleness_min"]),
                   {int(h): float(v) for h, v in d["predictions"].items()}, d["model_digest"])


def _digest(artifact):
    d = getattr(artifact, "_content_digest", None)
    if d is None:
        d = artifact.content_digest()
        artifact._content_digest = d
    return d


def predict_now(artifacts, state: FeedState, clock=None, garage="garage",
                horizons=SERVED_HORIZONS) -> list:
    """One bundle per artifact (target) for the state at ``clock``."""
    clock = state.clock if clock is None else int(clock)
    s = state.staleness(clock)
    mapped = {h: trained_horizon(h, s) for h in horizons}
    t0, occ, flow, temp, rain, hol = state.lookbacks()
    bundles = []
    for art in artifacts:
        try:
            x = encode_values(art.schema, t0, occ, flow, temp, rain, hol)
        except IncompleteRow as exc:
            raise IncompleteState(str(exc)) from exc
        out = art.predict(x)
        raw = {h: float(out[art.horizons.index(hp)]) for h, hp in mapped.items()}
        if art.target == "occupancy":
            emitted = {h: min(1.0, max(0.0, v)) for h, v in raw.items()}
        else:
            emitted = dict(raw)
        log.debug("raw %s predictions at %s: %s", art.target, to_iso(clock), raw)
        bundles.append(PredictionBundle(clock, garage, art.target, s, emitted,
                                        _digest(art), raw))
    return bundles


# -- sinks --------------------------------------------------------------

class MemorySink:
    def __init__(self):
        self.bundles = []

    def emit(self, bundle):
        self.bundles.append(bundle)

    def close(self):
        pass


class JsonlSink:
    """Line-delimited JSON, one bundle per line."""

    def __init__(self, path_or_file):
        self._own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        self.fh = open(path_or_file, "w") if self._own else path_or_file

    def emit(self, bundle):
        self.fh.write(bundle.to_json() + "\n")

    def close(self):
        self.fh.flush()
        if self._own:
            self.fh.close()


class BoundedSink:
    """Decouples a slow sink from the loop through a bounded buffer.

    When the buffer is full the oldest pending bundle is dropped and counted,
    so the loop itself never blocks. With ``block=True`` the loop waits for
    room instead; replays without a wall clock use this to keep every bundle.
    """

    def __init__(self, inner, maxsize=256, block=False):
        self.inner = inner
        self.maxsize = maxsize
        self.block = block
        self.dropped = 0
        self._buf = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._worker = threading.Thread(target=self._drain, daemon=True)
        self._worker.start()

    def emit(self, bundle):
        with self._cond:
            if self.block:
                while len(self._buf) >= self.maxsize:
                    self._cond.wait()
            elif len(self._buf) >= self.maxsize:
                self._buf.popleft()
                self.dropped += 1
            self._buf.append(bundle)
            self._cond.notify_all()

    def _drain(self):
        while True:
            with self._cond:
                while not self._buf and not self._closed:
                    self._cond.wait()
                if not self._buf and self._closed:
                    return
                bundle = self._buf.popleft()
                self._cond.notify_all()
            self.inner.emit(bundle)

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._worker.join()
        self.inner.close()


class LatestBundles:
    """Thread-safe holder of the newest bundle per target, for the HTTP view."""

    def __init__(self):
        self._lock = threading.Lock()
        self._latest = {}
        self.staleness = None
        self.clock = None
        self.started = time.monotonic()

    def emit(self, bundle):
        with self._lock:
            self._latest[bundle.target] = bundle
            self.staleness = bundle.staleness_min
            self.clock = bundle.issued

    def close(self):
        pass

    def snapshot(self) -> list:
        with self._lock:
            return [self._latest[k].to_dict() for k in sorted(self._latest)]

    def health(self) -> dict:
        with self._lock:
            return {"staleness_min": self.staleness,
                    "clock": to_iso(self.clock) if self.clock is not None else None,
                    "uptime_s": round(time.monotonic() - self.started, 3)}


class _Handler(BaseHTTPRequestHandler):
    latest: LatestBundles = None

    def do_GET(self):
        if self.path == "/predictions":
            body = self.latest.snapshot()
        elif self.path == "/health":
            body = self.latest.health()
        else:
            self.send_error(404)
            return
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)


def start_http(latest: LatestBundles, host="127.0.0.1", port=0):
    """Serve ``GET /predictions`` and ``GET /health`` on a background thread."""
    handler = type("Handler", (_Handler,), {"latest": latest})
    server = ThreadingHTTPServer((host, port), handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


# -- serve loop ---------------------------------------------------------

@dataclass
class ServeStats:
    ticks: int = 0
    bundles: int = 0
    errors: list = field(default_factory=list)  # (iso time, error name, message)


class _Fanout:
    def __init__(self, sinks):
        self.sinks = sinks

    def emit(self, bundle):
        for s in self.sinks:
            s.emit(bundle)


def _merge_ticks(events, start, stop, tick):
    first = start + (-start) % tick
    ticks = (FeedEvent(t, "tick") for t in range(first, stop, tick))
    return heapq.merge(events, ticks, key=FeedEvent.sort_key)


def serve(artifacts, events, sink, start, stop, location_ids, holiday_days=(),
          garage="garage", tick=TICK, cutoff=0.05, order=2, queue_size=1024) -> ServeStats:
    """Run the prediction loop over ``events`` and emit bundles on every tick in ``[start, stop)``.

    Feed events and ticks pass through one queue and are handled by a single
    consumer that owns the ``FeedState``. Per-tick failures are recorded and
    the loop carries on.
    """
    artifacts = list(artifacts)
    sinks = sink if isinstance(sink, (list, tuple)) else [sink]
    out = _Fanout(sinks)
    state = FeedState(location_ids, holiday_days, cutoff, order)
    stats = ServeStats()
    q = queue.Queue(maxsize=queue_size)
    done = object()

    def produce():
        try:
            for ev in _merge_ticks(events, int(start), int(stop), tick):
                q.put(ev)
        finally:
            q.put(done)

    producer = threading.Thread(target=produce, daemon=True)
    producer.start()
    while True:
        ev = q.get()
        if ev is done:
            break
        if ev.kind != "tick":
            state.apply(ev)
            continue
        state.advance(ev.time)
        stats.ticks += 1
        try:
            for b in predict_now(artifacts, state, ev.time, garage):
                out.emit(b)
                stats.bundles += 1
        except (StaleFeed, IncompleteState) as exc:
            stats.errors.append((to_iso(ev.time), type(exc).__name__, str(exc)))
            log.warning("tick %s: %s", to_iso(ev.time), exc)
    producer.join()
    return stats


def realtime_evaluate(bundles, dataset, target=None, horizons=SERVED_HORIZONS):
    """Score emitted bundles against ground truth and the seasonal naive."""
    bundles = [b for b in bundles if target is None or b.target == target]
    if not bundles:
        raise CoverageGap("no bundles to evaluate")
    target = bundles[0].target
    truth = MinuteSeries(dataset.grid.start, target_series(dataset, target))
    issued = np.array([b.issued for b in bundles], dtype=np.int64)
    pred = np.array([[b.predictions[h] for h in horizons] for b in bundles], dtype=float)
    actual = np.column_stack([truth.at(issued + h) for h in horizons])
    if not np.all(np.isfinite(actual)):
        i = int(np.argmax(~np.all(np.isfinite(actual), axis=1)))
        raise CoverageGap(f"ground truth missing for bundle issued {to_iso(issued[i])}")
    naive = seasonal_naive_matrix(truth, issued, horizons)
    return evaluate_predictions(pred, actual, naive, issued, horizons, target,
                                {"mode": "realtime"})
