import io
import json
import threading
import time
import urllib.request

import numpy as np
import pytest

from parkcast.errors import CoverageGap, IncompleteState, StaleFeed, WindowUncovered
from parkcast.pipeline import holiday_days, replay_window, run_replay
from parkcast.realtime import (SERVED_HORIZONS, BoundedSink, FeedEvent, FeedState, JsonlSink,
                               LatestBundles, MemorySink, PredictionBundle, occupancy_schedule,
                               predict_now, realtime_evaluate, replay_feeds, serve,
                               start_http, trained_horizon)
from parkcast.signal import butterworth_design, filter_apply_causal, rolling_sum


def test_trained_horizon():
    assert trained_horizon(5, 0) == 5
    assert trained_horizon(60, 30) == 90
    assert trained_horizon(5, 1) == 10
    with pytest.raises(StaleFeed):
        trained_horizon(5, 31)


def test_schedule_independent_of_stop():
    a = occupancy_schedule(0, 500, 11, jitter=3, seed=4)
    b = occupancy_schedule(0, 1000, 11, jitter=3, seed=4)
    assert b[:len(a) - 1] == a[:-1]
    assert all(y > x for x, y in zip(b, b[1:]))
    assert occupancy_schedule(0, 50, 11) == [0, 11, 22, 33, 44]


@pytest.fixture(scope="module")
def window(small_prepared):
    start, stop = replay_window(small_prepared.dataset, 0.5)
    return start, stop


def test_replay_events(small_prepared, window):
    ds = small_prepared.dataset
    start, stop = window
    events = list(replay_feeds(ds, start, stop, warmup=60))
    assert events[0].time == start - 60 and events[-1].time < stop
    assert [e.sort_key() for e in events] == sorted(e.sort_key() for e in events)
    with pytest.raises(WindowUncovered):
        next(replay_feeds(ds, ds.grid.start, ds.grid.start + 100))


def test_streamed_flow_sums_match_offline(small_prepared, window):
    ds = small_prepared.dataset
    start, stop = window
    first = start - 240
    state = FeedState(ds.exogenous.location_ids)
    for ev in replay_feeds(ds, start, start + 30):
        state.apply(ev)
    c = butterworth_design(2, 0.05)
    lo = first - ds.grid.start
    flows = ds.exogenous.traffic_flow[:, lo:lo + 270]
    offline = rolling_sum(np.vstack([filter_apply_causal(c, r) for r in flows]))
    t = start + 29
    np.testing.assert_allclose(state.flow_sums[t], offline[:, t - first], rtol=1e-12)


def test_incomplete_state():
    s = FeedState(["a"])
    with pytest.raises(IncompleteState):
        s.staleness(0)
    for t in (0, 11, 22):
        s.apply(FeedEvent(t, "occupancy", 0.5))
    with pytest.raises(IncompleteState):
        s.lookbacks()
    with pytest.raises(ValueError):
        s.apply(FeedEvent(5, "traffic", (1.0,)))


def test_predict_now_maps_horizons(small_prepared, small_artifacts, window):
    ds = small_prepared.dataset
    start, _ = window
    state = FeedState(ds.exogenous.location_ids, holiday_days(ds))
    for ev in replay_feeds(ds, start, start + 1):
        state.apply(ev)
    clock = state.last_occupancy_time + 7
    bundles = predict_now(list(small_artifacts.values()), state, clock)
    assert [b.target for b in bundles] == ["occupancy", "influx", "outflux"]
    b = bundles[0]
    assert b.staleness_min == 7 and sorted(b.predictions) == list(SERVED_HORIZONS)
    t0, occ, flow, temp, rain, hol = state.lookbacks()
    from parkcast.features import encode_values
    art = small_artifacts["occupancy"]
    out = art.predict(encode_values(art.schema, t0, occ, flow, temp, rain, hol))
    assert b.raw[5] == out[art.horizons.index(15)]
    assert all(0 <= v <= 1 for v in b.predictions.values())
    assert PredictionBundle.from_json(b.to_json()).to_json() == b.to_json()
    with pytest.raises(StaleFeed):
        predict_now(list(small_artifacts.values()), state, state.last_occupancy_time + 31)


def test_serve_and_evaluate(small_prepared, small_artifacts, window):
    ds = small_prepared.dataset
    start, stop = window
    mem = MemorySink()
    buf = io.StringIO()
    stats = run_replay(ds, small_artifacts.values(), start, stop, [mem, JsonlSink(buf)],
                       jitter=2, seed=1)
    assert stats.ticks == (stop - start) // 5 and not stats.errors
    assert stats.bundles == 3 * stats.ticks == len(mem.bundles)
    lines = buf.getvalue().splitlines()
    assert lines == [b.to_json() for b in mem.bundles]
    assert all(b.issued % 5 == 0 and 0 <= b.staleness_min <= 30 for b in mem.bundles)
    r = realtime_evaluate(mem.bundles, ds, "occupancy")
    assert r.meta["mode"] == "realtime" and len(r.times) == stats.ticks
    late = [PredictionBundle(ds.grid.stop - 10, "g", "occupancy", 0,
                             {h: 0.0 for h in SERVED_HORIZONS}, "x")]
    with pytest.raises(CoverageGap):
        realtime_evaluate(late, ds)
    with pytest.raises(CoverageGap):
        realtime_evaluate([], ds)


def test_serve_records_errors_without_stopping(small_artifacts):
    events = [FeedEvent(t, "traffic", (1.0,) * 11) for t in range(0, 20)]
    stats = serve(small_artifacts.values(), iter(events), MemorySink(), 0, 20,
                  [f"L{i}" for i in range(11)])
    assert stats.ticks == 4 and stats.bundles == 0 and len(stats.errors) == 4


class SlowSink:
    def __init__(self):
        self.got = []
        self.gate = threading.Event()

    def emit(self, b):
        self.gate.wait()
        self.got.append(b)

    def close(self):
        pass


def test_bounded_sink_drops_oldest():
    inner = SlowSink()
    sink = BoundedSink(inner, maxsize=2)
    for i in range(6):
        sink.emit(i)
    time.sleep(0.05)
    inner.gate.set()
    sink.close()
    assert sink.dropped >= 1
    assert inner.got[-2:] == [4, 5] and len(inner.got) + sink.dropped == 6


def test_http_endpoints():
    latest = LatestBundles()
    latest.emit(PredictionBundle(60, "g", "occupancy", 3, {5: 0.5}, "d"))
    server = start_http(latest)
    try:
        base = f"http://127.0.0.1:{server.server_address[1]}"
        preds = json.load(urllib.request.urlopen(base + "/predictions"))
        health = json.load(urllib.request.urlopen(base + "/health"))
    finally:
        server.shutdown()
    assert preds[0]["predictions"] == {"5": 0.5}
    assert health["staleness_min"] == 3 and health["clock"] == "1970-01-01T01:00Z"


def test_bounded_sink_blocking_keeps_everything():
    inner = MemorySink()
    sink = BoundedSink(inner, maxsize=2, block=True)
    for i in range(500):
        sink.emit(i)
    sink.close()
    assert sink.dropped == 0 and inner.bundles == list(range(500))
