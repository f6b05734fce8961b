"""Replay a day of feeds through the real-time loop and compare with offline scores.

Occupancy arrives roughly every 11 minutes, so predictions are anchored at
the last observation and read from a longer trained horizon.
"""
# %%
import collections

from parkcast.ingest import SyntheticCityConfig, generate_synthetic_city
from parkcast.models.artifact import train_artifact
from parkcast.pipeline import (dataset_from_city, offline_window_report, prepare,
                               replay_window, run_replay)
from parkcast.realtime import MemorySink, realtime_evaluate, trained_horizon

# %%
prepared = prepare(dataset_from_city(generate_synthetic_city(SyntheticCityConfig(seed=2,
                                                                                 days=45))))
arts = []
for target in ("occupancy", "influx", "outflux"):
    tr, va, _ = prepared.sets(target, stride=10)
    arts.append(train_artifact("ffnn", tr, va, prepared.schema, epochs=200,
                               learning_rate=1e-3))

# %% staleness of s minutes turns horizon h into the trained horizon h'
print("h=60 after 0, 7, 30 min:", [trained_horizon(60, s) for s in (0, 7, 30)])

# %%
start, stop = replay_window(prepared.dataset, 1)
sink = MemorySink()
stats = run_replay(prepared.dataset, arts, start, stop, sink, jitter=2)
print(f"{stats.ticks} ticks, {stats.bundles} bundles, {len(stats.errors)} skipped ticks")
print("staleness histogram:",
      sorted(collections.Counter(b.staleness_min for b in sink.bundles).items()))
print(sink.bundles[0].to_json()[:160], "...")

# %%
for art in arts:
    live = realtime_evaluate(sink.bundles, prepared.dataset, art.target).pooled.mase
    off = offline_window_report(prepared, art, start, stop).pooled.mase
    print(f"{art.target:9s} realtime MASE {live:.3f}  offline MASE {off:.3f}")
