"""End-to-end wiring shared by the CLI, the studies and the demos."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import store
from .datamodel import (MINUTES_PER_DAY, Dataset, ExogenousSeries, GarageStateSeries, Grid,
                        SplitSpec, assemble_dataset, chronological_split,
                        derive_states_from_transactions)
from .eval import evaluate, evaluate_predictions, naive_baseline
from .features import HORIZONS, TARGETS, FeatureSchema, build_supervised, fit_schema
from .ingest import holidays_to_grid, traffic_to_grid, weather_to_grid
from .models.artifact import train_artifact
from .realtime import SERVED_HORIZONS, replay_feeds, serve
from .signal import attach_flow_sums

log = logging.getLogger(__name__)


def dataset_from_sources(garage, location_ids, traffic_flow, weather, holidays, grid,
                         cutoff=0.05, order=2) -> Dataset:
    """Assemble a cleaned dataset with smoothed flow sums over the whole grid.

    Smoothing runs before any split so that every partition sees the same
    causal filter state a live system would have.
    """
    temp, rain = weather_to_grid(weather, grid)
    hol = holidays_to_grid(holidays, grid)
    exo = ExogenousSeries(grid.start, location_ids, traffic_flow, temp, rain, hol)
    return attach_flow_sums(assemble_dataset(garage, exo, grid), cutoff, order)


def dataset_from_city(city, cutoff=0.05, order=2) -> Dataset:
    return dataset_from_sources(city.truth, city.location_ids, city.traffic_flow,
                                city.weather, city.holidays, city.grid, cutoff, order)


def dataset_from_records(transactions, traffic, weather, holidays, capacity,
                         initial_occupancy, grid, garage_id="garage", cutoff=0.05,
                         order=2) -> Dataset:
    garage = derive_states_from_transactions(transactions, capacity, initial_occupancy,
                                             grid, garage_id)
    loc, flow = traffic_to_grid(traffic, grid)
    return dataset_from_sources(garage, loc, flow, weather, holidays, grid, cutoff, order)


@dataclass
class Prepared:
    dataset: Dataset
    train: Dataset
    validation: Dataset
    test: Dataset
    schema: FeatureSchema

    def sets(self, target, horizons=HORIZONS, stride=1, schema=None):
        """Supervised train/validation/test sets for one target."""
        schema = schema or self.schema
        return tuple(build_supervised(d, schema, horizons, target, stride)
                     for d in (self.train, self.validation, self.test))

    def naive(self, sset, kind="seasonal"):
        return naive_baseline(self.dataset, sset.target, sset.times, sset.horizons, kind)


def prepare(dataset: Dataset, split: SplitSpec = SplitSpec()) -> Prepared:
    train, val, test = chronological_split(dataset, split)
    return Prepared(dataset, train, val, test, fit_schema(train))


def train_and_evaluate(prepared: Prepared, kind, target, model_kw, stride=1,
                       horizons=HORIZONS, metadata=None):
    """Fit one artifact and score it on the test partition."""
    tr, va, te = prepared.sets(target, horizons, stride)
    art = train_artifact(kind, tr, va, prepared.schema, metadata, **model_kw)
    report = evaluate(art, te, prepared.naive(te))
    log.info("%s/%s: pooled MASE %.4f", kind, target, report.pooled.mase)
    return art, report


# -- persistence ---------------------------------------------------------

def save_dataset(dataset: Dataset, path, meta=None) -> str:
    """Store a dataset deterministically; returns the file's sha256."""
    g, e = dataset.garage, dataset.exogenous
    info = {"grid_start": dataset.grid.start, "grid_n": dataset.grid.n,
            "garage_id": g.garage_id, "capacity": g.capacity,
            "location_ids": list(e.location_ids), "meta": dict(meta or {})}
    arrays = {"occupancy_rate": g.occupancy_rate, "influx": g.influx, "outflux": g.outflux,
              "traffic_flow": e.traffic_flow, "temperature": e.temperature, "rain": e.rain,
              "holiday": e.holiday, "row_mask": dataset.row_mask}
    if dataset.flow_sums is not None:
        arrays["flow_sums"] = dataset.flow_sums
    return store.write(path, info, arrays)


def load_dataset(path) -> Dataset:
    info, a = store.read(path)
    start = info["grid_start"]
    garage = GarageStateSeries(info["garage_id"], info["capacity"], start,
                               a["occupancy_rate"], a["influx"], a["outflux"])
    exo = ExogenousSeries(start, info["location_ids"], a["traffic_flow"], a["temperature"],
                          a["rain"], a["holiday"])
    return Dataset(Grid(start, info["grid_n"]), garage, exo, a["row_mask"].astype(bool),
                   a.get("flow_sums"), dict(info["meta"]))


# -- real-time replay ----------------------------------------------------

def replay_window(dataset: Dataset, days, tick=5, lead=60):
    """The last ``days`` days whose bundles can still be scored ``lead`` minutes ahead."""
    stop = dataset.grid.stop - lead
    stop -= stop % tick
    return stop - int(days * MINUTES_PER_DAY), stop


def holiday_days(dataset: Dataset):
    hol = dataset.exogenous.holiday
    days = dataset.times[np.isfinite(hol) & (hol > 0)] // MINUTES_PER_DAY
    return sorted(set(int(d) for d in days))


def run_replay(dataset: Dataset, artifacts, start, stop, sink, cadence=11, jitter=0,
               seed=0, speed=float("inf"), warmup=240, cutoff=0.05, order=2,
               queue_size=1024):
    """Replay ``dataset`` feeds over ``[start, stop)`` through the serve loop."""
    events = replay_feeds(dataset, start, stop, cadence, jitter, seed, speed, warmup=warmup)
    return serve(artifacts, events, sink, start, stop, dataset.exogenous.location_ids,
                 holiday_days(dataset), dataset.garage.garage_id, cutoff=cutoff,
                 order=order, queue_size=queue_size)


def offline_test_report(prepared: Prepared, artifact, stride=10, horizons=SERVED_HORIZONS):
    """Offline metrics of ``artifact`` over the whole test partition, served horizons only.

    This is the reference a real-time deployment is judged against.
    """
    te = build_supervised(prepared.test, artifact.schema, artifact.horizons, artifact.target,
                          stride)
    cols = [te.horizons.index(h) for h in horizons]
    pred = artifact.predict(te.X, te.schema_digest)[:, cols]
    naive = naive_baseline(prepared.dataset, artifact.target, te.times, horizons)
    return evaluate_predictions(pred, te.Y[:, cols], naive, te.times, horizons,
                                artifact.target, {"mode": "offline_test"})


def offline_window_report(prepared: Prepared, artifact, start, stop,
                          horizons=SERVED_HORIZONS):
    """Offline metrics for the same artifact at the replay's tick times.

    Isolates the cost of feed staleness: same rows, same period, full data.
    """
    full = build_supervised(prepared.test, artifact.schema, artifact.horizons,
                            artifact.target, stride=5)
    sel = (full.times >= start) & (full.times < stop)
    sub = full.subset(np.flatnonzero(sel))
    cols = [sub.horizons.index(h) for h in horizons]
    pred = artifact.predict(sub.X, sub.schema_digest)[:, cols]
    naive = naive_baseline(prepared.dataset, artifact.target, sub.times, horizons)
    return evaluate_predictions(pred, sub.Y[:, cols], naive, sub.times, horizons,
                                artifact.target, {"mode": "offline_window"})
