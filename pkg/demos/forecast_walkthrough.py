"""Walkthrough: synthetic garage, features, one network per target, scores.

Run with ``python demos/forecast_walkthrough.py``. Takes about a minute.
"""
# %%
import numpy as np

from parkcast.eval import evaluate
from parkcast.ingest import SyntheticCityConfig, generate_synthetic_city
from parkcast.models.artifact import train_artifact
from parkcast.pipeline import dataset_from_city, prepare

# %% a 60-day city: one garage, 11 traffic detectors, hourly weather
city = generate_synthetic_city(SyntheticCityConfig(seed=1, days=60))
occ = city.truth.occupancy_rate.reshape(-1, 1440)
print("mean occupancy by hour:", np.round(occ.mean(axis=0)[::60], 2))

# %% clean minute grid, chronological split, scaling fitted on train only
prepared = prepare(dataset_from_city(city))
schema = prepared.schema
print(f"{schema.width} features in {schema.present_categories()}")
print(f"rows dropped as incomplete: {prepared.dataset.deletion_fraction:.4%}")

# %% one multi-horizon network per target (5 to 90 minutes ahead)
for target in ("occupancy", "influx", "outflux"):
    tr, va, te = prepared.sets(target, stride=10)
    art = train_artifact("ffnn", tr, va, schema, epochs=300, learning_rate=1e-3)
    rep = evaluate(art, te, prepared.naive(te))
    by_h = rep.mase_by_horizon()
    print(f"{target:9s} pooled MASE {rep.pooled.mase:.3f}  "
          f"h=5 {by_h[5]:.3f}  h=60 {by_h[60]:.3f}  h=90 {by_h[90]:.3f}")
