"""Which inputs matter, and how little history is enough.

Feature categories are removed one at a time; then the training set is
halved repeatedly, keeping the most recent half each time.
"""
# %%
from parkcast.analysis import data_halving_study, feature_elimination_study
from parkcast.ingest import SyntheticCityConfig, generate_synthetic_city
from parkcast.pipeline import dataset_from_city, prepare

prepared = prepare(dataset_from_city(generate_synthetic_city(SyntheticCityConfig(seed=3,
                                                                                 days=60))))
kw = {"epochs": 200, "learning_rate": 1e-3}

# %%
tr, va, te = prepared.sets("occupancy", stride=10)
elim = feature_elimination_study(tr, va, te, prepared.schema, "ffnn", kw)
for cat, m, d in elim.rows():
    print(f"without {cat:20s} test MSE {m:.5f}  ({d:+.5f})")

# %%
sets = {t: prepared.sets(t, stride=10) for t in ("occupancy", "influx", "outflux")}
naive = {t: prepared.naive(s[2]) for t, s in sets.items()}
halving = data_halving_study(sets, naive, 5, "ffnn", kw)
for t in sets:
    print(t, [round(m, 2) for m in halving.mase(t)], "deepest:", halving.deepest_level(t))
