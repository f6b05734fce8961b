import csv

import numpy as np
import pytest

from parkcast.analysis import (EliminationReport, HalvingReport, data_halving_study,
                               feature_elimination_study, halved)
from parkcast.errors import TooFewRows


def test_constant_category_has_no_effect(small_prepared):
    tr, va, te = small_prepared.sets("occupancy", stride=30)
    # a constant category carries no information, so a deterministic tree ignores it
    s = small_prepared.schema
    cols = s.columns("weather")
    for d in (tr, va, te):
        d.X[:, cols] = 0.5
    rep = feature_elimination_study(tr, va, te, s, kind="forest",
                                    model_kw={"n_trees": 1, "bootstrap": False, "max_depth": 6},
                                    categories=["weather", "occupancy_lookback"])
    assert rep.deltas[0] == 0.0
    assert rep.largest() == "occupancy_lookback"


def test_elimination_csv(tmp_path):
    rep = EliminationReport(1.0, ["time", "weather"], [1.5, 1.1], "occupancy")
    rep.write_csv(tmp_path / "e.csv")
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["category", "test_mse", "delta"]
    assert rows[1] == ["none", "1.0", "0.0"] and rows[2][0] == "time"


def test_deepest_level():
    r = HalvingReport([(0, 8, "a", 0.5), (1, 4, "a", 0.9), (2, 2, "a", 1.2), (3, 1, "a", 0.8),
                       (0, 8, "b", 1.1)])
    assert r.deepest_level("a") == 1
    assert r.deepest_level("b") == -1
    assert r.mase("a") == [0.5, 0.9, 1.2, 0.8]


def test_halved_keeps_most_recent(small_prepared):
    tr, _, _ = small_prepared.sets("influx", stride=30)
    h = halved(tr, 2)
    assert len(h) == len(tr) // 4
    np.testing.assert_array_equal(h.times, tr.times[-len(h):])
    with pytest.raises(TooFewRows):
        halved(tr, 30)


def test_halving_study_rows(small_prepared, tmp_path):
    sets = {t: small_prepared.sets(t, stride=30) for t in ("occupancy", "outflux")}
    naive = {t: small_prepared.naive(s[2]) for t, s in sets.items()}
    rep = data_halving_study(sets, naive, 2, "forest", {"n_trees": 2, "max_depth": 4})
    assert [(lv, t) for lv, _, t, _ in rep.levels] == [
        (0, "occupancy"), (1, "occupancy"), (2, "occupancy"),
        (0, "outflux"), (1, "outflux"), (2, "outflux")]
    rep.write_csv(tmp_path / "d.csv")
    assert len(list(csv.reader(open(tmp_path / "d.csv")))) == 7
    with pytest.raises(TooFewRows):
        data_halving_study(sets, naive, 40, "forest", {"n_trees": 1})
