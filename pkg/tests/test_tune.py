import csv

import numpy as np
import pytest

from parkcast.models.tree import RandomForestRegressor
from parkcast.tune import (GridSpec, cell_seed, grid_search, make_model, plateau_choice,
                           select_forest_size)


class Sets:
    def __init__(self, X, Y):
        self.X, self.Y = X, Y


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    Y = np.column_stack([np.sin(X[:, 0]), X[:, 1] * X[:, 2]])
    return Sets(X[:240], Y[:240]), Sets(X[240:], Y[240:])


def test_cells_and_seeds():
    g = GridSpec({"neurons": [10, 20], "layers": [1, 2, 3]})
    assert len(g) == 6 and g.cells()[1] == {"neurons": 10, "layers": 2}
    assert cell_seed(0, 1) == cell_seed(0, 1) != cell_seed(0, 2)
    with pytest.raises(ValueError):
        GridSpec({"neurons": []})


def test_make_model():
    m = make_model("ffnn", {"neurons": 90, "layers": 4}, seed=3)
    assert m.hidden == (23, 23, 22, 22) and m.config.epochs == 200
    f = make_model("forest", {"max_depth": 4}, seed=3, base={"n_trees": 2})
    assert isinstance(f, RandomForestRegressor) and f.max_depth == 4


def test_grid_search_is_order_independent(toy, tmp_path):
    tr, va = toy
    base = {"epochs": 5, "learning_rate": 1e-2}
    full = grid_search(tr, va, {"neurons": [4, 8], "layers": [1, 2]}, "ffnn", seed=1, base=base)
    assert np.all(np.isfinite(full.validation_mse))
    # re-running one cell alone reproduces its score
    i = 3
    model = full.model_for(i).fit(tr.X, tr.Y, va.X, va.Y)
    assert np.mean((model.predict(va.X) - va.Y) ** 2) == full.validation_mse[i]
    full.write_heatmap(tmp_path / "h.csv")
    full.write_curves(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["axis1", "axis2", "validation_mse"] and len(rows) == 5
    assert len(list(csv.reader(open(tmp_path / "c.csv")))) == 1 + 4 * 5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_cell_is_recorded(toy):
    tr, va = toy
    X = tr.X * 1e4
    res = grid_search(type(tr)(X, tr.Y * 1e6), va, {"learning_rate": [1e3, 1e-3]}, "ffnn",
                      base={"epochs": 3, "optimizer": "sgd", "activation": "identity",
                            "hidden": (3,)})
    assert np.isnan(res.validation_mse[0]) and 0 in res.errors
    assert res.best_index == 1


def test_plateau_choice():
    assert plateau_choice([1, 5, 10, 25], [2.0, 1.05, 1.004, 1.0]) == 10
    assert plateau_choice([1, 5], [1.0, 1.0]) == 1


def test_forest_size_prefix_matches_refit(toy):
    tr, va = toy
    res = select_forest_size(tr, va, counts=[1, 3, 6], seed=2, base={"max_depth": 4})
    refit = RandomForestRegressor(n_trees=3, max_depth=4, seed=2).fit(tr.X, tr.Y)
    assert res.validation_mse[1] == pytest.approx(np.mean((refit.predict(va.X) - va.Y) ** 2),
                                                  rel=1e-12)
    assert res.recommended in (1, 3, 6)
    with pytest.raises(ValueError):
        select_forest_size(tr, va, counts=[5, 1])
