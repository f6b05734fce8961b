"""Grid searches over network architecture, learning rate and forest shape.

Every cell gets its own seed derived from ``(master seed, cell index)``, so a
cell's result does not depend on which other cells ran or in what order.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import Divergence
from .models.mlp import FFNNRegressor, split_neurons
from .models.tree import RandomForestRegressor, forest_fit

log = logging.getLogger(__name__)

DEFAULT_GRIDS = {
    "architecture": {"neurons": list(range(10, 101, 10)), "layers": list(range(1, 7))},
    "learning_rate": {"learning_rate": [1e-2, 1e-3, 1e-4, 1e-5]},
    "n_trees": [1, 5, 10, 25, 50, 100],
    "forest_shape": {"max_depth": list(range(2, 21, 2)),
                     "max_features": ["all", "sqrt", "half"]},
}
PROBE_EPOCHS = 200


@dataclass
class GridSpec:
    axes: dict  # axis name -> list of values, product taken in insertion order

    def __post_init__(self):
        if not self.axes:
            raise ValueError("grid needs at least one axis")
        for name, values in self.axes.items():
            if len(values) == 0:
                raise ValueError(f"axis {name!r} is empty")
        self.axes = {k: list(v) for k, v in self.axes.items()}

    @property
    def names(self) -> list:
        return list(self.axes)

    def cells(self) -> list:
        return [dict(zip(self.axes, combo)) for combo in itertools.product(*self.axes.values())]

    def __len__(self):
        return int(np.prod([len(v) for v in self.axes.values()]))


def cell_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _ffnn_kwargs(cell, base):
    kw = dict(base)
    cell = dict(cell)
    neurons, layers = cell.pop("neurons", None), cell.pop("layers", None)
    if neurons is not None or layers is not None:
        kw["hidden"] = split_neurons(neurons or 90, layers or 4)
    kw.update(cell)
    return kw


def make_model(kind, cell, seed, base=None):
    base = dict(base or {})
    if kind == "ffnn":
        base.setdefault("epochs", PROBE_EPOCHS)
        return FFNNRegressor(seed=seed, **_ffnn_kwargs(cell, base))
    if kind == "forest":
        base.update(cell)
        return RandomForestRegressor(seed=seed, **base)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class TuneResult:
    kind: str
    grid: GridSpec
    cells: list
    seeds: list
    validation_mse: np.ndarray  # NaN for cells that diverged
    curves: dict = field(default_factory=dict)   # cell index -> (train, val) per epoch
    errors: dict = field(default_factory=dict)   # cell index -> message
    base: dict = field(default_factory=dict)
    recommended: int | None = None

    @property
    def best_index(self) -> int:
        v = np.where(np.isfinite(self.validation_mse), self.validation_mse, np.inf)
        return int(np.argmin(v))  # first minimum wins ties

    @property
    def best_cell(self) -> dict:
        return self.cells[self.best_index]

    def model_for(self, index):
        """Untrained model configured exactly as cell ``index`` was."""
        return make_model(self.kind, self.cells[index], self.seeds[index], self.base)

    def write_heatmap(self, path):
        names = self.grid.names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["axis1", "axis2", "validation_mse"])
            for cell, v in zip(self.cells, self.validation_mse):
                a2 = cell[names[1]] if len(names) > 1 else ""
                w.writerow([cell[names[0]], a2, repr(float(v))])

    def write_curves(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "epoch", "train_mse", "val_mse"])
            for i in sorted(self.curves):
                tr, va = self.curves[i]
                for e, (a, b) in enumerate(zip(tr, va), start=1):
                    w.writerow([i, e, repr(float(a)), repr(float(b))])


def _mse(model, X, Y):
    return float(np.mean((model.predict(X) - Y) ** 2))


def grid_search(train, validation, grid: GridSpec, kind="ffnn", seed=0, base=None) -> TuneResult:
    """Train one model per grid cell and record its validation MSE.

    ``train`` and ``validation`` are supervised sets (anything with ``X`` and
    ``Y``). A cell whose training diverges is recorded with NaN and the
    sweep continues.
    """
    if not isinstance(grid, GridSpec):
        grid = GridSpec(grid)
    cells = grid.cells()
    seeds = [cell_seed(seed, i) for i in range(len(cells))]
    out = np.full(len(cells), np.nan)
    result = TuneResult(kind, grid, cells, seeds, out, base=dict(base or {}))
    for i, cell in enumerate(cells):
        model = result.model_for(i)
        try:
            model.fit(train.X, train.Y, validation.X, validation.Y)
        except Divergence as exc:
            result.errors[i] = str(exc)
            log.warning("cell %d %s diverged: %s", i, cell, exc)
            continue
        out[i] = _mse(model, validation.X, validation.Y)
        if kind == "ffnn":
            # curves are in standardized target units, as seen by the optimizer
            result.curves[i] = (list(model.result.train_curve), list(model.result.val_curve))
        log.info("cell %d %s: validation MSE %.6g", i, cell, out[i])
    return result


def plateau_choice(counts, mse, tolerance=0.01) -> int:
    """Smallest count whose MSE is within ``tolerance`` (relative) of the minimum."""
    mse = np.asarray(mse, dtype=float)
    limit = np.min(mse) * (1.0 + tolerance)
    return int(counts[int(np.flatnonzero(mse <= limit)[0])])


def select_forest_size(train, validation, counts=None, tolerance=0.01, seed=0,
                       base=None) -> TuneResult:
    """Validation MSE against the number of trees and the plateau recommendation.

    Per-tree seeds are spawned from the master seed, so the first ``n`` trees
    of the largest forest are exactly the forest of size ``n``; one fit serves
    every count.
    """
    counts = list(DEFAULT_GRIDS["n_trees"] if counts is None else counts)
    if not counts or counts != sorted(counts) or counts[0] < 1:
        raise ValueError("tree counts must be ascending and >= 1")
    base = dict(base or {})
    base.pop("n_trees", None)
    full = forest_fit(train.X, train.Y, RandomForestRegressor(n_trees=counts[-1], seed=seed,
                                                              **base))
    per_tree = np.stack([t.predict(validation.X) for t in full.trees])
    csum = np.cumsum(per_tree, axis=0)
    mse = np.array([float(np.mean((csum[n - 1] / n - validation.Y) ** 2)) for n in counts])
    grid = GridSpec({"n_trees": counts})
    result = TuneResult("forest", grid, grid.cells(), [seed] * len(counts), mse,
                        base=base)
    result.recommended = plateau_choice(counts, mse, tolerance)
    return result
