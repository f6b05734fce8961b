"""Transferability studies: feature-category elimination and training-data halving.

Each study changes one factor at a time. All models share the reference seed
and configuration.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewRows
from .eval import evaluate_predictions
from .features import eliminate_category
from .models.artifact import MODEL_KINDS

log = logging.getLogger(__name__)


def _fit(kind, model_kw, train, validation):
    model = MODEL_KINDS[kind](**model_kw)
    return model.fit(train.X, train.Y, validation.X, validation.Y)


@dataclass
class EliminationReport:
    reference_mse: float
    categories: list
    test_mse: list
    target: str = ""

    @property
    def deltas(self) -> list:
        return [m - self.reference_mse for m in self.test_mse]

    def largest(self) -> str:
        return self.categories[int(np.argmax(self.deltas))]

    def rows(self):
        return list(zip(self.categories, self.test_mse, self.deltas))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["category", "test_mse", "delta"])
            w.writerow(["none", repr(self.reference_mse), repr(0.0)])
            for c, m, d in self.rows():
                w.writerow([c, repr(float(m)), repr(float(d))])


def feature_elimination_study(train, validation, test, schema, kind="ffnn",
                              model_kw=None, categories=None) -> EliminationReport:
    """Test MSE with each feature category removed, against the all-features model."""
    model_kw = dict(model_kw or {})
    ref = _fit(kind, model_kw, train, validation)
    ref_mse = float(np.mean((ref.predict(test.X) - test.Y) ** 2))
    cats = list(categories or schema.present_categories())
    mses = []
    for c in cats:
        tr, s = eliminate_category(train, schema, c)
        va, _ = eliminate_category(validation, schema, c)
        te, _ = eliminate_category(test, schema, c)
        model = _fit(kind, model_kw, tr, va)
        mses.append(float(np.mean((model.predict(te.X) - te.Y) ** 2)))
        log.info("without %s: test MSE %.6g (reference %.6g)", c, mses[-1], ref_mse)
    return EliminationReport(ref_mse, cats, mses, train.target)


@dataclass
class HalvingReport:
    levels: list = field(default_factory=list)  # (level, rows, target, test_mase)

    def mase(self, target) -> list:
        return [m for _, _, t, m in self.levels if t == target]

    def deepest_level(self, target) -> int:
        """Largest level k such that MASE < 1 at every level 0..k; -1 if none."""
        k = -1
        for m in self.mase(target):
            if not m < 1.0:
                break
            k += 1
        return k

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["halving_level", "rows", "target", "test_mase"])
            for level, rows, target, m in self.levels:
                w.writerow([level, rows, target, repr(float(m))])


def halved(train, level):
    """The most recent ``1 / 2**level`` of the training rows."""
    n = len(train) >> level
    if n < 1:
        raise TooFewRows(f"halving {level} times leaves no training rows")
    return train.subset(slice(len(train) - n, len(train)))


def data_halving_study(sets, naive, levels, kind="ffnn", model_kw=None) -> HalvingReport:
    """Test MASE per target when training on ever more recent halves of the data.

    ``sets`` maps target -> ``(train, validation, test)`` supervised sets and
    ``naive`` maps target -> naive predictions for the test rows. Validation
    and test sets, and the naive benchmark, stay fixed.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    model_kw = dict(model_kw or {})
    report = HalvingReport()
    for target, (train, validation, test) in sets.items():
        halved(train, levels)  # fail before any training
        for k in range(levels + 1):
            sub = halved(train, k)
            model = _fit(kind, model_kw, sub, validation)
            r = evaluate_predictions(model.predict(test.X), test.Y, naive[target],
                                     test.times, test.horizons, target)
            report.levels.append((k, len(sub), target, r.pooled.mase))
            log.info("%s level %d (%d rows): MASE %.4f", target, k, len(sub), r.pooled.mase)
    return report
