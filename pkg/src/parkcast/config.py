"""Run configuration: one JSON document with a section per module.

Unknown keys and out-of-range values are collected and reported together.
The digest of the effective configuration is embedded in every artifact and
report produced from it.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math

from .errors import ConfigInvalid, InvalidCutoff
from .features import CATEGORIES, TARGETS
from .ingest import SyntheticCityConfig
from .signal import butterworth_design

DEFAULTS = {
    "seed": 0,
    "synth": SyntheticCityConfig().to_dict(),
    "data": {"source": "synth", "capacity": None, "initial_occupancy": 0,
             "garage_id": "garage"},
    "signal": {"cutoff": 0.05, "order": 2},
    "split": {"train": 0.72, "validation": 0.08, "test": 0.20},
    "features": {"stride": 10},
    "targets": list(TARGETS),
    "models": {
        "kinds": ["ffnn", "forest"],
        "ffnn": {"hidden": [23, 23, 22, 22], "activation": "relu", "learning_rate": 1e-4,
                 "epochs": 2000, "batch_size": 256, "optimizer": "adam", "checkpoint": True},
        "forest": {"n_trees": 50, "max_depth": 12, "max_features": "all",
                   "min_samples_leaf": 1, "bootstrap": True},
    },
    "tune": {
        "target": "occupancy",
        "probe_epochs": 200,
        "architecture": {"neurons": list(range(10, 101, 10)), "layers": list(range(1, 7))},
        "learning_rates": [1e-2, 1e-3, 1e-4, 1e-5],
        "tree_counts": [1, 5, 10, 25, 50, 100],
        "plateau_tolerance": 0.01,
        "forest_shape": {"max_depth": list(range(2, 21, 2)),
                         "max_features": ["all", "sqrt", "half"]},
        "shape_trees": 10,
    },
    "ablate": {"kind": "ffnn", "target": "occupancy", "levels": 7},
    "realtime": {"cadence": 11, "jitter": 2, "jitter_seed": 0, "speed": "inf",
                 "days": 7, "warmup": 240, "kind": "ffnn", "queue_size": 256,
                 "http_port": None},
}


def _merge(base, override, path, problems):
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            problems.append(f"unknown key {where}")
        elif isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, where, problems)
        else:
            out[k] = v
    return out


def _check(cfg, problems):
    def need(cond, msg):
        if not cond:
            problems.append(msg)

    sp = cfg["split"]
    fr = [sp.get("train"), sp.get("validation"), sp.get("test")]
    if all(isinstance(f, (int, float)) for f in fr):
        need(all(f >= 0 for f in fr) and math.isclose(sum(fr), 1.0, abs_tol=1e-9),
             "split fractions must be >= 0 and sum to 1")
    else:
        problems.append("split fractions must be numbers")
    c = cfg["signal"]["cutoff"]
    need(isinstance(c, (int, float)) and 0 < c < 1, "signal.cutoff must lie in (0, 1)")
    need(isinstance(cfg["signal"]["order"], int) and cfg["signal"]["order"] >= 1,
         "signal.order must be an integer >= 1")
    o = cfg["signal"]["order"]
    if isinstance(c, (int, float)) and 0 < c < 1 and isinstance(o, int) and o >= 1:
        try:
            butterworth_design(o, c)
        except InvalidCutoff as e:
            problems.append(f"signal: {e}")
    need(isinstance(cfg["features"]["stride"], int) and cfg["features"]["stride"] >= 1,
         "features.stride must be an integer >= 1")
    for t in cfg["targets"]:
        need(t in TARGETS, f"unknown target {t!r}")
    need(len(cfg["targets"]) > 0, "targets must not be empty")
    for k in cfg["models"]["kinds"]:
        need(k in ("ffnn", "forest"), f"unknown model kind {k!r}")
    f = cfg["models"]["ffnn"]
    need(f["learning_rate"] > 0, "models.ffnn.learning_rate must be > 0")
    need(f["epochs"] >= 1, "models.ffnn.epochs must be >= 1")
    need(f["batch_size"] >= 1, "models.ffnn.batch_size must be >= 1")
    need(len(f["hidden"]) >= 1 and all(h >= 1 for h in f["hidden"]),
         "models.ffnn.hidden must list positive widths")
    r = cfg["models"]["forest"]
    need(r["n_trees"] >= 1, "models.forest.n_trees must be >= 1")
    need(r["max_depth"] is None or r["max_depth"] >= 1, "models.forest.max_depth must be >= 1")
    counts = cfg["tune"]["tree_counts"]
    need(bool(counts) and counts == sorted(counts) and counts[0] >= 1,
         "tune.tree_counts must be ascending and >= 1")
    a = cfg["ablate"]
    need(a["kind"] in ("ffnn", "forest"), "ablate.kind must be ffnn or forest")
    need(a["target"] in TARGETS, "ablate.target must be a target name")
    need(isinstance(a["levels"], int) and a["levels"] >= 0, "ablate.levels must be >= 0")
    rt = cfg["realtime"]
    need(rt["cadence"] >= 1, "realtime.cadence must be >= 1")
    need(0 <= rt["jitter"] < rt["cadence"], "realtime.jitter must lie in [0, cadence)")
    need(rt["speed"] == "inf" or (isinstance(rt["speed"], (int, float)) and rt["speed"] > 0),
         "realtime.speed must be > 0 or \"inf\"")
    need(rt["days"] > 0, "realtime.days must be > 0")
    need(rt["kind"] in ("ffnn", "forest"), "realtime.kind must be ffnn or forest")
    d = cfg["data"]
    need(d["source"] in ("synth", "files"), "data.source must be synth or files")
    if d["source"] == "files":
        need(isinstance(d["capacity"], int) and d["capacity"] > 0,
             "data.capacity is required for file sources")
    try:
        SyntheticCityConfig.from_dict(cfg["synth"]).validate()
    except Exception as exc:  # InvalidConfig or a bad field name
        problems.append(f"synth: {exc}")


def build_config(override=None) -> dict:
    """Defaults updated with ``override``; raises ``ConfigInvalid`` listing every problem."""
    problems = []
    cfg = _merge(DEFAULTS, override or {}, "", problems)
    try:
        _check(cfg, problems)
    except (KeyError, TypeError) as exc:
        problems.append(f"malformed section: {exc}")
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def load_config(path=None, override=None) -> dict:
    doc = {}
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid([f"cannot read config {path}: {exc}"]) from exc
    for k, v in (override or {}).items():
        if isinstance(v, dict):
            doc[k] = dict(doc.get(k, {}), **v)
        else:
            doc[k] = v
    return build_config(doc)


def config_digest(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
