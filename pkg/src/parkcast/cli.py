"""Command-line entry point: ``parkcast <command> [options]``.

Commands share one output directory:

    synth        data/*.csv and data/synth_config.json
    prepare      dataset.pcd (cleaned minute grid) and rejects_*.csv
    train        artifacts/<kind>_<target>.pcm and train_summary.json
    tune         tune_heatmap.csv, tune_curves.csv, tune_trees.csv,
                 tune_forest_heatmap.csv, tune_summary.json
    evaluate     report.json, errors_<kind>_<target>.csv, latency.json
    ablate       ablation_features.csv, ablation_data.csv
    serve        bundles.jsonl (and optional HTTP endpoint)
    replay-eval  bundles.jsonl and realtime_report.json

Results are summarized as one JSON object on stdout. Failures print a JSON
error object on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import store
from .analysis import data_halving_study, feature_elimination_study
from .config import config_digest, load_config
from .datamodel import Grid, SplitSpec, to_iso, to_minutes
from .errors import ConfigInvalid, ParkcastError, SchemaMismatch
from .eval import (evaluate, export_error_distribution, measure_latency, write_report)
from .ingest import (SyntheticCityConfig, generate_synthetic_city, parse_holidays_csv,
                     parse_traffic_csv, parse_transactions_csv, parse_weather_csv,
                     write_holidays_csv, write_traffic_csv, write_transactions_csv,
                     write_weather_csv)
from .models.artifact import load_artifact, save_artifact, train_artifact
from .pipeline import (dataset_from_records, load_dataset, offline_test_report,
                       offline_window_report, prepare, replay_window, run_replay, save_dataset)
from .realtime import (BoundedSink, JsonlSink, LatestBundles, PredictionBundle,
                       realtime_evaluate, start_http)
from .tune import GridSpec, grid_search, select_forest_size

log = logging.getLogger("parkcast")

DATASET_FILE = "dataset.pcd"


def _paths(args):
    out = Path(args.out_dir)
    return out, out / "data", out / DATASET_FILE, out / "artifacts"


def _config(args, extra=None):
    override = {}
    if args.seed is not None:
        override["seed"] = args.seed
    for k, v in (extra or {}).items():
        override[k] = v
    return load_config(args.config, override)


def _split(cfg):
    s = cfg["split"]
    return SplitSpec(s["train"], s["validation"], s["test"])


def _require_dataset(path):
    if not path.exists():
        raise ConfigInvalid([f"dataset {path} not found; run `parkcast prepare` first"])
    return load_dataset(path)


def _model_kw(cfg, kind):
    kw = dict(cfg["models"][kind])
    kw["seed"] = cfg["seed"]
    return kw


# -- commands ---------------------------------------------------------------

def cmd_synth(args):
    synth = {}
    if args.seed is not None:
        synth["seed"] = args.seed
    if args.days is not None:
        synth["days"] = args.days
    cfg = _config(args, {"synth": synth} if synth else None)
    out, data, _, _ = _paths(args)
    data.mkdir(parents=True, exist_ok=True)
    city = generate_synthetic_city(SyntheticCityConfig.from_dict(cfg["synth"]))
    write_transactions_csv(city.transactions, data / "transactions.csv")
    write_traffic_csv(city.traffic, data / "traffic.csv")
    write_weather_csv(city.weather, data / "weather.csv")
    write_holidays_csv(city.holidays, data / "holidays.csv")
    with open(data / "synth_config.json", "w") as fh:
        json.dump(city.config.to_dict(), fh, indent=1, sort_keys=True)
    return {"transactions": len(city.transactions), "rejected_arrivals": city.rejected_arrivals,
            "minutes": city.grid.n, "data_dir": str(data)}


def cmd_prepare(args):
    cfg = _config(args)
    out, data, ds_path, _ = _paths(args)
    data = Path(args.data_dir) if args.data_dir else data
    if not (data / "transactions.csv").exists():
        raise ConfigInvalid([f"no transactions.csv in {data}; run `parkcast synth` "
                             f"or point --data-dir at the source files"])
    tx = parse_transactions_csv(data / "transactions.csv")
    traffic = parse_traffic_csv(data / "traffic.csv")
    weather = parse_weather_csv(data / "weather.csv")
    holidays = parse_holidays_csv(data / "holidays.csv")
    out.mkdir(parents=True, exist_ok=True)
    for name, res in (("transactions", tx), ("traffic", traffic), ("weather", weather),
                      ("holidays", holidays)):
        if res.rejects:
            res.write_rejects(out / f"rejects_{name}.csv")

    synth_meta = data / "synth_config.json"
    d = cfg["data"]
    if synth_meta.exists():
        sc = SyntheticCityConfig.from_json(synth_meta)
        start = to_minutes(sc.start)
        start -= start % 1440
        grid = Grid(start, sc.days * 1440)
        capacity, initial, garage_id = sc.capacity, 0, sc.garage_id
    else:
        if not d["capacity"]:
            raise ConfigInvalid(["data.capacity is required for non-synthetic sources"])
        times = [o.time for o in traffic]
        if not times:
            raise ConfigInvalid(["traffic.csv has no valid rows to define the grid"])
        grid = Grid(min(times), max(times) - min(times) + 1)
        capacity, initial, garage_id = d["capacity"], d["initial_occupancy"], d["garage_id"]
    ds = dataset_from_records(tx, traffic, weather, holidays, capacity, initial, grid,
                              garage_id, cfg["signal"]["cutoff"], cfg["signal"]["order"])
    meta = {"config_digest": config_digest(cfg), "deletion_fraction": ds.deletion_fraction,
            "rejects": {"transactions": len(tx.rejects), "traffic": len(traffic.rejects),
                        "weather": len(weather.rejects), "holidays": len(holidays.rejects)}}
    digest = save_dataset(ds, ds_path, meta)
    return {"dataset": str(ds_path), "dataset_digest": digest, "minutes": grid.n,
            "deletion_fraction": ds.deletion_fraction}


def _prepared(cfg, ds_path):
    ds = _require_dataset(ds_path)
    return prepare(ds, _split(cfg)), store.sha256_file(ds_path)


def cmd_train(args):
    cfg = _config(args)
    out, _, ds_path, art_dir = _paths(args)
    p, ds_digest = _prepared(cfg, ds_path)
    art_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_digest": config_digest(cfg), "dataset_digest": ds_digest,
            "seed": cfg["seed"], "stride": cfg["features"]["stride"]}
    summary = {}
    for target in cfg["targets"]:
        tr, va, _ = p.sets(target, stride=cfg["features"]["stride"])
        for kind in cfg["models"]["kinds"]:
            art = train_artifact(kind, tr, va, p.schema, meta, **_model_kw(cfg, kind))
            path = art_dir / f"{kind}_{target}.pcm"
            digest = save_artifact(art, path)
            summary[f"{kind}_{target}"] = {"path": str(path.relative_to(out)), "digest": digest,
                                           "validation_mse": art.metadata["validation_mse"]}
            log.info("trained %s/%s: validation MSE %.6g", kind, target,
                     art.metadata["validation_mse"])
    with open(out / "train_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def _load_artifacts(cfg, art_dir, ds_digest, kinds=None, targets=None):
    arts = {}
    for kind in kinds or cfg["models"]["kinds"]:
        for target in targets or cfg["targets"]:
            path = art_dir / f"{kind}_{target}.pcm"
            if not path.exists():
                raise ConfigInvalid([f"artifact {path} not found; run `parkcast train` first"])
            art = load_artifact(path)
            if art.metadata.get("dataset_digest") != ds_digest:
                raise SchemaMismatch(f"artifact {path.name} was trained on a different "
                                     f"dataset; retrain or re-prepare")
            arts[(kind, target)] = art
    return arts


def cmd_evaluate(args):
    cfg = _config(args)
    out, _, ds_path, art_dir = _paths(args)
    p, ds_digest = _prepared(cfg, ds_path)
    arts = _load_artifacts(cfg, art_dir, ds_digest)
    reports, latency, summary = [], {}, {}
    for target in cfg["targets"]:
        _, _, te = p.sets(target, stride=cfg["features"]["stride"])
        naive = p.naive(te)
        for kind in cfg["models"]["kinds"]:
            art = arts[(kind, target)]
            rep = evaluate(art, te, naive, {"config_digest": config_digest(cfg),
                                            "model_digest": store.sha256_file(
                                                art_dir / f"{kind}_{target}.pcm")})
            reports.append(rep)
            export_error_distribution(rep, out / f"errors_{kind}_{target}.csv")
            lat = measure_latency(art, te.X[:50], repetitions=args.latency_reps)
            latency[f"{kind}_{target}"] = lat.__dict__
            summary[f"{kind}_{target}"] = {"pooled_mase": rep.pooled.mase,
                                           "pooled_mae": rep.pooled.mae,
                                           "pooled_mse": rep.pooled.mse}
    write_report(reports, out / "report.json", {"config_digest": config_digest(cfg),
                                                 "dataset_digest": ds_digest})
    # timings vary run to run, so they live outside the deterministic report
    with open(out / "latency.json", "w") as fh:
        json.dump(latency, fh, indent=1, sort_keys=True)
    return summary


def cmd_tune(args):
    cfg = _config(args)
    out, _, ds_path, _ = _paths(args)
    p, _ = _prepared(cfg, ds_path)
    t = cfg["tune"]
    tr, va, _ = p.sets(t["target"], stride=cfg["features"]["stride"])
    seed = cfg["seed"]
    only = set(args.only or ["architecture", "learning_rate", "trees", "shape"])
    ffnn_base = {k: v for k, v in cfg["models"]["ffnn"].items() if k != "hidden"}
    ffnn_base["epochs"] = t["probe_epochs"]
    summary = {}
    if "architecture" in only:
        r = grid_search(tr, va, GridSpec(t["architecture"]), "ffnn", seed, ffnn_base)
        r.write_heatmap(out / "tune_heatmap.csv")
        summary["architecture"] = r.best_cell
    if "learning_rate" in only:
        r = grid_search(tr, va, GridSpec({"learning_rate": t["learning_rates"]}), "ffnn", seed,
                        dict(ffnn_base, hidden=cfg["models"]["ffnn"]["hidden"]))
        r.write_curves(out / "tune_curves.csv")
        summary["learning_rate"] = r.best_cell
    forest_base = {k: v for k, v in cfg["models"]["forest"].items() if k != "n_trees"}
    if "trees" in only:
        r = select_forest_size(tr, va, t["tree_counts"], t["plateau_tolerance"], seed,
                               forest_base)
        r.write_heatmap(out / "tune_trees.csv")
        summary["n_trees"] = r.recommended
    if "shape" in only:
        base = {k: v for k, v in forest_base.items() if k not in ("max_depth", "max_features")}
        base["n_trees"] = t["shape_trees"]
        r = grid_search(tr, va, GridSpec(t["forest_shape"]), "forest", seed, base)
        r.write_heatmap(out / "tune_forest_heatmap.csv")
        summary["forest_shape"] = r.best_cell
    with open(out / "tune_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def cmd_ablate(args):
    cfg = _config(args)
    out, _, ds_path, _ = _paths(args)
    p, _ = _prepared(cfg, ds_path)
    a = cfg["ablate"]
    kw = _model_kw(cfg, a["kind"])
    stride = cfg["features"]["stride"]
    tr, va, te = p.sets(a["target"], stride=stride)
    elim = feature_elimination_study(tr, va, te, p.schema, a["kind"], kw)
    elim.write_csv(out / "ablation_features.csv")
    sets = {t: p.sets(t, stride=stride) for t in cfg["targets"]}
    naive = {t: p.naive(s[2]) for t, s in sets.items()}
    halv = data_halving_study(sets, naive, a["levels"], a["kind"], kw)
    halv.write_csv(out / "ablation_data.csv")
    return {"largest_elimination_delta": elim.largest(),
            "deepest_level": {t: halv.deepest_level(t) for t in sets}}


def _replay(args, cfg, sink_path, speed):
    out, _, ds_path, art_dir = _paths(args)
    p, ds_digest = _prepared(cfg, ds_path)
    rt = cfg["realtime"]
    arts = _load_artifacts(cfg, art_dir, ds_digest, [rt["kind"]])
    ordered = [arts[(rt["kind"], t)] for t in cfg["targets"]]
    start, stop = replay_window(p.dataset, rt["days"])
    if start < p.test.grid.start:
        raise ConfigInvalid([f"realtime.days={rt['days']} reaches before the test period"])
    jsonl = JsonlSink(sink_path)
    # without a wall clock there is no deadline to protect, so keep every bundle
    sinks = [BoundedSink(jsonl, rt["queue_size"], block=math.isinf(speed))]
    server = None
    latest = None
    if args.http_port is not None or rt["http_port"] is not None:
        latest = LatestBundles()
        sinks.append(latest)
        port = args.http_port if args.http_port is not None else rt["http_port"]
        server = start_http(latest, port=port)
        log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        stats = run_replay(p.dataset, ordered, start, stop, sinks, rt["cadence"], rt["jitter"],
                           rt["jitter_seed"], speed, rt["warmup"], cfg["signal"]["cutoff"],
                           cfg["signal"]["order"])
    finally:
        sinks[0].close()
        if server is not None:
            server.shutdown()
    return p, ordered, start, stop, stats, sinks[0].dropped


def _speed(args, cfg):
    s = args.speed if args.speed is not None else cfg["realtime"]["speed"]
    return math.inf if s in ("inf", math.inf) else float(s)


def _rt_overrides(args):
    rt = {}
    if args.cadence is not None:
        rt["cadence"] = args.cadence
    if args.jitter_seed is not None:
        rt["jitter_seed"] = args.jitter_seed
    if args.days is not None:
        rt["days"] = args.days
    return {"realtime": rt} if rt else None


def cmd_serve(args):
    cfg = _config(args, _rt_overrides(args))
    out = Path(args.out_dir)
    sink = Path(args.sink) if args.sink else out / "bundles.jsonl"
    _, _, start, stop, stats, dropped = _replay(args, cfg, sink, _speed(args, cfg))
    return {"bundles": stats.bundles, "ticks": stats.ticks, "tick_errors": len(stats.errors),
            "dropped": dropped, "window": [to_iso(start), to_iso(stop)], "sink": str(sink)}


def cmd_replay_eval(args):
    cfg = _config(args, _rt_overrides(args))
    out = Path(args.out_dir)
    sink = out / "bundles.jsonl"
    p, arts, start, stop, stats, _ = _replay(args, cfg, sink, math.inf)
    with open(sink) as fh:
        bundles = [PredictionBundle.from_json(line) for line in fh]
    reports, summary = [], {}
    for art in arts:
        rt_rep = realtime_evaluate(bundles, p.dataset, art.target)
        ref = offline_test_report(p, art, cfg["features"]["stride"])
        win = offline_window_report(p, art, start, stop)
        reports += [rt_rep, ref, win]
        summary[art.target] = {"realtime_mase": rt_rep.pooled.mase,
                               "offline_test_mase": ref.pooled.mase,
                               "offline_window_mase": win.pooled.mase}
    write_report(reports, out / "realtime_report.json",
                 {"config_digest": config_digest(cfg), "window": [to_iso(start), to_iso(stop)],
                  "tick_errors": len(stats.errors)})
    return summary


# -- argument parsing -------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out-dir", default="run", help="working directory (default: run)")
    common.add_argument("--verbose", "-v", action="count", default=0)

    ap = argparse.ArgumentParser(prog="parkcast", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic city")
    s.add_argument("--days", type=int)
    s.set_defaults(func=cmd_synth)
    s = sub.add_parser("prepare", parents=[common], help="ingest, clean and grid the data")
    s.add_argument("--data-dir", help="directory with the source CSV files")
    s.set_defaults(func=cmd_prepare)
    s = sub.add_parser("train", parents=[common], help="fit one model per kind and target")
    s.set_defaults(func=cmd_train)
    s = sub.add_parser("tune", parents=[common], help="grid searches")
    s.add_argument("--only", nargs="+",
                   choices=["architecture", "learning_rate", "trees", "shape"])
    s.set_defaults(func=cmd_tune)
    s = sub.add_parser("evaluate", parents=[common], help="offline test report")
    s.add_argument("--latency-reps", type=int, default=100)
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("ablate", parents=[common], help="feature and data ablations")
    s.set_defaults(func=cmd_ablate)
    for name, func in (("serve", cmd_serve), ("replay-eval", cmd_replay_eval)):
        s = sub.add_parser(name, parents=[common], help="replayed real-time predictions")
        s.add_argument("--cadence", type=int, help="occupancy feed cadence in minutes")
        s.add_argument("--jitter-seed", type=int)
        s.add_argument("--days", type=float, help="length of the replay window")
        s.add_argument("--speed", help="replay minutes per wall minute, or inf")
        s.add_argument("--http-port", type=int, help="also serve GET /predictions and /health")
        if name == "serve":
            s.add_argument("--sink", help="JSON lines output path")
        s.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        result = args.func(args)
    except ParkcastError as exc:
        err = {"status": "error", "command": args.command, "error": type(exc).__name__,
               "message": str(exc)}
        if isinstance(exc, ConfigInvalid):
            err["problems"] = exc.problems
        print(json.dumps(err), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"status": "error", "command": args.command, "error": "IoError",
                          "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps({"status": "ok", "command": args.command, "result": result},
                     default=_jsonable))
    return 0


def _jsonable(v):
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
