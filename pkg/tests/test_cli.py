import csv
import json

import pytest

from parkcast.cli import main

SMALL = {
    "models": {"ffnn": {"epochs": 30, "learning_rate": 1e-3},
               "forest": {"n_trees": 5, "max_depth": 8}},
    "tune": {"architecture": {"neurons": [20, 40], "layers": [1, 2]}, "probe_epochs": 5,
             "learning_rates": [1e-3, 1e-4], "tree_counts": [1, 3, 5],
             "forest_shape": {"max_depth": [4, 8], "max_features": ["all", "sqrt"]},
             "shape_trees": 3},
    "ablate": {"levels": 2},
    "realtime": {"days": 1},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else json.loads(err))


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, config_file):
    """A 90-day synthetic city pushed through every command once."""
    out = tmp_path_factory.mktemp("run")
    for cmd in (["synth", "--days", 90], ["prepare"], ["train"], ["evaluate", "--latency-reps", 5],
                ["tune"], ["ablate"], ["replay-eval"]):
        code = main([str(a) for a in cmd] + ["--config", str(config_file), "--out-dir", str(out)])
        assert code == 0, cmd
    return out


def test_synth_is_reproducible(tmp_path, capsys):
    for d in ("a", "b"):
        code, res = run(capsys, "synth", "--seed", 7, "--days", 3, "--out-dir", tmp_path / d)
        assert code == 0 and res["status"] == "ok"
    for name in ("transactions.csv", "traffic.csv", "weather.csv", "holidays.csv",
                 "synth_config.json"):
        assert (tmp_path / "a/data" / name).read_bytes() == (tmp_path / "b/data" / name).read_bytes()


def test_train_before_prepare_fails(tmp_path, capsys):
    code, err = run(capsys, "train", "--out-dir", tmp_path)
    assert code == 2 and err["error"] == "ConfigInvalid"
    assert "dataset" in err["problems"][0]


def test_bad_config_lists_problems(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"split": {"train": 2.0}, "nonsense": 1}))
    code, err = run(capsys, "synth", "--config", p, "--out-dir", tmp_path)
    assert code == 2 and len(err["problems"]) == 2


def test_prepare_records_rejects(tmp_path, capsys):
    assert run(capsys, "synth", "--days", 2, "--out-dir", tmp_path)[0] == 0
    tx = tmp_path / "data/transactions.csv"
    with open(tx, "a") as fh:
        fh.write("centraal,garbage,2018-01-01T01:00Z\n")
    code, res = run(capsys, "prepare", "--out-dir", tmp_path)
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "rejects_transactions.csv")))
    assert len(rows) == 2


def test_pipeline_outputs(pipeline_dir):
    names = ["dataset.pcd", "train_summary.json", "report.json", "latency.json",
             "tune_heatmap.csv", "tune_curves.csv", "tune_trees.csv", "tune_forest_heatmap.csv",
             "tune_summary.json", "ablation_features.csv", "ablation_data.csv",
             "bundles.jsonl", "realtime_report.json"]
    for name in names:
        assert (pipeline_dir / name).stat().st_size > 0, name
    for kind in ("ffnn", "forest"):
        for target in ("occupancy", "influx", "outflux"):
            assert (pipeline_dir / f"artifacts/{kind}_{target}.pcm").exists()
            assert (pipeline_dir / f"errors_{kind}_{target}.csv").exists()


def test_pipeline_beats_naive(pipeline_dir):
    doc = json.loads((pipeline_dir / "report.json").read_text())
    mase = {(r["meta"]["model_kind"], r["target"]): r["pooled"]["mase"] for r in doc["reports"]}
    assert len(mase) == 6
    assert all(m < 1.0 for m in mase.values()), mase
    digests = {r["meta"]["config_digest"] for r in doc["reports"]}
    assert digests == {doc["meta"]["config_digest"]}


def test_mismatched_dataset_is_refused(pipeline_dir, tmp_path, capsys, config_file):
    # artifacts trained on one dataset must not be scored on another
    import shutil
    other = tmp_path / "other"
    shutil.copytree(pipeline_dir / "artifacts", other / "artifacts")
    assert run(capsys, "synth", "--days", 90, "--seed", 8, "--out-dir", other)[0] == 0
    assert run(capsys, "prepare", "--out-dir", other)[0] == 0
    code, err = run(capsys, "evaluate", "--config", config_file, "--out-dir", other)
    assert code == 2 and err["error"] == "SchemaMismatch"


def test_realtime_report(pipeline_dir):
    doc = json.loads((pipeline_dir / "realtime_report.json").read_text())
    modes = [r["meta"]["mode"] for r in doc["reports"]]
    assert modes == ["realtime", "offline_test", "offline_window"] * 3
    lines = (pipeline_dir / "bundles.jsonl").read_text().splitlines()
    assert len(lines) == 3 * 288
