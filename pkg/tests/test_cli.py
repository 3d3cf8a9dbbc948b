import csv
import dataclasses
import json
import re

import numpy as np
import pytest
import yaml

from seisdiag import cli, dataset as dsio, simulator
from seisdiag.errors import IntegrationFailure

from .test_costs import FIGURE3, FIGURE3_ROWS

SMALL = {
    "seed": 11,
    "ground_motion": {"duration": 6.0, "dt": 0.01, "ramp": 1.0, "strong": 3.0},
    "hazard": {"scale_factors": [0.4, 1.2, 2.4], "records_per_scale": 5},
    "features": {"etas": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]},
}

TRAINABLE = {
    "seed": 4,
    "building": {"stiffnesses": [1.8e8, 1.6e8, 1.3e8]},
    "ground_motion": {"duration": 8.0, "dt": 0.01, "ramp": 1.0, "strong": 4.0},
    "hazard": {"scale_factors": [0.2, 0.8, 1.6, 2.6], "records_per_scale": 8},
    "features": {"etas": [0.5, 1.5, 2.5]},
    "tuner": {"budget": 6, "init_points": 4, "folds": 3, "acquisition_restarts": 4},
    "training": {"holdout": 0.25},
}


def _config(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _data_rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.reader(lines))


# -------------------------------------------------------------- simulate

@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = _config(root, SMALL)
    assert _run("simulate", "--config", cfg, "--out", root / "a") == 0
    return root, cfg


def test_simulate_row_count_and_layout(simulated):
    root, _ = simulated
    rows = _data_rows(root / "a" / "dataset.csv")
    header, body = rows[0], rows[1:]
    assert len(body) == 15
    features = [h for h in header if h.startswith("f_")]
    assert len(features) == 24  # k=6 etas, each with the cumulative term plus 3 ratios
    assert header[:3] == ["record_id", "scale_factor", "probability"]
    assert header[-4:] == ["story_1", "story_2", "story_3", "building_label"]


def test_simulate_is_byte_identical_on_rerun(simulated, tmp_path):
    root, cfg = simulated
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    for name in ("dataset.csv", "dataset.records.npy"):
        assert (tmp_path / "b" / name).read_bytes() == (root / "a" / name).read_bytes()


def test_simulate_embeds_config_hash_and_seed(simulated):
    root, _ = simulated
    first = (root / "a" / "dataset.csv").read_text().splitlines()[0]
    assert first.startswith("#") and "config_hash=" in first and "seed=11" in first


def test_simulate_seed_override_changes_output(simulated, tmp_path):
    root, cfg = simulated
    assert _run("simulate", "--config", cfg, "--seed", 12, "--out", tmp_path) == 0
    assert (tmp_path / "dataset.csv").read_bytes() != (root / "a" / "dataset.csv").read_bytes()


def test_simulate_prints_class_balance(simulated, tmp_path, capsys):
    _, cfg = simulated
    _run("simulate", "--config", cfg, "--out", tmp_path)
    out = capsys.readouterr().out
    assert "wrote 15 events" in out and "NNN:" in out


def test_simulate_exits_3_when_too_many_events_fail(simulated, tmp_path, monkeypatch, capsys):
    _, cfg = simulated

    def broken(building, gm):
        raise IntegrationFailure("forced")

    monkeypatch.setattr(simulator, "simulate", broken)
    assert _run("simulate", "--config", cfg, "--out", tmp_path) == 3
    assert "simulations failed" in capsys.readouterr().err


def test_missing_feature_column_is_named(simulated, tmp_path, capsys):
    root, cfg = simulated
    rows = _data_rows(root / "a" / "dataset.csv")
    drop = rows[0].index("f_7")
    bad = tmp_path / "bad.csv"
    with bad.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([r[:drop] + r[drop + 1:] for r in rows])
    assert _run("train", "--config", cfg, "--dataset", bad, "--mode", "location", "--out", tmp_path) == 2
    assert "f_7" in capsys.readouterr().err


def test_validation_errors_exit_2(tmp_path, capsys):
    no_seed = _config(tmp_path, {"hazard": {"records_per_scale": 2}})
    assert _run("simulate", "--config", no_seed, "--out", tmp_path) == 2
    unknown = _config(tmp_path, dict(SMALL, colour="red"), "unknown.yaml")
    assert _run("simulate", "--config", unknown, "--out", tmp_path) == 2
    assert _run("report", "--scores", tmp_path / "missing.csv") == 2
    err = capsys.readouterr().err
    assert err.count("error:") == 3


# ---------------------------------------------------------------- train

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg = _config(root, TRAINABLE)
    assert _run("simulate", "--config", cfg, "--out", root) == 0
    assert _run("train", "--config", cfg, "--dataset", root / "dataset.csv", "--mode", "location",
                "--out", root / "run1") == 0
    return root, cfg


def test_location_bundle_holds_three_members(trained):
    root, _ = trained
    doc = json.loads((root / "run1" / "location_bundle.json").read_text())
    assert len(doc["members"]) == 3
    assert set(doc["provenance"]) == {"config_hash", "seed"} and doc["provenance"]["seed"] == 4
    for name in ("location_history.csv", "location_scores.csv", "location_report.txt"):
        assert "config_hash=" in (root / "run1" / name).read_text()


def test_train_is_byte_identical_on_rerun(trained):
    root, cfg = trained
    assert _run("train", "--config", cfg, "--dataset", root / "dataset.csv", "--mode", "location",
                "--out", root / "run2") == 0
    for name in ("location_bundle.json", "location_history.csv", "location_scores.csv", "location_report.txt"):
        assert (root / "run2" / name).read_bytes() == (root / "run1" / name).read_bytes()


def test_history_has_one_row_per_trial(trained):
    root, _ = trained
    rows = _data_rows(root / "run1" / "location_history.csv")
    assert rows[0][0] == "trial" and rows[0][-2:] == ["objective", "incumbent"]
    assert len(rows) - 1 == TRAINABLE["tuner"]["budget"]


def test_predict_matches_evaluate_and_is_deterministic(trained, tmp_path, capsys):
    root, _ = trained
    bundle, data = root / "run1" / "location_bundle.json", root / "dataset.csv"
    assert _run("predict", "--bundle", bundle, "--dataset", data, "--out-file", tmp_path / "p1.csv") == 0
    assert _run("predict", "--bundle", bundle, "--dataset", data, "--out-file", tmp_path / "p2.csv") == 0
    assert (tmp_path / "p1.csv").read_bytes() == (tmp_path / "p2.csv").read_bytes()
    rows = _data_rows(tmp_path / "p1.csv")
    assert rows[0] == ["record_id", "label"] and len(rows) - 1 == len(dsio.read_dataset(data))
    assert all(len(label) == 3 and set(label) <= {"N", "D"} for _, label in rows[1:])

    assert _run("evaluate", "--bundle", bundle, "--dataset", data, "--out", tmp_path) == 0
    text = (tmp_path / "location_eval_report.txt").read_text()
    assert "config_hash=" in text and "seed=4" in text and "GA = " in text


def test_predict_empty_dataset_gives_empty_output(trained, tmp_path, capsys):
    root, _ = trained
    lines = (root / "dataset.csv").read_text().splitlines()
    header_end = next(i for i, ln in enumerate(lines) if not ln.startswith("#"))
    empty = tmp_path / "empty.csv"
    empty.write_text("\n".join(lines[: header_end + 1]) + "\n")
    capsys.readouterr()
    assert _run("predict", "--bundle", root / "run1" / "location_bundle.json", "--dataset", empty) == 0
    assert capsys.readouterr().out == ""


def test_predict_k_mismatch_names_both_values(trained, tmp_path, capsys):
    root, _ = trained
    bundle = root / "run1" / "location_bundle.json"
    k_model = len(json.loads(bundle.read_text())["etas"])
    other = tmp_path / "other.yaml"
    doc = dict(SMALL, features={"etas": [0.7, 1.1]}, hazard={"scale_factors": [0.4], "records_per_scale": 2})
    other.write_text(yaml.safe_dump(doc))
    assert _run("simulate", "--config", other, "--out", tmp_path) == 0
    (tmp_path / "dataset.records.npy").unlink()  # features only, no raw records to recompute from
    capsys.readouterr()
    assert _run("predict", "--bundle", bundle, "--dataset", tmp_path / "dataset.csv") == 2
    err = capsys.readouterr().err
    assert f"k={k_model}" in err and "k=2" in err


def test_predict_single_row_checks_length(trained, capsys):
    root, _ = trained
    bundle = root / "run1" / "location_bundle.json"
    assert _run("predict", "--bundle", bundle, "--row", "1,2,3") == 2
    assert "bundle expects" in capsys.readouterr().err


def test_degenerate_dataset_exits_2(trained, tmp_path, capsys):
    root, cfg = trained
    data = dsio.read_dataset(root / "dataset.csv")
    keep = [i for i, p in enumerate(data.patterns) if p == "NNN"]
    only_nnn = data.subset(keep)
    only_nnn = dataclasses.replace(only_nnn, probabilities=only_nnn.probabilities / only_nnn.probabilities.sum())
    dsio.write_dataset(only_nnn, tmp_path / "nnn.csv")
    assert _run("train", "--config", cfg, "--dataset", tmp_path / "nnn.csv", "--mode", "location",
                "--out", tmp_path) == 2
    assert "distinct damage patterns" in capsys.readouterr().err


def test_existence_mode_on_separable_data(separable_dataset, tmp_path, capsys):
    doc = {
        "seed": 3,
        "building": {"masses": [2e5, 2e5], "stiffnesses": [1.8e8, 1.6e8], "yield_drifts": [0.004] * 2,
                     "heights": [3.2] * 2},
        "features": {"etas": list(separable_dataset.etas.values)},
        "tuner": {"budget": 10, "init_points": 5, "folds": 4, "acquisition_restarts": 6},
        "training": {"holdout": 0.25},
    }
    cfg = _config(tmp_path, doc)
    dsio.write_dataset(separable_dataset, tmp_path / "sep.csv")
    assert _run("train", "--config", cfg, "--dataset", tmp_path / "sep.csv", "--mode", "existence",
                "--out", tmp_path) == 0
    rows = _data_rows(tmp_path / "existence_scores.csv")
    s = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.trace(s) / s.sum() >= 0.95

    assert _run("predict", "--bundle", tmp_path / "existence_bundle.json", "--dataset", tmp_path / "sep.csv",
                "--out-file", tmp_path / "labels.csv") == 0
    labels = [r[1] for r in _data_rows(tmp_path / "labels.csv")[1:]]
    assert labels == list(separable_dataset.building_labels)


# --------------------------------------------------------------- report

def _figure3_csv(path, provenance=None):
    classes = ["NNN", "DNN", "DDN", "DDD"]
    lines = [f"# {provenance}"] if provenance else []
    lines.append("truth," + ",".join(classes))
    lines += [c + "," + ",".join(repr(float(v)) for v in row) for c, row in zip(classes, FIGURE3)]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_report_on_figure3_matrix(tmp_path, capsys):
    path = _figure3_csv(tmp_path / "fig3.csv", "config_hash=abc seed=9")
    assert _run("report", "--scores", path, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "GA = 83.1%" in out
    rows = [ln for ln in out.splitlines() if ln.split()[0] in ("NNN", "DNN", "DDN", "DDD")]
    rendered = np.array([[float(v) for v in re.findall(r"(\d+\.\d)%", ln)] for ln in rows])
    np.testing.assert_allclose(rendered, FIGURE3_ROWS, atol=0.1)
    assert "config_hash=abc seed=9" in out and "scores_hash=" in out
    assert (tmp_path / "report.txt").read_text() == out


def test_report_identity_and_zero_rows(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("truth,N,D\nN,3.0,0.0\nD,0.0,0.0\n")
    assert _run("report", "--scores", path) == 0
    out = capsys.readouterr().out
    assert "nan" not in out.lower() and "100.0" in out and "0.0" in out


def test_report_rejects_non_square(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("truth,N,D\nN,1.0,2.0\n")
    assert _run("report", "--scores", path) == 2
    assert "error:" in capsys.readouterr().err
