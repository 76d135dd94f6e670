"""Exit codes and output contracts of the command line entry point."""

import json

import numpy as np
import pytest

from eagleeye import null_threshold, parse_report, read_dataset, write_dataset
from eagleeye.cli import default_k_max, main

SCENARIO = """\
dimension 2
seed 5
background uniform 0.0 1.0

[reference]
count 300

[test]
count 260
anomaly gaussian center=0.5,0.5 scale=0.02 count=40
"""


@pytest.fixture()
def scenario_file(tmp_path):
    p = tmp_path / "pair.scenario"
    p.write_text(SCENARIO)
    return p


@pytest.fixture()
def data_pair(tmp_path, scenario_file):
    ref = tmp_path / "ref.txt"
    test = tmp_path / "test.txt"
    code = main(["simulate", "--scenario", str(scenario_file),
                 "--out-reference", str(ref), "--out-test", str(test)])
    assert code == 0
    return ref, test


def test_default_k_max_clamps():
    assert default_k_max(500) == 10
    assert default_k_max(20_000) == 200
    assert default_k_max(1_000_000) == 1000


def test_simulate_is_reproducible(tmp_path, scenario_file, data_pair):
    ref, test = data_pair
    ref2 = tmp_path / "ref2.txt"
    test2 = tmp_path / "test2.txt"
    truth = tmp_path / "truth.txt"
    code = main(["simulate", "--scenario", str(scenario_file),
                 "--out-reference", str(ref2), "--out-test", str(test2),
                 "--truth-out", str(truth)])
    assert code == 0
    assert ref.read_bytes() == ref2.read_bytes()
    assert test.read_bytes() == test2.read_bytes()
    labels = truth.read_text().splitlines()
    assert labels[0] == "sample row label"
    assert sum(1 for ln in labels if ln.endswith(" 0")) == 40
    assert read_dataset(test).n == 300


def test_simulate_seed_override_changes_data(tmp_path, scenario_file, data_pair):
    ref, _ = data_pair
    ref3 = tmp_path / "ref3.txt"
    test3 = tmp_path / "test3.txt"
    code = main(["simulate", "--scenario", str(scenario_file), "--seed", "77",
                 "--out-reference", str(ref3), "--out-test", str(test3)])
    assert code == 0
    assert ref.read_bytes() != ref3.read_bytes()


def test_detect_writes_report_and_scores(tmp_path, data_pair):
    ref, test = data_pair
    out = tmp_path / "report.json"
    scores = tmp_path / "scores.csv"
    code = main(["detect", "--reference", str(ref), "--test", str(test),
                 "--k-max", "30", "--p-ext", "1e-3",
                 "--out", str(out), "--scores-out", str(scores)])
    assert code == 0
    doc = parse_report(out.read_text())
    payload = doc.payload
    assert payload["config"]["k_max"] == 30
    assert payload["inputs"]["n_reference"] == 300
    assert payload["directions"]["test"]["totals"]["anom_count"] >= 20
    n_rows = len(scores.read_text().splitlines()) - 1
    assert n_rows == 300 + 300


def test_detect_report_to_stdout(capsys, data_pair):
    ref, test = data_pair
    code = main(["detect", "--reference", str(ref), "--test", str(test),
                 "--k-max", "30", "--p-ext", "1e-3", "--no-injection"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["config"]["run_injection"] is False


def test_detect_missing_file_is_io_error(tmp_path, data_pair):
    _, test = data_pair
    code = main(["detect", "--reference", str(tmp_path / "absent.txt"),
                 "--test", str(test)])
    assert code == 2


def test_detect_dimension_mismatch(tmp_path, data_pair):
    ref, test = data_pair
    bad = tmp_path / "bad.txt"
    write_dataset(np.zeros((50, 3)), bad)
    code = main(["detect", "--reference", str(ref), "--test", str(bad)])
    assert code == 2


def test_detect_k_max_too_large(data_pair):
    ref, test = data_pair
    code = main(["detect", "--reference", str(ref), "--test", str(test),
                 "--k-max", "600"])
    assert code == 2


def test_missing_required_argument_is_usage_error(capsys):
    assert main(["detect", "--reference", "only.txt"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_threshold_prints_model_values(capsys):
    code = main(["threshold", "--k-max", "60", "--p-ext", "1e-3"])
    assert code == 0
    out = dict(line.split() for line in capsys.readouterr().out.splitlines())
    model = null_threshold(60, 0.5, 1e-3)
    assert float(out["threshold"]) == model.threshold
    assert float(out["exceedance_probability"]) == model.exceedance_probability


def test_threshold_mc_reports_standard_error(capsys):
    code = main(["threshold", "--k-max", "40", "--p-ext", "1e-2",
                 "--method", "mc", "--n-sequences", "100000", "--seed", "4"])
    assert code == 0
    out = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert float(out["standard_error"]) >= 0.0


def test_threshold_unreachable_extremeness_exit_code(capsys):
    code = main(["threshold", "--k-max", "5", "--p-ext", "1e-6"])
    assert code == 3
    assert "0.03125" in capsys.readouterr().err


def test_simulate_rejects_bad_scenario(tmp_path):
    bad = tmp_path / "bad.scenario"
    bad.write_text("dimension 2\n[test]\ncount nope\n")
    code = main(["simulate", "--scenario", str(bad),
                 "--out-reference", str(tmp_path / "r.txt"),
                 "--out-test", str(tmp_path / "t.txt")])
    assert code == 2
