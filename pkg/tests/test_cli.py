import csv
import json

import numpy as np
import pytest

from ddcsim.cli import main

MACHINE_CFG = {"kind": "machine", "n_levels": 5, "beta": 0.9,
               "theta": {"theta_mc": 1.0, "theta_rc": 4.0}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Full pipeline artifacts produced through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "machine.json"
    cfg.write_text(json.dumps(MACHINE_CFG))
    assert main(["generate-data", "--model-config", str(cfg),
                 "--agents", "2000", "--periods", "100", "--seed", "7",
                 "--out", str(root / "panel.csv")]) == 0
    assert main(["estimate-first-stage", "--model-config", str(cfg),
                 "--panel", str(root / "panel.csv"),
                 "--out-dir", str(root / "fs")]) == 0
    assert main(["simulate-paths", "--first-stage", str(root / "fs"),
                 "--start-rule", "all-pairs", "--t-end", "10",
                 "--n-path", "500", "--seed", "3",
                 "--out", str(root / "paths.bin"),
                 "--csv", str(root / "paths.csv")]) == 0
    return root, cfg


def test_solve_dp_writes_table(tmp_path):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps(MACHINE_CFG))
    out = tmp_path / "dp.csv"
    assert main(["solve-dp", "--model-config", str(cfg),
                 "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    ccps = np.array([float(r["ccp"]) for r in rows]).reshape(5, 2)
    np.testing.assert_allclose(ccps.sum(axis=1), 1.0, atol=1e-12)


def test_pipeline_files_exist(workdir):
    root, _ = workdir
    assert (root / "panel.csv").exists()
    assert (root / "fs" / "ccp.csv").exists()
    assert (root / "fs" / "transitions.csv").exists()
    assert (root / "paths.bin").stat().st_size == 64 + 500 * 10 * 8
    assert (root / "paths.csv").exists()


def test_compute_values_csv(workdir, tmp_path):
    root, cfg = workdir
    out = tmp_path / "vals.csv"
    assert main(["compute-values", "--model-config", str(cfg),
                 "--first-stage", str(root / "fs"),
                 "--paths", str(root / "paths.bin"),
                 "--engine", "rltd", "--alpha", "0.5",
                 "--theta", "1.0,4.0", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert sum(int(r["updates"]) for r in rows) == 500 * 9


def test_estimate_emits_json_report(workdir, tmp_path, capsys):
    root, cfg = workdir
    out = tmp_path / "report.json"
    assert main(["estimate", "--model-config", str(cfg),
                 "--first-stage", str(root / "fs"),
                 "--paths", str(root / "paths.bin"),
                 "--engine", "ccs", "--theta0", "1.5,6.0",
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert set(report["theta_hat"]) == {"theta_mc", "theta_rc"}
    assert report["n_fevals"] >= 1
    assert report["engine"] == "ccs"


def test_bench_list_names_presets(capsys):
    assert main(["bench", "list"]) == 0
    out = capsys.readouterr().out
    assert "machine-sweep" in out and "food-case1a" in out


def test_errors_return_nonzero(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"kind": "widget"}))
    assert main(["solve-dp", "--model-config", str(cfg),
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert "error:" in capsys.readouterr().err
