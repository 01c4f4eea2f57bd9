import json
import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from vcterm.cli import main

NOISELESS_CONFIG = """\
n = 60
seed = 4
zero_errors = true
beta_mode = constant
constant_beta = 2,-1,0.5
"""

STUDY_CONFIG = """\
n = 40
seed = 6
replications = 2
h_policy = fixed
h_fixed = 2.5
grid = points
points = 1:8;2:7
"""


def _parse_table(text: str):
    meta = {}
    lines = []
    for ln in text.splitlines():
        if ln.startswith("#"):
            key, value = ln[1:].strip().split("=", 1)
            meta[key.strip()] = value.strip()
        elif ln:
            lines.append(ln)
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    return meta, header, rows


@pytest.fixture
def noiseless_csv(tmp_path):
    cfg = tmp_path / "sim.conf"
    cfg.write_text(NOISELESS_CONFIG, encoding="utf-8")
    out = tmp_path / "data.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    return str(out)


def test_kernel_moments_csv(capsys):
    assert main(["kernel-moments"]) == 0
    meta, header, rows = _parse_table(capsys.readouterr().out)
    assert header == ["moment", "value"]
    values = {r["moment"]: float(r["value"]) for r in rows}
    assert values["mass"] == pytest.approx(1.0, abs=1e-6)
    assert values["mu0"] == pytest.approx(0.08795404749815268, abs=1e-8)
    assert values["mu2_xx"] == pytest.approx(0.8423298803392634, abs=1e-8)
    assert abs(values["mu1_x"]) < 1e-8
    assert abs(values["mu2_xy"]) < 1e-8
    assert float(meta["normalizer"]) == pytest.approx(1.0 / 0.95)


def test_kernel_moments_json(capsys):
    assert main(["kernel-moments", "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    rows = {r["moment"]: r["value"] for r in payload["rows"]}
    assert rows["mass"] == pytest.approx(1.0, abs=1e-6)
    assert payload["meta"]["quadrature_n"] == 256


def test_simulate_reports_and_writes_truth(tmp_path, capsys):
    cfg = tmp_path / "sim.conf"
    cfg.write_text(NOISELESS_CONFIG, encoding="utf-8")
    out = tmp_path / "data.csv"
    truth = tmp_path / "truth.csv"
    rc = main(["simulate", "--config", str(cfg), "--out", str(out),
               "--truth-out", str(truth)])
    assert rc == 0
    err = capsys.readouterr().err
    assert "simulated 60 subjects" in err
    assert truth.exists()
    with open(truth, encoding="utf-8") as fh:
        assert len(fh.readlines()) == 61  # header + one row per subject


def test_simulate_seed_override_changes_data(tmp_path):
    cfg = tmp_path / "sim.conf"
    cfg.write_text(NOISELESS_CONFIG, encoding="utf-8")
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    c = tmp_path / "c.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(c),
                 "--seed", "11"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_fit_recovers_constant_coefficients(noiseless_csv, capsys):
    rc = main(["fit", "--data", noiseless_csv, "--t0", "1", "--s0", "6",
               "--h", "3"])
    assert rc == 0
    captured = capsys.readouterr()
    meta, header, rows = _parse_table(captured.out)
    assert meta["status"] == "ok"
    assert header == ["coef", "estimate", "se", "lower", "upper"]
    est = {int(r["coef"]): float(r["estimate"]) for r in rows}
    assert est[1] == pytest.approx(2.0, abs=1e-6)
    assert est[2] == pytest.approx(-1.0, abs=1e-6)
    assert est[3] == pytest.approx(0.5, abs=1e-6)
    for r in rows:
        assert float(r["lower"]) <= float(r["estimate"]) <= float(r["upper"])
    assert "loaded 60 subjects" in captured.err


def test_fit_json_format(noiseless_csv, capsys):
    rc = main(["fit", "--data", noiseless_csv, "--t0", "1", "--s0", "6",
               "--h", "3", "--format", "json"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["meta"]["status"] == "ok"
    assert len(payload["rows"]) == 3
    assert payload["rows"][0]["coef"] == 1


def test_fit_exit_codes(noiseless_csv, tmp_path, capsys):
    assert main(["fit"]) == 2  # missing required arguments
    capsys.readouterr()

    rc = main(["fit", "--data", str(tmp_path / "nope.csv"), "--t0", "1",
               "--s0", "6", "--h", "3"])
    assert rc == 3
    err_line = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err_line["code"] == 3

    rc = main(["fit", "--data", noiseless_csv, "--t0", "500", "--s0", "500",
               "--h", "3"])
    assert rc == 4
    err_line = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err_line["code"] == 4
    assert "empty_support" in err_line["error"]

    rc = main(["fit", "--data", noiseless_csv, "--t0", "1", "--s0", "6",
               "--h", "-1"])
    assert rc == 2  # ValueError from bandwidth validation
    capsys.readouterr()


def test_fit_requires_complete_cases(tmp_path, capsys):
    path = tmp_path / "cens.csv"
    path.write_text(
        "subject_id,visit_time,response,followup_end,event_observed,x_2\n"
        "a,1.0,2.0,5.0,0,0.1\n"
        "b,2.0,1.0,6.0,0,0.3\n",
        encoding="utf-8",
    )
    rc = main(["fit", "--data", str(path), "--t0", "1", "--s0", "4",
               "--h", "3"])
    assert rc == 3
    err_line = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert "complete-case" in err_line["error"]


def test_transform_option_runs(noiseless_csv, capsys):
    rc = main(["fit", "--data", noiseless_csv, "--t0", "1", "--s0", "6",
               "--h", "3", "--transform", "log1000"])
    assert rc == 0
    meta, _, rows = _parse_table(capsys.readouterr().out)
    assert meta["status"] == "ok"
    est = {int(r["coef"]): float(r["estimate"]) for r in rows}
    assert est[1] != pytest.approx(2.0, abs=1e-3)  # transform changed the scale

    assert main(["fit", "--data", noiseless_csv, "--t0", "1", "--s0", "6",
                 "--h", "3", "--transform", "sqrt"]) == 2
    capsys.readouterr()


def test_cv_outputs_selection_metadata(noiseless_csv, capsys):
    rc = main(["cv", "--data", noiseless_csv, "--h-grid", "2,3",
               "--folds", "2"])
    assert rc == 0
    meta, header, rows = _parse_table(capsys.readouterr().out)
    assert header == ["h", "score", "excluded_fraction"]
    assert len(rows) == 2
    assert float(meta["h_selected"]) in (2.0, 3.0)
    assert float(meta["factor"]) == pytest.approx(60 ** -0.05, abs=1e-12)
    assert int(meta["n_used"]) == 60
    assert float(meta["h_undersmoothed"]) == pytest.approx(
        float(meta["h_selected"]) * float(meta["factor"]))
    for r in rows:
        assert float(r["score"]) < 1e-12  # noiseless data predicts exactly


def test_slice_stdout_and_artifacts(noiseless_csv, tmp_path, capsys):
    rc = main(["slice", "--data", noiseless_csv, "--T", "8", "--t-step", "2",
               "--h", "3"])
    assert rc == 0
    meta, header, rows = _parse_table(capsys.readouterr().out)
    assert header == ["T", "t", "s", "coef", "estimate", "se", "lower",
                      "upper", "n_eff", "status"]
    assert len(rows) == 3 * 3  # t in {2, 4, 6}, three coefficients
    assert {r["status"] for r in rows} == {"ok"}

    out_dir = tmp_path / "slices"
    rc = main(["slice", "--data", noiseless_csv, "--T", "8", "--T", "12",
               "--t-step", "2", "--h", "3", "--out-dir", str(out_dir),
               "--svg"])
    assert rc == 0
    capsys.readouterr()
    names = sorted(os.listdir(out_dir))
    assert names == ["slice_T12.csv", "slice_T12.svg", "slice_T8.csv",
                     "slice_T8.svg"]
    root = ET.fromstring((out_dir / "slice_T8.svg").read_text())
    assert root.tag.endswith("svg")
    smeta, _, srows = _parse_table((out_dir / "slice_T8.csv").read_text())
    assert smeta["T"] == "8"
    assert len(srows) == 9


def test_slice_validation_errors(noiseless_csv, capsys):
    assert main(["slice", "--data", noiseless_csv, "--T", "0.5",
                 "--t-step", "2", "--h", "3"]) == 3
    capsys.readouterr()
    assert main(["slice", "--data", noiseless_csv, "--T", "8", "--h", "3",
                 "--svg"]) == 3
    capsys.readouterr()


def test_study_cli_thread_invariant(tmp_path, capsys):
    cfg = tmp_path / "study.conf"
    cfg.write_text(STUDY_CONFIG, encoding="utf-8")
    dir1 = tmp_path / "out1"
    dir2 = tmp_path / "out2"
    assert main(["study", "--config", str(cfg), "--out-dir", str(dir1)]) == 0
    assert main(["study", "--config", str(cfg), "--out-dir", str(dir2),
                 "--threads", "2"]) == 0
    capsys.readouterr()
    names = sorted(os.listdir(dir1))
    assert names == sorted(os.listdir(dir2))
    assert "summary.csv" in names
    assert "records.csv" in names
    assert "metadata.json" in names
    for name in names:
        assert (dir1 / name).read_bytes() == (dir2 / name).read_bytes()


def test_study_cli_unreachable_point_exits_4(tmp_path, capsys):
    cfg = tmp_path / "study.conf"
    cfg.write_text(STUDY_CONFIG.replace("points = 1:8;2:7",
                                        "points = 1:8;45:45"),
                   encoding="utf-8")
    out = tmp_path / "out"
    rc = main(["study", "--config", str(cfg), "--out-dir", str(out)])
    assert rc == 4
    capsys.readouterr()
    assert (out / "summary.csv").exists()  # artifacts written before the error


def test_heatmap_renders_svg(tmp_path, capsys):
    cov = tmp_path / "coverage.csv"
    cov.write_text(
        "# coefficient=1\nt,s,coverage,valid\n"
        "1,5,0.94,100\n2,5,,0\n1,6,0.9,100\n2,6,0.96,100\n",
        encoding="utf-8",
    )
    out = tmp_path / "cov.svg"
    assert main(["heatmap", "--coverage", str(cov), "--out", str(out)]) == 0
    capsys.readouterr()
    root = ET.fromstring(out.read_text())
    assert root.tag.endswith("svg")

    bad = tmp_path / "bad.csv"
    bad.write_text("t,s,coverage\n1,5,0.9\n2,6,0.8\n", encoding="utf-8")
    assert main(["heatmap", "--coverage", str(bad),
                 "--out", str(tmp_path / "bad.svg")]) == 3
    capsys.readouterr()


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    capsys.readouterr()
