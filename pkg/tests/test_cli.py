import json
import subprocess
import sys

import numpy as np
import pytest

from lmpred import ProcessSpec, predict_same_realisation, predict_theoretical, theoretical_coefficients
from lmpred.cli import EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from lmpred.simulate import read_binary, read_csv, sample


def body_lines(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def test_coeffs_example(capsys):
    assert run(["coeffs", "--d", "0.3", "--k", "1"]) == EXIT_OK
    lines = body_lines(capsys.readouterr().out)
    assert lines == ["j,a_jk", "1,-0.4285714285714286"]


def test_simulate_csv(tmp_path):
    out = tmp_path / "path.csv"
    assert run(["simulate", "--d", "0.3", "--n", "1024", "--seed", "7", "--out", str(out)]) == EXIT_OK
    path = read_csv(out)
    assert path.n == 1024
    assert np.array_equal(path.values, sample(ProcessSpec(0.3), 1024, 7).values)


def test_simulate_binary_and_json(tmp_path, capsys):
    out = tmp_path / "x.bin"
    assert run(["simulate", "--d", "0.2", "--n", "16", "--seed", "1", "--format", "binary",
                "--out", str(out)]) == EXIT_OK
    assert np.array_equal(read_binary(out), sample(ProcessSpec(0.2), 16, 1).values)
    assert run(["simulate", "--d", "0.2", "--n", "16", "--seed", "1", "--format", "json"]) == EXIT_OK
    body = json.loads(capsys.readouterr().out)
    assert body["values"] == sample(ProcessSpec(0.2), 16, 1).values.tolist()
    assert body["provenance"]["seed"] == 1


def test_binary_needs_out():
    assert run(["simulate", "--d", "0.2", "--n", "16", "--format", "binary"]) == EXIT_USAGE


def test_validate_example(capsys):
    code = run(["validate", "--d", "0.3", "--n", "10000", "--Kn", "10", "--theorem", "T2"])
    assert code == EXIT_FAIL
    out = capsys.readouterr().out
    row = body_lines(out)[1].split(",")
    assert row[:2] == ["K4_vs_n_pow", "FAIL"]
    assert float(row[2]) < 0
    assert "# overall=FAIL" in out


def test_validate_assumptions_pass(capsys):
    assert run(["validate", "--d", "0.3"]) == EXIT_OK


def test_usage_errors(capsys):
    assert run(["bogus"]) == EXIT_USAGE
    assert run(["coeffs", "--d", "0.3", "--k", "1", "--nope"]) == EXIT_USAGE
    assert run(["coeffs", "--d", "0.3"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_numeric_error(capsys):
    assert run(["coeffs", "--d", "0.7", "--k", "1"]) == EXIT_NUMERIC
    assert "lmpred: error" in capsys.readouterr().err


def test_predict_round_trip(tmp_path, capsys):
    out = tmp_path / "p.csv"
    run(["simulate", "--d", "0.3", "--n", "300", "--seed", "5", "--out", str(out)])
    assert run(["predict", "--input", str(out), "--k", "3", "--Kn", "5"]) == EXIT_OK
    rows = dict(line.split(",") for line in body_lines(capsys.readouterr().out)[1:])
    path = sample(ProcessSpec(0.3), 300, 5)
    # CSV floats are written with repr, so values must match bit for bit
    assert float(rows["same_realisation"]) == predict_same_realisation(path, 3, 5)
    assert float(rows["theoretical"]) == predict_theoretical(
        path, theoretical_coefficients(ProcessSpec(0.3), 3))


def test_predict_binary_needs_model(tmp_path):
    out = tmp_path / "x.bin"
    run(["simulate", "--d", "0.3", "--n", "50", "--format", "binary", "--out", str(out)])
    assert run(["predict", "--input", str(out), "--k", "2"]) == EXIT_USAGE
    assert run(["predict", "--input", str(out), "--k", "2", "--d", "0.3"]) == EXIT_OK


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"d": 0.3, "k": 2, "format": "json"}))
    assert run(["coeffs", "--config", str(conf)]) == EXIT_OK
    body = json.loads(capsys.readouterr().out)
    assert len(body["rows"]) == 2
    assert run(["coeffs", "--config", str(conf), "--k", "1"]) == EXIT_OK
    body = json.loads(capsys.readouterr().out)
    assert body["rows"] == [{"j": 1, "a_jk": -0.4285714285714286}]


def test_config_rejects_unknown_keys(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"dd": 0.3}))
    assert run(["coeffs", "--config", str(conf), "--k", "1"]) == EXIT_USAGE


def test_acvf(capsys):
    assert run(["acvf", "--d", "0", "--max-lag", "2"]) == EXIT_OK
    assert body_lines(capsys.readouterr().out)[1:] == ["0,1.0", "1,0.0", "2,0.0"]


def test_experiment_outputs_and_threads(tmp_path, capsys):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["clt", "--d", "0.4", "--n", "512", "--replicates", "200", "--seed", "3"]
    code1 = run(args + ["--out", str(out1), "--threads", "1"])
    code2 = run(args + ["--out", str(out2), "--threads", "3"])
    assert code1 == code2 and code1 in (EXIT_OK, EXIT_FAIL)
    strip = lambda p: body_lines(p.read_text())
    assert strip(out1) == strip(out2)
    assert out1.read_text().startswith("# config=")
    assert (tmp_path / "a.qq.csv").read_text().startswith("probability,")
    assert "ks_pvalue" in capsys.readouterr().err


def test_white_noise_clt_is_contract_error(capsys):
    assert run(["clt", "--d", "0", "--n", "256", "--replicates", "100"]) == EXIT_NUMERIC


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "lmpred.cli", "coeffs", "--d", "0.3", "--k", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "1,-0.4285714285714286" in res.stdout
