import csv
import io
import json

import pytest

from svtc import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_price_with_preset(capsys):
    code, out, _ = run(capsys, "price", "--set", "fig3", "--nu", "0.5", "--rho", "-0.2", "--n-S", "5")
    assert code == 0
    table = rows(out)
    assert tuple(table[0]) == cli.PRICE_COLUMNS
    assert [r[0] for r in table[1:]] == ["50", "75", "100", "125", "150"]
    assert float(table[3][1]) == pytest.approx(17.2978444069, rel=1e-10)


def test_price_epsilon_zero_is_black_scholes(capsys):
    code, out, _ = run(capsys, "price", "--set", "fig3", "--nu", "0.5", "--rho", "-0.2", "--epsilon", "0", "--n-S", "3")
    assert code == 0
    for r in rows(out)[1:]:
        assert r[1] == r[5]


def test_band(capsys):
    code, out, _ = run(capsys, "band", "--set", "fig1", "--nu", "0.5", "--n-S", "4")
    assert code == 0
    table = rows(out)
    assert tuple(table[0]) == cli.BAND_COLUMNS
    assert len(table) == 5
    for r in table[1:]:
        v = [float(x) for x in r]
        assert v[2] <= v[1] <= v[3] and v[5] <= v[4] <= v[6]


def test_averages(capsys):
    code, out, _ = run(capsys, "averages", "--m", "0", "--nu", "0.5")
    assert code == 0
    table = {r[0]: r for r in rows(out)[1:]}
    assert float(table["a_fphi"][1]) == pytest.approx(-4.84788356594, rel=1e-11)
    assert table["a_phi2"][2] == ""
    assert all(float(r[3]) < 1e-8 for r in table.values() if r[3])


def test_missing_fields_all_reported(capsys):
    code, out, err = run(capsys, "price", "--nu", "0.5")
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    assert {ln.split(":")[1].strip() for ln in lines} >= {"r", "alpha", "gamma", "K", "T", "m", "epsilon"}
    assert all(ln.startswith("config error: ") for ln in lines)


def test_invalid_values(capsys):
    code, _, err = run(capsys, "band", "--set", "fig1", "--nu", "0.5", "--gamma", "-1", "--rho", "2")
    assert code == 2
    assert "gamma" in err and "rho" in err


def test_json_config_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"set": "fig3", "nu": 0.5, "rho": -0.2, "n_S": 3, "S_min": 90, "S_max": 110}))
    code, out_file, _ = run(capsys, "price", "--config", str(cfg))
    assert code == 0
    code, out_flag, _ = run(capsys, "price", "--config", str(cfg), "--rho", "0")
    assert code == 0
    a, b = rows(out_file), rows(out_flag)
    assert a[1][0] == "90" and a[1][2] != "0"
    assert b[1][2] == "0"


def test_unknown_and_broken_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nu": 0.5, "volatility": 2}))
    code, _, err = run(capsys, "averages", "--config", str(bad))
    assert code == 2 and "volatility: unknown field" in err
    broken = tmp_path / "broken.json"
    broken.write_text("{nu: ")
    code, _, err = run(capsys, "averages", "--config", str(broken))
    assert code == 2 and "invalid JSON" in err
    code, _, err = run(capsys, "averages", "--config", str(tmp_path / "none.json"))
    assert code == 2 and "file not found" in err


def test_output_file_byte_identical(tmp_path, capsys):
    args = ["simulate", "--set", "fig1", "--nu", "0.5", "--n-paths", "200", "--epsilon", "0.02", "--seed", "5"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, *args, "-o", str(a))[0] == 0
    assert run(capsys, *args, "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    table = rows(a.read_text())
    assert tuple(table[0]) == cli.SIM_COLUMNS
    assert [r[2] for r in table[1:]] == ["plain", "writer"]


def test_simulate_rejects_coarse_steps(capsys):
    code, _, err = run(capsys, "simulate", "--set", "fig1", "--nu", "0.5", "--n-paths", "10", "--n-steps", "5")
    assert code == 2 and "n_steps" in err


def test_figures_env_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path))
    code, out, _ = run(capsys, "figures", "--set", "fig2", "--nu", "0.5")
    assert code == 0
    path = tmp_path / "fig2.csv"
    assert out.strip() == str(path)
    assert rows(path.read_text())[0] == ["vol", "S", "y_star", "lower", "upper"]
    code, _, err = run(capsys, "figures", "--set", "fig1")
    assert code == 2 and "nu" in err


def test_verify_subset(capsys):
    code, out, err = run(capsys, "verify", "--only", "bs_price", "ou_calculus")
    assert code == 0
    assert "[PASS] bs_price" in err and "2/2 checks passed" in err
    table = rows(out)
    assert tuple(table[0]) == cli.VERIFY_COLUMNS
    assert {r[0] for r in table[1:]} == {"bs_price", "ou_calculus"}
    assert not any(r[3].endswith("seconds") for r in table[1:])


def test_verify_unknown_check(capsys):
    code, _, err = run(capsys, "verify", "--only", "nonsense")
    assert code == 2 and "unknown checks" in err


def test_verify_failure_exit_code(monkeypatch, capsys):
    from svtc import checks

    failing = lambda: checks.CheckResult("bs_price", "forced", False, 0.0, 1.0, {})  # noqa: E731
    monkeypatch.setitem(checks.CHECKS, "bs_price", failing)
    code, _, err = run(capsys, "verify", "--only", "bs_price")
    assert code == 1 and "failed: bs_price" in err
