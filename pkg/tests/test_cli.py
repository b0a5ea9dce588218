import json
import textwrap

import numpy as np
import pytest

from oscbc import cli
from oscbc.cli import ConfigError, bundled_config, load_config, main

CELL = """\
command = "cell"
seed = 0

[operator]
preset = "laplacian"
dim = 2

[boundary]
kind = "lattice-periodic"
constant = 0.0
terms = [{ amplitude = 1.0, freq = [1.0, 0.0], phase = 0.0 }]

[ladder]
mu_tol = 1e-3
"""

SDE = """\
command = "sde"
seed = 3

[diffusion]
b = [1.0]
sigma = [[1.0]]
R_cap = 10.0
x0 = [5.0]
n_paths = 4000
chunk = 1000

[growth]
R = [10.0, 20.0, 40.0]
x0 = [1.0]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def summary(out):
    return json.loads((out / "summary.json").read_text())


def test_unknown_key_reports_line(tmp_path):
    p = write(tmp_path, CELL.replace("mu_tol = 1e-3", "mu_tol = 1e-3\nmu_tll = 2"))
    with pytest.raises(ConfigError, match=r"unknown key 'mu_tll' in \[ladder\] \(line 15\)"):
        load_config(p)
    assert main(["cell", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_unknown_nested_key_and_types(tmp_path):
    bad = CELL.replace("phase = 0.0 }", "phase = 0.0, wave = 1 }")
    with pytest.raises(ConfigError, match="wave"):
        load_config(write(tmp_path, bad))
    with pytest.raises(ConfigError, match="wrong type"):
        load_config(write(tmp_path, CELL.replace("dim = 2", 'dim = "two"')))
    with pytest.raises(ConfigError, match="wrong type"):
        load_config(write(tmp_path, CELL.replace("seed = 0", "seed = true")))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, CELL.replace("[ladder]", "[ladder")))


def test_command_mismatch_and_missing_sections(tmp_path, capsys):
    p = write(tmp_path, CELL)
    assert main(["sde", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "not 'sde'" in capsys.readouterr().err
    q = write(tmp_path, 'command = "cell"\n', "bare.toml")
    assert main(["cell", "--config", str(q), "--out", str(tmp_path / "o")]) == 1
    assert main(["cell"]) == 1
    assert main(["nonsense"]) == 1


def test_under_resolution_surfaced(tmp_path, capsys):
    text = open(bundled_config("blowup_slow_drift.toml")).read()
    text = text.replace("h_ratio = 16", "h_ratio = 8") if "h_ratio" in text else text.replace("[blowup]", "[blowup]\nh_ratio = 8")
    p = write(tmp_path, text)
    assert main(["homogenize", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "at least 16" in capsys.readouterr().err


def test_cell_run(tmp_path):
    out = tmp_path / "cell"
    assert main(["cell", "--config", str(write(tmp_path, CELL)), "--out", str(out)]) == 0
    s = summary(out)
    assert s["schema"] == 1 and s["status"] == "pass"
    assert abs(s["results"]["tail"]["mu"]) <= 1e-3
    assert s["results"]["subsolution"]["verdict"] == "certified"
    for c in s["checks"]:
        assert {"measured", "tolerance", "passed"} <= set(c)
    rows = np.loadtxt(out / "tail.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(rows[:, 1]) < 0)
    assert (out / "tail.svg").read_text().lstrip().startswith("<?xml")
    assert (out / "timing.log").exists()


def test_cell_rerun_byte_identical(tmp_path):
    p = write(tmp_path, CELL)
    for name in ("a", "b"):
        assert main(["cell", "--config", str(p), "--out", str(tmp_path / name)]) == 0
    for f in ("summary.json", "tail.csv", "tail.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sde_growth_table(tmp_path):
    p = write(tmp_path, SDE)
    out = tmp_path / "sde"
    code = main(["sde", "--config", str(p), "--out", str(out)])
    s = summary(out)
    assert code == 2  # probable failure of the coercive subsolution is a diagnostic
    assert s["results"]["growth"]["verdict"] == "probable-failure"
    assert s["results"]["growth"]["exponent"] >= 0.8
    rows = np.loadtxt(out / "growth.csv", delimiter=",", skiprows=1)
    assert rows.shape[0] >= 3
    mc = [c for c in s["checks"] if c["name"] == "MC mean vs PDE"][0]
    assert mc["passed"]
    again = tmp_path / "sde2"
    main(["sde", "--config", str(p), "--out", str(again), "--seed", "3"])
    assert (out / "summary.json").read_bytes() == (again / "summary.json").read_bytes()
    assert (out / "growth.csv").read_bytes() == (again / "growth.csv").read_bytes()


def test_seed_override_changes_results(tmp_path):
    p = write(tmp_path, SDE.split("[growth]")[0])
    main(["sde", "--config", str(p), "--out", str(tmp_path / "a")])
    main(["sde", "--config", str(p), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert summary(tmp_path / "a")["results"]["exit"]["mean"] != summary(tmp_path / "b")["results"]["exit"]["mean"]
    assert summary(tmp_path / "b")["seed"] == 4
    assert main(["sde", "--config", str(p), "--out", str(tmp_path / "c"), "--seed", "-1"]) == 1


def test_parabolic_run(tmp_path):
    text = """\
    command = "parabolic"
    [operator]
    preset = "laplacian"
    dim = 1
    [boundary]
    kind = "time-periodic"
    constant = 0.25
    [ladder]
    h0 = 0.05
    """
    out = tmp_path / "par"
    assert main(["parabolic", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    assert summary(out)["results"]["tail"]["mu"] == pytest.approx(0.25, abs=1e-10)


def test_homogenize_parabolic_run(tmp_path):
    text = """\
    command = "homogenize"
    [operator]
    preset = "laplacian"
    dim = 1
    [boundary]
    kind = "time-periodic"
    constant = 0.4
    terms = [{ amplitude = 0.6, freq = [1.0], phase = 0.0 }]
    [problem]
    family = "parabolic"
    u0 = 0.4
    [blowup]
    eps = [0.125]
    R = 2.125
    """
    out = tmp_path / "hp"
    code = main(["homogenize", "--config", str(write(tmp_path, text)), "--out", str(out)])
    s = summary(out)
    assert code == 0
    assert s["results"]["blowup"]["gbar"] == pytest.approx(0.4, abs=1e-3)
    assert (out / "deviations.csv").exists() and (out / "deviations.svg").exists()


def test_hjb_pieces_config(tmp_path):
    text = """\
    command = "cell"
    [operator]
    [[operator.pieces]]
    A = [[1.0, 0.0], [0.0, 2.0]]
    b = [0.0, 0.0]
    [[operator.pieces]]
    A = [[2.0, 0.0], [0.0, 0.5]]
    b = [0.0, 0.0]
    [boundary]
    constant = 0.1
    terms = [{ amplitude = 1.0, freq = [1.0, 0.0], phase = 0.0 }]
    [diagnostics]
    subsolution = false
    """
    out = tmp_path / "hjb"
    assert main(["cell", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    s = summary(out)
    assert "subsolution" not in s["results"]
    assert s["results"]["tail"]["verdict"] == "converged"


def test_coefficient_field_tables_are_strict(tmp_path):
    text = """\
    command = "cell"
    [operator]
    [[operator.pieces]]
    A = [[{ constant = 1.0, terms = [{ amplitude = 0.2, freq = [1.0, 0.0], phase = 0.0, extra = 1 }] }, 0.0], [0.0, 1.0]]
    b = [0.0, 0.0]
    [boundary]
    constant = 1.0
    """
    with pytest.raises(ConfigError, match="extra"):
        cli._operator(load_config(write(tmp_path, text))["operator"])


def test_verify_subset(tmp_path):
    text = """\
    command = "verify"
    [verify]
    criteria = [1, 2]
    """
    out = tmp_path / "v"
    assert main(["verify", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    s = summary(out)
    assert [c["number"] for c in s["results"]["criteria"]] == [1, 2]
    assert (out / "acceptance.csv").read_text().startswith("criterion,title,passed,budget_seconds")
    bad = write(tmp_path, text.replace("[1, 2]", "[13]"), "bad.toml")
    assert main(["verify", "--config", str(bad), "--out", str(out)]) == 1


def test_bundled_configs_parse():
    for name in ("verify.toml", "cell_cosine.toml", "cell_hjb.toml", "parabolic_heat.toml", "blowup_slow_drift.toml", "sde_drift.toml"):
        cfg = load_config(bundled_config(name))
        assert cfg["command"] in cli.COMMANDS
