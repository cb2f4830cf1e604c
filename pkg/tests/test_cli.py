import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import special

from fracevol.cli import main
from fracevol.config import dumps_config, load_config, loads_config
from fracevol.errors import ConfigError

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.toml"))

RELAX = """
[kernel]
family = "caputo"
beta = 0.5

[memory]
tau = 0.0078125
N = 128

[operator]
id = "relaxation"
rate = 1.0
initial = 1.0
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_round_trip(path):
    cfg = load_config(path)
    assert loads_config(dumps_config(cfg)) == cfg
    assert cfg.tau * cfg.N > 0


def test_unknown_key_is_rejected(tmp_path, capsys):
    with pytest.raises(ConfigError):
        loads_config(RELAX.replace("beta = 0.5", "beta = 0.5\nbta = 0.4"))
    cfg = write(tmp_path, "bad.toml", RELAX.replace("rate = 1.0", "rate = 1.0\nrtae = 2.0"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = stderr_json(capsys)
    assert err["error"] == "ConfigError" and err["exit_code"] == 2
    assert not (tmp_path / "o").exists()


def test_unknown_section_and_bad_grid_rejected():
    with pytest.raises(ConfigError):
        loads_config(RELAX + "\n[plotting]\ncolor = 'red'\n")
    with pytest.raises(ConfigError):
        loads_config(RELAX.replace("N = 128", "N = 0"))


def test_noise_dimension_must_match_operator():
    text = RELAX.replace('id = "relaxation"\nrate = 1.0\ninitial = 1.0', 'id = "p_laplace"\np = 3.0\nn = 4\ninitial = 0.5')
    text += "\n[noise]\nB = [[1.0, 0.0], [0.0, 1.0]]\nn_paths = 4\n"
    with pytest.raises(ConfigError):
        loads_config(text)


# ---------------------------------------------------------------- run


def test_run_relaxation_matches_oracle(tmp_path, capsys):
    cfg = write(tmp_path, "r.toml", RELAX)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    data = np.loadtxt(tmp_path / "o" / "trajectory.csv", delimiter=",", skiprows=1)
    assert data.shape == (129, 2)
    assert abs(data[-1, 1] - special.erfcx(1.0)) < 3e-3
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["max_residual"] < 1e-10


def test_run_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "r.toml", RELAX)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    for name in ("trajectory.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_porous_medium_zero_data_gives_zero_csv(tmp_path):
    text = RELAX.replace('id = "relaxation"\nrate = 1.0\ninitial = 1.0', 'id = "porous_medium"\nr = 2.0\nn = 9\ninitial = 0.0')
    cfg = write(tmp_path, "pme.toml", text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    data = np.loadtxt(tmp_path / "o" / "trajectory.csv", delimiter=",", skiprows=1)
    assert np.all(data[:, 1:] == 0.0)


def test_csv_has_full_precision(tmp_path):
    cfg = write(tmp_path, "r.toml", RELAX)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    row = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()[-1]
    value = row.split(",")[1]
    assert float(value) == float(repr(float(value)))
    assert len(value.replace("0.", "").lstrip("0")) >= 15


def test_missing_config_is_io_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 3
    assert stderr_json(capsys)["exit_code"] == 3


def test_solver_failure_is_exit_one(tmp_path, capsys):
    text = RELAX.replace("[operator]", "[solver]\nmax_iter = 1\nmin_iter = 1\nabs_tol = 1e-300\nrel_tol = 1e-300\n\n[operator]")
    text = text.replace('id = "relaxation"\nrate = 1.0\ninitial = 1.0', 'id = "porous_medium"\nr = 3.0\nn = 5\ninitial = "sine"')
    cfg = write(tmp_path, "r.toml", text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = stderr_json(capsys)
    assert err["exit_code"] == 1 and "step_index" in err
    assert not (tmp_path / "o").exists()


# ---------------------------------------------------------------- spde


def test_spde_seed_override_and_threads(tmp_path, monkeypatch):
    text = RELAX + "\n[noise]\nB = 0.5\nn_paths = 300\nseed = 1\nbatch_size = 64\n"
    cfg = write(tmp_path, "s.toml", text)
    assert main(["spde", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
    monkeypatch.setenv("FRACEVOL_THREADS", "3")
    assert main(["spde", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "5"]) == 0
    assert main(["spde", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    a, b, c = ((tmp_path / d / "ensemble.csv").read_bytes() for d in "abc")
    assert a == b and a != c
    header = a.decode().splitlines()[0]
    assert header == "t,mean_1,var_1,se_1"


def test_spde_zero_noise_equals_run(tmp_path):
    cfg = write(tmp_path, "s.toml", RELAX + "\n[noise]\nB = 0.0\nn_paths = 5\n")
    main(["spde", "--config", str(cfg), "--out", str(tmp_path / "s")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")])
    ens = np.loadtxt(tmp_path / "s" / "ensemble.csv", delimiter=",", skiprows=1)
    traj = np.loadtxt(tmp_path / "r" / "trajectory.csv", delimiter=",", skiprows=1)
    assert np.array_equal(ens[:, 1], traj[:, 1]) and np.all(ens[:, 2] == 0.0)


def test_spde_without_noise_section(tmp_path, capsys):
    cfg = write(tmp_path, "r.toml", RELAX)
    assert main(["spde", "--config", str(cfg)]) == 2


# ---------------------------------------------------------------- kernel


def test_kernel_inspect(capsys, tmp_path):
    assert main(["kernel", "inspect", "--family", "caputo", "--beta", "0.5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "0.564189583547756" in out
    data = json.loads((tmp_path / "kernel_inspect.json").read_text())
    assert data["psi"][1] == pytest.approx(1.0)


def test_kernel_verify_non_monotone_custom(tmp_path, capsys):
    t = np.linspace(0.01, 10.0, 200)
    k = 1.0 + np.sin(t)
    csv = tmp_path / "k.csv"
    np.savetxt(csv, np.column_stack([t, k]), delimiter=",", header="t,k", comments="")
    assert main(["kernel", "verify", "--family", "custom", "--file", str(csv)]) == 2
    assert stderr_json(capsys)["exit_code"] == 2


def test_kernel_verify_catalogue_member(capsys):
    assert main(["kernel", "verify", "--family", "gamma_sub", "--a", "1", "--b", "1"]) == 0


def test_kernel_sonine_multiterm(capsys):
    assert main(["kernel", "sonine", "--family", "multiterm", "--alpha", "0.3", "--beta", "0.7"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["pass"] and rec["lhs"] <= 1e-4


def test_kernel_bad_parameter(capsys):
    assert main(["kernel", "inspect", "--family", "caputo", "--beta", "1.5"]) == 2


# ---------------------------------------------------------------- verify


def test_verify_requires_suite(capsys):
    assert main(["verify"]) == 2
    assert main(["verify", "nonsense"]) == 2


def test_verify_rejects_nonpositive_gamma(capsys):
    assert main(["verify", "dissipativity", "--gamma", "0"]) == 2
    assert stderr_json(capsys)["error"] == "ParamOutOfRange"


def test_verify_contraction_suite(tmp_path, capsys):
    assert main(["verify", "contraction", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "verify_contraction.json").read_text())
    assert data["summary"]["pass"] and data["summary"]["checks"] == 5
    for rec in data["records"]:
        assert {"check", "kernel", "params", "lhs", "rhs", "margin", "tol", "pass"} <= set(rec)


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["run"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["spde", "--config", "x.toml", "--threads", "many"]) == 2


def test_console_script_end_to_end(tmp_path):
    cfg = write(tmp_path, "r.toml", RELAX)
    env = dict(os.environ)
    proc = subprocess.run(
        [sys.executable, "-m", "fracevol.cli", "run", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
        env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "trajectory.csv").exists()
