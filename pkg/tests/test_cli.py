import json
import subprocess
import sys
import time

import pytest

from conformal_blowup.cli import main
from conformal_blowup.experiment import ENV_OUT

from conftest import CONFIGS


def _files(d, pattern="*.csv"):
    return {p.name: p.read_bytes() for p in sorted(d.glob(pattern))}


def test_run_ode_control(tmp_path, capsys):
    t = time.perf_counter()
    rc = main(["run", str(CONFIGS / "ode_control.toml"), "--out", str(tmp_path)])
    assert time.perf_counter() - t < 30.0
    assert rc == 0
    out = capsys.readouterr().out
    assert "blowup_time" in out and "ode_rate" in out and "FAIL" not in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == 0
    assert abs(summary["T_fit"] - 1.0) <= 1e-6
    for name in ("config.toml", "checks.json", "checks.txt", "physical_history.csv"):
        assert (tmp_path / name).exists()


def test_run_steady_state(tmp_path):
    assert main(["run", str(CONFIGS / "steady_state.toml"), "--out", str(tmp_path)]) == 0
    for name in ("functionals_eta0.5.csv", "identities.csv", "similarity_snapshots.csv"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "identities.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "s" and "E0_residual" in header


def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", str(CONFIGS / "steady_state.toml"), "--out", str(d)]) == 0
    fa, fb = _files(a), _files(b)
    assert fa and fa == fb
    assert (a / "checks.json").read_bytes() == (b / "checks.json").read_bytes()


def test_check_recomputes_same_table(tmp_path, capsys):
    main(["run", str(CONFIGS / "steady_state.toml"), "--out", str(tmp_path)])
    first = capsys.readouterr().out
    assert main(["check", str(tmp_path)]) == 0
    again = capsys.readouterr().out
    assert again.strip() == first.split("artifacts:")[0].strip()


def test_check_detects_tampering(tmp_path):
    main(["run", str(CONFIGS / "ode_control.toml"), "--out", str(tmp_path)])
    hist = tmp_path / "physical_history.csv"
    lines = hist.read_text().splitlines()
    cols = lines[0].split(",")
    k = cols.index("sup")
    row = lines[-1].split(",")
    row[k] = repr(float(row[k]) * 1.01)
    hist.write_text("\n".join(lines[:-1] + [",".join(row)]) + "\n")
    assert main(["check", str(tmp_path)]) == 1


def test_check_rejects_non_run_directory(tmp_path, capsys):
    assert main(["check", str(tmp_path)]) == 2
    assert "config.toml" in capsys.readouterr().err


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nNN = 3\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "model.NN" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_config_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml")]) == 2


def test_converge_needs_two_levels(tmp_path, capsys):
    rc = main(["converge", str(CONFIGS / "steady_state.toml"), "--levels", "1", "--out", str(tmp_path)])
    assert rc == 2
    assert "level" in capsys.readouterr().err


def test_converge_writes_table(tmp_path):
    rc = main(["converge", str(CONFIGS / "steady_state.toml"), "--levels", "2", "--out", str(tmp_path)])
    assert rc == 0
    data = json.loads((tmp_path / "convergence.json").read_text())
    assert len(data["nodes"]) == 2
    assert (tmp_path / "convergence.csv").exists()


def test_env_var_sets_output(tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv(ENV_OUT, str(env_dir))
    assert main(["run", str(CONFIGS / "ode_control.toml")]) == 0
    assert (env_dir / "summary.json").exists()
    # --out wins over the environment
    assert main(["run", str(CONFIGS / "ode_control.toml"), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "summary.json").exists()


def test_seed_is_recorded(tmp_path):
    main(["run", str(CONFIGS / "ode_control.toml"), "--out", str(tmp_path), "--seed", "11"])
    assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 11


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "conformal_blowup", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("run", "check", "converge"):
        assert cmd in r.stdout


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
