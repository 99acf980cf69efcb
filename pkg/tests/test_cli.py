import json
import subprocess
import sys

import pytest

from epzero.cli import main
from test_experiments import SMALL


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL, encoding="utf-8")
    return path


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_unit_suite_exit_zero(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["unit-suite", "--config", str(config_file), "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(line.startswith("PASS ") for line in lines) == 9
    assert read_manifest(out)["passed"] is True


def test_overrides_recorded(config_file, tmp_path):
    out = tmp_path / "out"
    main(["unit-suite", "--config", str(config_file), "--out", str(out), "--seed", "11", "--jobs", "2"])
    m = read_manifest(out)
    assert m["config"]["run"]["seed"] == 11 and m["jobs"] == 2


def test_jobs_environment_fallback(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("EPZERO_JOBS", "4")
    out = tmp_path / "out"
    main(["unit-suite", "--config", str(config_file), "--out", str(out)])
    assert read_manifest(out)["jobs"] == 4


def test_flag_beats_environment(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("EPZERO_JOBS", "4")
    out = tmp_path / "out"
    main(["unit-suite", "--config", str(config_file), "--out", str(out), "--jobs", "1"])
    assert read_manifest(out)["jobs"] == 1


def test_invalid_config_lists_every_problem(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[model]\ngamma = 0.5\nfoo = 1\n[sweep]\nepsilons = [0.1, 0.2]\n", encoding="utf-8")
    assert main(["decay", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "gamma must be ≥ 1" in err and "model.foo" in err and "strictly decreasing" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["decay", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "cannot read configuration" in capsys.readouterr().err


def test_bad_jobs_flag(config_file, capsys):
    assert main(["decay", "--config", str(config_file), "--jobs", "0"]) == 2


def test_unknown_experiment_rejected():
    with pytest.raises(SystemExit) as info:
        main(["movie"])
    assert info.value.code == 2


def test_failing_check_exit_one(config_file, tmp_path):
    path = tmp_path / "strict.toml"
    path.write_text(config_file.read_text().replace("min_r2 = 0.0", "min_r2 = 1.5"), encoding="utf-8")
    assert main(["decay", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert read_manifest(tmp_path / "o")["passed"] is False


def test_module_invocation(config_file, tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "epzero.cli", "unit-suite", "--config", str(config_file),
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "manifest:" in proc.stdout
