import csv
import hashlib
import json
import math

import numpy as np
import pytest

from epzero import experiments
from epzero.config import Experiment, parse_config
from epzero.euler_poisson_solver import read_csv, read_snapshot
from epzero.experiments import (
    dispersive_summary,
    ill_prepared_data,
    periodic_bump,
    random_field,
    run,
    shell_packet,
)
from epzero.littlewood_paley import DEFAULT_PARTITION
from epzero.spectral_core import TorusGrid, divergence, inverse, leray_project

SMALL = """
[grid]
points = 32
side_length = 25.132741228718345
[unit]
fields = 3
frequencies = 500
[data]
amplitude = 0.01
width = 2.0
[sweep]
epsilons = [0.8, 0.4, 0.2, 0.1]
t_end = 0.2
record_interval = 0.05
limit_dt = 0.01
[decay]
epsilons = [1.0, 0.1]
t_end = 2.0
dt = 0.05
record_every = 2
amplitude = 0.01
min_r2 = 0.0
[dispersive]
j = [1]
k = [0]
tau = [4.0, 16.0]
t = [0.0]
rtol = 1e-5
[strichartz]
epsilons = [0.1, 0.05]
t_end = 1.0
dt = 0.01
[solver]
dt = 0.05
t_end = 0.5
record_every = 2
"""


def small_config(experiment, out, extra=""):
    return parse_config(SMALL + extra, experiment=experiment).with_overrides(output_dir=out)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


GRID = TorusGrid(2, 32, 2 * np.pi * 4)


class TestData:
    def test_periodic_bump_peak_and_periodicity(self):
        b = periodic_bump(GRID, 2.0)
        c = GRID.points_per_axis // 2
        assert b[c, c] == pytest.approx(1.0)
        assert b.max() == pytest.approx(1.0) and b.min() > 0
        # the bump is smooth across the cell boundary: its spectrum decays fast
        coeffs = np.abs(np.fft.fft2(b))
        assert coeffs[GRID.points_per_axis // 2, 0] < 1e-8 * coeffs[0, 0]

    def test_ill_prepared_amplitudes(self):
        n01, v0 = ill_prepared_data(GRID, 0.03, 2.0)
        assert np.abs(inverse(n01)).max() == pytest.approx(0.03)
        assert np.sqrt((inverse(v0) ** 2).sum(0)).max() == pytest.approx(0.03)
        assert abs(n01.mean()[0]) < 1e-15
        pv, qv = leray_project(v0)
        assert pv.norm() > 0.1 * v0.norm() and qv.norm() > 0.1 * v0.norm()

    def test_shell_packet_support(self):
        f = shell_packet(GRID, 0)
        r = GRID.xi_norm
        inside = (r >= DEFAULT_PARTITION.inner) & (r <= 2 * DEFAULT_PARTITION.outer)
        assert f.norm() > 0
        assert np.all(f.coefficients[0][~inside] == 0)

    def test_random_field_mean_zero_band_limited(self):
        rng = np.random.default_rng(1)
        f = random_field(rng, GRID, 2, band=4)
        assert np.all(f.coefficients[:, 0, 0] == 0)
        assert np.all(f.coefficients[:, np.abs(GRID.mode_indices).max(0) > 4] == 0)


class TestDispersiveSummary:
    def test_constant_and_spread(self):
        rows = [(1, 0, 4.0, 0.0, 2.0, 0.0, 1.0, 2.0), (1, 0, 16.0, 0.0, 0.5, 0.0, 0.5, 1.0)]
        constants, tau_ratio = dispersive_summary(rows, [1], [4.0, 16.0])
        assert constants == [(1, 2.0, 2.0)]
        assert tau_ratio == pytest.approx(4.0)

    def test_no_tau_pairs(self):
        rows = [(1, 0, 1.0, 0.0, 2.0, 0.0, 1.0, 2.0)]
        assert math.isnan(dispersive_summary(rows, [1], [1.0])[1])


class TestRun:
    def test_unit_suite_table_and_manifest(self, tmp_path):
        outcome = run(small_config("unit-suite", tmp_path))
        assert outcome.exit_status == 0, outcome.checks
        with open(tmp_path / "unit_suite.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 9 and all(r["passed"] == "true" for r in rows)
        m = manifest(tmp_path)
        assert m["passed"] and m["experiment"] == "unit-suite" and m["error"] is None
        assert m["config"]["grid"]["points"] == 32
        assert m["wall_time_s"] >= 0 and m["version"]
        assert len(m["checks"]) == 9

    def test_manifest_hashes_every_file(self, tmp_path):
        run(small_config("limit-sweep", tmp_path))
        m = manifest(tmp_path)
        listed = {f["path"] for f in m["files"]}
        on_disk = {str(p.relative_to(tmp_path)) for p in tmp_path.rglob("*") if p.is_file()} - {"manifest.json"}
        assert listed == on_disk
        for f in m["files"]:
            data = (tmp_path / f["path"]).read_bytes()
            assert f["sha256"] == hashlib.sha256(data).hexdigest() and f["bytes"] == len(data)

    def test_limit_sweep_file_count(self, tmp_path):
        outcome = run(small_config("limit-sweep", tmp_path))
        runs = sorted((tmp_path / "limit_sweep" / "runs").glob("*.csv"))
        assert len(runs) == 4
        assert len(list(tmp_path.rglob("*.json"))) == 2  # report + manifest
        report = json.loads((tmp_path / "limit_sweep" / "report.json").read_text())
        assert report["epsilons"] == [0.8, 0.4, 0.2, 0.1]
        header = runs[0].read_text().splitlines()[0].split(",")
        assert header[:2] == ["t", "L2_Pv_err"]
        assert len(runs[0].read_text().splitlines()) == 1 + 5
        assert {c.name for c in outcome.checks} >= {"sweep_complete", "err_Pv_decreasing", "err_Pv_slope"}

    def test_same_seed_is_bit_identical(self, tmp_path):
        for exp in ("unit-suite", "limit-sweep"):
            a, b = tmp_path / f"{exp}-a", tmp_path / f"{exp}-b"
            run(small_config(exp, a))
            run(small_config(exp, b))
            assert tree_bytes(a) == tree_bytes(b)

    def test_seed_changes_random_corpus(self, tmp_path):
        run(small_config("unit-suite", tmp_path / "a"))
        run(small_config("unit-suite", tmp_path / "b").with_overrides(seed=5))
        assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")

    def test_parallel_matches_serial(self, tmp_path):
        run(small_config("limit-sweep", tmp_path / "serial"), jobs=1)
        out = run(small_config("limit-sweep", tmp_path / "parallel"), jobs=2)
        assert manifest(tmp_path / "parallel")["jobs"] == 2 and out.error is None
        assert tree_bytes(tmp_path / "serial") == tree_bytes(tmp_path / "parallel")

    def test_single_run_outputs(self, tmp_path):
        outcome = run(small_config("single-run", tmp_path))
        assert outcome.exit_status == 0, outcome.checks
        traj = read_csv(tmp_path / "single_run" / "trajectory.csv")
        assert traj["t"][-1] == pytest.approx(0.5)
        state, params = read_snapshot(tmp_path / "single_run" / "final.snapshot")
        assert state.time == pytest.approx(0.5) and params.epsilon == 0.1
        assert divergence(state.grad_phi).norm() > 0

    def test_decay_outputs(self, tmp_path):
        outcome = run(small_config("decay", tmp_path))
        assert {p.name for p in (tmp_path / "decay").iterdir()} == {"eps_1.csv", "eps_0.1.csv", "fits.csv"}
        fits = read_csv(tmp_path / "decay" / "fits.csv")
        assert np.all(fits["rate"] < 0)
        assert [c.name for c in outcome.checks] == ["decay_rates_negative", "decay_rates_uniform", "decay_fit_quality"]

    def test_dispersive_outputs(self, tmp_path):
        outcome = run(small_config("dispersive", tmp_path))
        table = read_csv(tmp_path / "dispersive" / "integrals.csv")
        assert len(table["ratio"]) == 2
        assert np.allclose(table["ratio"], table["sup_abs_I"] / table["bound"])
        names = [c.name for c in outcome.checks]
        assert names == ["dispersive_C_fit_j1", "dispersive_tau_envelope"]

    def test_strichartz_outputs(self, tmp_path):
        outcome = run(small_config("strichartz", tmp_path))
        table = read_csv(tmp_path / "strichartz" / "scaling.csv")
        assert list(table["epsilon"]) == [0.1, 0.05]
        assert np.allclose(table["ratio"], table["norm"] / (table["epsilon"] ** 0.25 * table["data_norm"]))
        assert outcome.checks[0].name == "strichartz_scaling"

    def test_failed_check_gives_nonzero_exit(self, tmp_path):
        cfg = small_config("decay", tmp_path)
        sections = cfg.sections
        sections["decay"]["min_r2"] = 1.1  # unattainable on purpose
        outcome = run(cfg)
        assert outcome.exit_status == 1 and outcome.error is None
        assert manifest(tmp_path)["passed"] is False

    def test_module_error_recorded(self, tmp_path, monkeypatch):
        def boom(config, art, jobs):
            art.write_rows("partial.csv", ["a"], [[1]])
            raise RuntimeError("solver exploded")

        monkeypatch.setitem(experiments.RUNNERS, Experiment.SINGLE_RUN, boom)
        outcome = run(small_config("single-run", tmp_path))
        assert outcome.exit_status == 1
        m = manifest(tmp_path)
        assert m["passed"] is False and "solver exploded" in m["error"]
        assert m["checks"][0]["name"] == "experiment_completed" and not m["checks"][0]["passed"]
        assert [f["path"] for f in m["files"]] == ["partial.csv"]

    def test_jobs_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EPZERO_JOBS", "3")
        run(small_config("unit-suite", tmp_path))
        assert manifest(tmp_path)["jobs"] == 3
