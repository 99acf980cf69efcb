"""Experiment orchestration and artifact emission.

Each experiment writes CSV/JSON files into the output directory and returns
a list of :class:`Check` outcomes; :func:`run` adds ``manifest.json`` with the
configuration echo, version, wall time, check results and a SHA-256 of every
file written.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import subprocess
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from . import __version__
from .acoustic_semigroup import (
    acoustic_symbol_from_norm,
    dispersive_bound,
    propagator,
    sup_dispersive_integral,
)
from .config import Experiment, RunConfig
from .euler_poisson_solver import SolverConfig, besov_sigma, decay_fit, energy_Q, solve, write_csv, write_snapshot
from .incompressible_limit import resolve_jobs, run_sweep, strichartz_scaling
from .littlewood_paley import block, block_indices, homogeneous_block, partition_sum
from .plasma_model import (
    ModelParams,
    ScaledState,
    build_ill_prepared,
    kawashima_product_check,
    poisson_correction,
)
from .spectral_core import (
    SpectralField,
    TorusGrid,
    divergence,
    gradient,
    inverse,
    laplacian,
    leray_project,
    transform,
)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: str = ""
    detail: str = ""

    def __post_init__(self):
        # numpy scalars would not serialize into the manifest
        object.__setattr__(self, "passed", bool(self.passed))
        if self.value is not None:
            object.__setattr__(self, "value", float(self.value))


@dataclass
class Artifacts:
    """Output directory that remembers every file handed out."""

    root: Path
    files: list = field(default_factory=list)

    def path(self, relative: str) -> Path:
        p = self.root / relative
        p.parent.mkdir(parents=True, exist_ok=True)
        if p not in self.files:
            self.files.append(p)
        return p

    def write_rows(self, relative: str, header, rows) -> Path:
        p = self.path(relative)
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(x) for x in row])
        return p

    def write_json(self, relative: str, payload) -> Path:
        p = self.path(relative)
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return p


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _label(x: float) -> str:
    return f"{x:g}"


def _map(func: Callable, tasks: list, jobs: int) -> list:
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(func, tasks))
    return [func(t) for t in tasks]


# initial data ----------------------------------------------------------------
def periodic_bump(grid: TorusGrid, width: float) -> np.ndarray:
    """Smooth periodic bump ``exp(kappa (sum cos(2 pi (x - c)/L) - N))`` of length scale ``width``.

    Unlike a truncated Gaussian it has no kink at the cell boundary.
    """
    kappa = (grid.side_length / (2 * math.pi * width)) ** 2
    c = grid.side_length / 2
    k = grid.fundamental
    return np.exp(kappa * (sum(np.cos(k * (x - c)) for x in grid.coordinates) - grid.dimension))


def ill_prepared_data(grid: TorusGrid, amplitude: float, width: float):
    """Mean-zero density perturbation and mixed velocity, each with grid maximum ``amplitude``.

    The density is the Laplacian of a periodic bump; the velocity combines a
    rotated gradient (solenoidal) with a gradient (compressible) part.
    """
    g = transform(grid, periodic_bump(grid, width))
    lap = inverse(laplacian(g))[0]
    n01 = transform(grid, amplitude * lap / np.abs(lap).max())
    grad = inverse(gradient(g))
    if grid.dimension == 2:
        vel = np.stack([-grad[1] + grad[0], grad[0] + grad[1]])
    else:
        vel = grad
    v0 = transform(grid, amplitude * vel / np.sqrt((vel**2).sum(axis=0)).max())
    return n01, v0


def shell_packet(grid: TorusGrid, shell: int) -> SpectralField:
    """Unit Gaussian centred in the box, restricted to one homogeneous dyadic shell."""
    c = grid.side_length / 2
    r2 = sum((x - c) ** 2 for x in grid.coordinates)
    return homogeneous_block(transform(grid, np.exp(-r2 / 2)), shell)


def random_field(rng: np.random.Generator, grid: TorusGrid, components: int = 1, band: int = 10) -> SpectralField:
    """Real random field with modes ``|j| <= band`` per axis and zero mean."""
    a = rng.standard_normal((components,) + grid.shape)
    f = transform(grid, a)
    keep = np.all(np.abs(grid.mode_indices) <= band, axis=0)
    keep[(0,) * grid.dimension] = False
    return SpectralField(grid, np.where(keep[None], f.coefficients, 0.0))


def random_state(rng: np.random.Generator, grid: TorusGrid, amplitude: float = 0.01) -> ScaledState:
    n = grid.dimension
    f = random_field(rng, grid, 1 + 2 * n)
    c = amplitude * f.coefficients
    return ScaledState(SpectralField(grid, c[:1]), SpectralField(grid, c[1:1 + n]), SpectralField(grid, c[1 + n:]))


# unit suite ------------------------------------------------------------------
def check_partition_of_unity(rng, samples: int) -> float:
    r = 10.0 ** rng.uniform(-3, 3, samples)
    return float(np.max(np.abs(partition_sum(r, 14) - 1.0)))


def check_almost_orthogonality(rng, grid: TorusGrid, fields: int) -> float:
    qs = block_indices(grid)
    worst = 0.0
    for _ in range(fields):
        f = transform(grid, rng.standard_normal((1,) + grid.shape))
        blocks = {q: block(f, q) for q in qs}
        for p, q in itertools.product(qs, qs):
            if abs(p - q) >= 2:
                worst = max(worst, block(blocks[q], p).norm() / f.norm())
    return worst


def check_leray(rng, grid: TorusGrid, fields: int) -> tuple:
    div_worst, pq_worst = 0.0, 0.0
    for _ in range(fields):
        v = transform(grid, rng.standard_normal((grid.dimension,) + grid.shape))
        pv, qv = leray_project(v)
        div_worst = max(div_worst, divergence(pv).norm() / v.norm())
        pq_worst = max(pq_worst, leray_project(qv)[0].norm() / v.norm())
    return div_worst, pq_worst


def check_kawashima(rng, samples: int, base: ModelParams) -> float:
    """Worst product residual relative to its natural scale ``psi_bar |xi| / eps``."""
    worst = 0.0
    for _ in range(samples):
        xi = rng.standard_normal(2) * 10.0 ** rng.uniform(-2, 2)
        p = base.with_epsilon(10.0 ** rng.uniform(-2, 0))
        scale = p.psi_bar * np.linalg.norm(xi) / p.epsilon
        worst = max(worst, kawashima_product_check(xi, p) / scale)
    return worst


def check_semigroup(base: ModelParams) -> float:
    """Worst relative deviation of the closed-form propagator from ``scipy.linalg.expm``."""
    worst = 0.0
    for eps in (1.0, 0.1, 0.01):
        p = base.with_epsilon(eps)
        for e in range(-2, 7):
            sym = acoustic_symbol_from_norm(2.0**e, p)
            for t in (0.1, 1.0, 10.0):
                ref = expm(t * sym.matrix())
                got = propagator(sym, t)
                worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    return float(worst)


def check_decay_slope(base: ModelParams) -> float:
    """Worst distance of the fitted ``log ||e^{tA}||`` slope from ``-1/2``."""
    worst = 0.0
    ts = np.linspace(5, 60, 400)
    for eps in (1.0, 0.1, 0.01):
        sym = acoustic_symbol_from_norm(2.0, base.with_epsilon(eps))
        norms = [np.linalg.norm(propagator(sym, t), 2) for t in ts]
        worst = max(worst, abs(np.polyfit(ts, np.log(norms), 1)[0] + 0.5))
    return float(worst)


def check_energy_equivalence(rng, grid: TorusGrid, base: ModelParams, states: int) -> float:
    """Smallest ``C*`` with ``Q / ||.||_{B^sigma_{2,1}}`` in ``[1/C*, C*]``."""
    ratios = []
    for eps in (1.0, 0.1, 0.01):
        p = base.with_epsilon(eps)
        for _ in range(states):
            s = random_state(rng, grid)
            ratios.append(energy_Q(s, p) / besov_sigma(s))
    return float(max(max(ratios), 1.0 / min(ratios)))


def check_degenerate_coupling(rng, grid: TorusGrid) -> float:
    """Largest Poisson correction when ``gamma = 3``, ``A = 1/3`` (where ``H`` vanishes)."""
    p = ModelParams(3.0, 1.0 / 3.0, 1.0, 0.1)
    worst = 0.0
    for _ in range(5):
        s = random_state(rng, grid, 0.1)
        worst = max(worst, float(np.max(np.abs(poisson_correction(s, p).coefficients))))
    return worst


def unit_suite(config: RunConfig, art: Artifacts, jobs: int) -> list:
    rng = np.random.default_rng(config.seed)
    u = config.section("unit")
    grid, base = config.grid, config.model
    div_worst, pq_worst = check_leray(rng, grid, u["fields"])
    rows = [
        ("partition_of_unity", check_partition_of_unity(rng, u["frequencies"]), 1e-12),
        ("almost_orthogonality", check_almost_orthogonality(rng, grid, u["fields"]), 1e-12),
        ("leray_divergence", div_worst, 1e-13),
        ("leray_PQ", pq_worst, 1e-13),
        ("kawashima_identity", check_kawashima(rng, max(1, u["frequencies"] // 10), base), 1e-13),
        ("semigroup_vs_expm", check_semigroup(base), 1e-8),
        ("decay_slope_deviation", check_decay_slope(base), 1e-2),
        ("energy_equivalence_C", check_energy_equivalence(rng, grid, base, u["fields"]), 20.0),
        ("degenerate_coupling", check_degenerate_coupling(rng, grid), 1e-13),
    ]
    checks = [Check(name, bool(value <= limit), float(value), f"<= {limit:g}") for name, value, limit in rows]
    art.write_rows("unit_suite.csv", ["check", "value", "threshold", "passed"],
                   [(c.name, c.value, c.threshold, c.passed) for c in checks])
    return checks


# decay -----------------------------------------------------------------------
def _decay_run(args):
    eps, n01, v0, model, grid, dec = args
    p = model.with_epsilon(eps)
    initial = build_ill_prepared(n01, v0, p, None)
    cfg = SolverConfig(p, grid, dec["dt"], dec["t_end"], record_every=dec["record_every"], keep_states=False)
    return solve(cfg, initial)


def decay(config: RunConfig, art: Artifacts, jobs: int) -> list:
    dec = config.section("decay")
    width = config.section("data")["width"]
    n01, v0 = ill_prepared_data(config.grid, dec["amplitude"], width)
    tasks = [(e, n01, v0, config.model, config.grid, dec) for e in dec["epsilons"]]
    trajectories = _map(_decay_run, tasks, jobs)
    fits = []
    for e, traj in zip(dec["epsilons"], trajectories):
        write_csv(traj, art.path(f"decay/eps_{_label(e)}.csv"))
        fits.append(decay_fit(traj))
    art.write_rows("decay/fits.csv", ["epsilon", "rate", "amplitude", "r2"],
                   [(e, f.rate, f.amplitude, f.r2) for e, f in zip(dec["epsilons"], fits)])
    rates = np.array([f.rate for f in fits])
    spread = float(rates.min() / rates.max()) if np.all(rates < 0) else math.inf
    return [
        Check("decay_rates_negative", bool(np.all(rates < 0)), float(rates.max()), "< 0"),
        Check("decay_rates_uniform", spread <= dec["max_spread"], spread, f"<= {dec['max_spread']:g}"),
        Check("decay_fit_quality", min(f.r2 for f in fits) >= dec["min_r2"], min(f.r2 for f in fits),
              f">= {dec['min_r2']:g}"),
    ]


# dispersive ------------------------------------------------------------------
def _dispersive_point(args):
    j, k, tau, t, params, rtol = args
    value, z = sup_dispersive_integral(j, k, t, tau, params, rtol=rtol)
    return value, z, dispersive_bound(j, k, t, tau, params)


def dispersive_table(params: ModelParams, js, ks, taus, ts, rtol: float = 1e-6, jobs: int = 1) -> list:
    """Rows ``(j, k, tau, t, sup|I|, argmax |z|, bound, ratio)`` over the product grid."""
    keys = list(itertools.product(js, ks, taus, ts))
    results = _map(_dispersive_point, [(j, k, tau, t, params, rtol) for j, k, tau, t in keys], jobs)
    return [(j, k, tau, t, v, z, b, v / b) for (j, k, tau, t), (v, z, b) in zip(keys, results)]


def dispersive_summary(rows: list, js, taus) -> tuple:
    """Per-``j`` fitted constant and spread, and the smallest ``|I(tau)|/|I(4 tau)|`` for ``tau >= 4``."""
    constants = []
    for j in js:
        ratios = [r[7] for r in rows if r[0] == j]
        constants.append((j, max(ratios), max(ratios) / min(ratios)))
    value = {(r[0], r[1], r[2], r[3]): r[4] for r in rows}
    tau_ratios = [value[j, k, tau, t] / value[j, k, 4 * tau, t]
                  for (j, k, tau, t) in value if tau >= 4 and (j, k, 4 * tau, t) in value]
    return constants, (min(tau_ratios) if tau_ratios else math.nan)


def dispersive(config: RunConfig, art: Artifacts, jobs: int) -> list:
    d = config.section("dispersive")
    params = config.model.with_epsilon(d["epsilon"])
    rows = dispersive_table(params, d["j"], d["k"], d["tau"], d["t"], d["rtol"], jobs)
    art.write_rows("dispersive/integrals.csv", ["j", "k", "tau", "t", "sup_abs_I", "argmax_z", "bound", "ratio"], rows)
    constants, tau_ratio = dispersive_summary(rows, d["j"], d["tau"])
    art.write_rows("dispersive/constants.csv", ["j", "C_fit", "spread"], constants)
    checks = [Check(f"dispersive_C_fit_j{j}", spread <= d["max_spread"], spread, f"spread <= {d['max_spread']:g}",
                    f"C_fit = {c:.6g}") for j, c, spread in constants]
    if math.isfinite(tau_ratio):
        checks.append(Check("dispersive_tau_envelope", tau_ratio >= d["min_tau_ratio"], tau_ratio,
                            f">= {d['min_tau_ratio']:g}"))
    return checks


# strichartz ------------------------------------------------------------------
def strichartz(config: RunConfig, art: Artifacts, jobs: int) -> list:
    s = config.section("strichartz")
    m0 = shell_packet(config.grid, s["shell"])
    d0 = SpectralField.zeros(config.grid)
    points = strichartz_scaling(m0, d0, s["epsilons"], config.model, s["t_end"], s["dt"])
    art.write_rows("strichartz/scaling.csv", ["epsilon", "norm", "data_norm", "ratio"],
                   [(p.epsilon, p.norm, p.data_norm, p.ratio) for p in points])
    ratios = [p.ratio for p in points]
    spread = max(ratios) / min(ratios)
    return [Check("strichartz_scaling", spread <= s["max_spread"], spread, f"spread <= {s['max_spread']:g}")]


# limit sweep -----------------------------------------------------------------
def limit_sweep(config: RunConfig, art: Artifacts, jobs: int) -> list:
    data = config.section("data")
    n01, v0 = ill_prepared_data(config.grid, data["amplitude"], data["width"])
    report = run_sweep(n01, v0, list(config.sweep), config.sweep_config(jobs))
    for run in report.runs:
        names = list(run.series)
        art.write_rows(f"limit_sweep/runs/eps_{_label(run.epsilon)}.csv", names,
                       zip(*(run.series[n] for n in names)))
    for p in report.write(art.root / "limit_sweep"):
        art.path(str(p.relative_to(art.root)))
    checks = [Check("sweep_complete", report.complete, float(len(report.failures)), "== 0",
                    "; ".join(f"eps={e}: {msg}" for e, msg in report.failures.items()))]
    pv = report.values("err_Pv")
    fit = report.metrics["err_Pv"].fit
    checks.append(Check("err_Pv_decreasing", bool(np.all(np.diff(pv) < 0)), None, "strictly decreasing"))
    checks.append(Check("err_Pv_slope", fit is not None and fit.slope >= 0.2 and fit.r2 >= 0.9,
                        fit.slope if fit else None, "slope >= 0.2, r2 >= 0.9"))
    for name in ("err_acoustic_Binf", "err_field_Binf"):
        if name in report.metrics:
            vals, f = report.values(name), report.metrics[name].fit
            checks.append(Check(f"{name}_converges", bool(np.all(np.diff(vals) < 0)) and f is not None and f.slope > 0,
                                f.slope if f else None, "decreasing, slope > 0"))
    return checks


# single run ------------------------------------------------------------------
def single_run(config: RunConfig, art: Artifacts, jobs: int) -> list:
    data = config.section("data")
    n01, v0 = ill_prepared_data(config.grid, data["amplitude"], data["width"])
    initial = build_ill_prepared(n01, v0, config.model, None)
    traj = solve(config.solver, initial)
    write_csv(traj, art.path("single_run/trajectory.csv"))
    write_snapshot(traj.final, config.model, art.path("single_run/final.snapshot"))
    mass = traj.column("mass_mean")
    drift = float(np.max(np.abs(mass - mass[0])))
    return [Check("run_completed", True, float(traj.times[-1]), f"t_end = {config.solver.t_end:g}"),
            Check("mass_drift", drift <= 1e-9, drift, "<= 1e-9")]


RUNNERS = {
    Experiment.UNIT_SUITE: unit_suite,
    Experiment.DECAY: decay,
    Experiment.DISPERSIVE: dispersive,
    Experiment.STRICHARTZ: strichartz,
    Experiment.LIMIT_SWEEP: limit_sweep,
    Experiment.SINGLE_RUN: single_run,
}


# manifest --------------------------------------------------------------------
def describe_version() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunOutcome:
    exit_status: int
    checks: list
    files: list
    manifest: Path
    error: Optional[str] = None


def run(config: RunConfig, jobs: Optional[int] = None) -> RunOutcome:
    """Execute the configured experiment and write its artifacts plus ``manifest.json``.

    Exit status is 0 iff the experiment finished and every check passed.
    """
    jobs = resolve_jobs(jobs if jobs is not None else config.jobs)
    art = Artifacts(Path(config.output_dir))
    art.root.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    error = None
    try:
        checks = RUNNERS[config.experiment](config, art, jobs)
    except Exception as exc:  # any failure is reported through the manifest
        error = f"{type(exc).__name__}: {exc}"
        checks = [Check("experiment_completed", False, detail=error)]
        traceback.print_exc()
    wall = time.perf_counter() - start
    passed = error is None and all(c.passed for c in checks)
    written = [p for p in art.files if p.exists()]
    manifest = {
        "experiment": config.experiment.value,
        "version": describe_version(),
        "config": config.echo(),
        "jobs": jobs,
        "wall_time_s": wall,
        "passed": passed,
        "error": error,
        "checks": [asdict(c) for c in checks],
        "files": [{"path": str(p.relative_to(art.root)), "sha256": sha256(p), "bytes": p.stat().st_size}
                  for p in written],
    }
    path = art.root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, allow_nan=True) + "\n")
    return RunOutcome(0 if passed else 1, checks, written, path, error)
