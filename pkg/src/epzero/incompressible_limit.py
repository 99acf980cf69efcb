"""Damped incompressible Euler limit and the epsilon-sweep convergence harness."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import linregress
from scipy.stats import t as student_t

from .acoustic_semigroup import acoustic_trajectory, split_velocity, strichartz_norm
from .errors import ConfigurationError, DomainError, PreconditionError, SolverAbort
from .euler_poisson_solver import SolverConfig, solve
from .littlewood_paley import BesovParams, besov_norm
from .plasma_model import ModelParams, ScaledState, build_ill_prepared
from .spectral_core import (
    SpectralField,
    TorusGrid,
    dealias,
    divergence,
    inverse,
    jacobian,
    leray_project,
    transform,
)

DIV_TOL = 1e-12


@dataclass(frozen=True)
class LimitState:
    """Divergence-free velocity of the limit system at one time."""

    u: SpectralField
    time: float = 0.0

    def __post_init__(self):
        if self.u.components != self.u.grid.dimension:
            raise ConfigurationError("u must be an N-component field")
        div = divergence(self.u).norm()
        if div > DIV_TOL * max(self.u.norm(), np.finfo(float).tiny) and div > 1e-300:
            raise PreconditionError(f"u is not divergence-free (|div u| = {div:.3g})")


def projected_advection(u: SpectralField, dealias_products: bool = True) -> SpectralField:
    """``-P(u . grad u)`` with the product taken on grid samples."""
    grid = u.grid
    u_phys = inverse(u)
    jac = np.fft.ifftn(jacobian(u), axes=tuple(range(2, grid.dimension + 2)), norm="forward").real
    adv = transform(grid, np.einsum("j...,ij...->i...", u_phys, jac))
    if dealias_products:
        adv = dealias(adv)
    return -leray_project(adv)[0]


def limit_solve(u0: SpectralField, dt: float, t_end: float, advection: bool = True,
                record_every: int = 1, dealias_products: bool = True,
                smallness: Optional[float] = None) -> list:
    """Integrate ``u_t + P(u . grad u) + u = 0``.

    The damping is integrated exactly (factor ``e^{-t}``) and the projected
    advection by Heun's method; the result is re-projected every step.
    Returns the recorded :class:`LimitState` list (first and last included).
    """
    if not (dt > 0 and t_end > 0):
        raise DomainError("dt and t_end must be positive")
    state = LimitState(u0, 0.0)
    if smallness is not None:
        size = besov_norm(u0, BesovParams(s=1 + u0.grid.dimension / 2))
        if size > smallness:
            raise PreconditionError(f"initial velocity norm {size:.4g} exceeds smallness {smallness:g}")
    out = [state]
    n = max(1, math.ceil(t_end / dt - 1e-9))
    u = u0
    for i in range(1, n + 1):
        h = min(i * dt, t_end) - (i - 1) * dt
        decay = math.exp(-h)
        if advection:
            k1 = projected_advection(u, dealias_products)
            pred = (u + k1 * h) * decay
            k2 = projected_advection(pred, dealias_products)
            u = u * decay + (k1 * decay + k2) * (h / 2)
            u = leray_project(u)[0]
        else:
            u = u * decay
        if i % record_every == 0 or i == n:
            out.append(LimitState(u, min(i * dt, t_end)))
    return out


# rate fits ---------------------------------------------------------------------
@dataclass(frozen=True)
class RateFit:
    """Least-squares line through ``(log eps, log err)`` with a 95% slope interval."""

    slope: float
    intercept: float
    r2: float
    slope_interval: tuple

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "slope_interval": list(self.slope_interval)}


def rate_fit(pairs: Sequence) -> RateFit:
    """Fit ``log(err) = slope * log(eps) + intercept`` over ``(eps, err)`` pairs."""
    pairs = [(float(a), float(b)) for a, b in pairs]
    if len(pairs) < 3:
        raise PreconditionError(f"rate fit needs at least 3 pairs (got {len(pairs)})")
    eps, err = np.array(pairs).T
    if np.any(eps <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise DomainError("rate fit needs positive, finite values")
    fit = linregress(np.log(eps), np.log(err))
    half = float(student_t.ppf(0.975, len(pairs) - 2) * fit.stderr) if len(pairs) > 2 else math.inf
    return RateFit(float(fit.slope), float(fit.intercept), float(fit.rvalue**2),
                   (float(fit.slope) - half, float(fit.slope) + half))


# sweep -----------------------------------------------------------------------------
@dataclass(frozen=True)
class SweepConfig:
    """Controls shared by every run of an epsilon sweep.

    Each run uses ``dt = min(dt_max, dt_per_epsilon * eps)`` rounded down so
    that it divides ``record_interval``; all runs and the limit solve are
    sampled on the same schedule.
    """

    grid: TorusGrid
    gamma: float = 2.0
    A: float = 1.0
    n_bar: float = 1.0
    t_end: float = 4.0
    record_interval: float = 0.05
    dt_max: float = 0.05
    dt_per_epsilon: float = 0.05
    limit_dt: float = 0.005
    besov_p: tuple = (2.0, math.inf)
    delta0: Optional[float] = 0.05
    jobs: int = 1

    def __post_init__(self):
        problems = []
        for name in ("t_end", "record_interval", "dt_max", "dt_per_epsilon", "limit_dt"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.dt_max > 0.1:
            problems.append("dt_max must be <= 0.1")
        if any(not (p >= 2) for p in self.besov_p):
            problems.append("besov_p entries must lie in [2, inf]")
        if int(self.jobs) != self.jobs or self.jobs < 1:
            problems.append("jobs must be a positive integer")
        if problems:
            raise ConfigurationError(problems)
        try:
            ModelParams(self.gamma, self.A, self.n_bar, 1.0)
        except ConfigurationError as exc:
            raise ConfigurationError(exc.problems) from None

    def params(self, epsilon: float) -> ModelParams:
        return ModelParams(self.gamma, self.A, self.n_bar, epsilon)

    def steps_per_record(self, dt_target: float) -> int:
        return max(1, math.ceil(self.record_interval / dt_target - 1e-9))

    def run_dt(self, epsilon: float) -> float:
        target = min(self.dt_max, self.dt_per_epsilon * epsilon)
        return self.record_interval / self.steps_per_record(target)

    @property
    def record_times(self) -> np.ndarray:
        n = int(round(self.t_end / self.record_interval))
        if not math.isclose(n * self.record_interval, self.t_end, rel_tol=1e-9):
            raise ConfigurationError("t_end must be a multiple of record_interval")
        return self.record_interval * np.arange(n + 1)


def _p_label(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def metric_names(besov_p: Sequence[float]) -> list:
    names = ["err_Pv"]
    for p in besov_p:
        lab = _p_label(p)
        names += [f"err_Pv_B{lab}", f"err_acoustic_B{lab}", f"err_field_B{lab}"]
    return names


def _besov_critical(fields, p: float) -> float:
    """Norm in ``B^{N/p}_{p,1}``."""
    grid = fields[0].grid
    return besov_norm(fields, BesovParams(s=grid.dimension / p if not math.isinf(p) else 0.0, p=p, r=1))


@dataclass
class RunResult:
    epsilon: float
    values: dict
    series: dict
    error: Optional[str] = None


def _run_one(args) -> RunResult:
    """One compressible run, compared on the record schedule with the limit velocity."""
    epsilon, n01, v0, cfg, limit_u = args
    params = cfg.params(epsilon)
    times = cfg.record_times
    dt = cfg.run_dt(epsilon)
    per_record = int(round(cfg.record_interval / dt))
    series = {"t": [], "L2_Pv_err": []}
    for p in cfg.besov_p:
        lab = _p_label(p)
        for key in ("Pv", "acoustic", "field"):
            series[f"{key}_B{lab}"] = []

    def observe(state: ScaledState, diag):
        k = len(series["t"])
        pv, qv = leray_project(state.v)
        diff = pv - limit_u[k]
        series["t"].append(state.time)
        series["L2_Pv_err"].append(diff.norm())
        for p in cfg.besov_p:
            lab = _p_label(p)
            series[f"Pv_B{lab}"].append(_besov_critical([diff], p))
            series[f"acoustic_B{lab}"].append(_besov_critical([state.m, qv], p))
            series[f"field_B{lab}"].append(_besov_critical([state.grad_phi], p))

    try:
        initial = build_ill_prepared(n01, v0, params, cfg.delta0)
        config = SolverConfig(params, cfg.grid, dt, float(times[-1]), record_every=per_record,
                              keep_states=False)
        solve(config, initial, observer=observe)
    except (SolverAbort, PreconditionError, DomainError) as exc:
        return RunResult(epsilon, {}, series, f"{type(exc).__name__}: {exc}")
    t = np.array(series["t"])
    if len(t) != len(times) or not np.allclose(t, times, atol=1e-9):
        return RunResult(epsilon, {}, series, "record schedule mismatch")
    values = {"err_Pv": float(np.max(series["L2_Pv_err"]))}
    for p in cfg.besov_p:
        lab = _p_label(p)
        values[f"err_Pv_B{lab}"] = float(trapezoid(series[f"Pv_B{lab}"], t))
        values[f"err_acoustic_B{lab}"] = float(trapezoid(series[f"acoustic_B{lab}"], t))
        values[f"err_field_B{lab}"] = float(trapezoid(series[f"field_B{lab}"], t))
    return RunResult(epsilon, values, {k: list(map(float, v)) for k, v in series.items()})


@dataclass
class MetricSeries:
    values: list
    fit: Optional[RateFit] = None

    def to_dict(self) -> dict:
        out = {"values": self.values}
        if self.fit is not None:
            out.update(self.fit.to_dict())
        else:
            out.update({"slope": None, "intercept": None, "r2": None})
        return out


@dataclass
class ConvergenceReport:
    """Per-epsilon error metrics and their fitted log-log slopes."""

    epsilons: list
    metrics: dict
    failures: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.failures

    def values(self, name: str) -> np.ndarray:
        return np.array(self.metrics[name].values, dtype=float)

    def to_dict(self) -> dict:
        return {"epsilons": self.epsilons,
                "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
                "complete": self.complete,
                "failures": {str(k): v for k, v in self.failures.items()}}

    def write(self, directory) -> list:
        """Write ``report.json`` plus one CSV per metric; returns the paths."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2, allow_nan=True) + "\n")
        for name, series in self.metrics.items():
            path = out / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epsilon", name])
                for e, v in zip(self.epsilons, series.values):
                    writer.writerow([repr(float(e)), repr(float(v))])
            paths.append(path)
        return paths


def check_epsilon_list(epsilons: Sequence[float]) -> list:
    eps = [float(e) for e in epsilons]
    problems = []
    if not eps:
        problems.append("epsilon list is empty")
    if any(not (0 < e <= 1) for e in eps):
        problems.append("epsilon values must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        problems.append("epsilon list must be strictly decreasing")
    if problems:
        raise ConfigurationError(problems)
    return eps


def run_sweep(n01: SpectralField, v0: SpectralField, epsilons: Sequence[float], config: SweepConfig,
              limit: Optional[list] = None) -> ConvergenceReport:
    """Run the ill-prepared family for every epsilon against the limit flow from ``P v0``.

    Runs are independent; with ``config.jobs > 1`` they execute in worker
    processes.  Results are assembled in epsilon order, so the report does
    not depend on scheduling.  A failed run leaves NaN values and marks the
    report incomplete; slopes are fitted over the successful runs (at least 3).
    """
    eps = check_epsilon_list(epsilons)
    times = config.record_times
    if limit is None:
        u0 = leray_project(v0)[0]
        per = config.steps_per_record(config.limit_dt)
        limit = limit_solve(u0, config.record_interval / per, float(times[-1]), record_every=per)
    limit_u = [s.u for s in limit]
    if len(limit_u) != len(times):
        raise ConfigurationError("limit trajectory does not match the record schedule")
    tasks = [(e, n01, v0, config, limit_u) for e in eps]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(tasks))) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    names = metric_names(config.besov_p)
    failures = {r.epsilon: r.error for r in results if r.error}
    metrics = {}
    for name in names:
        vals = [r.values.get(name, math.nan) for r in results]
        ok = [(e, v) for e, v in zip(eps, vals) if math.isfinite(v) and v > 0]
        fit = rate_fit(ok) if len(ok) >= 3 else None
        metrics[name] = MetricSeries([float(v) for v in vals], fit)
    return ConvergenceReport(eps, metrics, failures, results)


def resolve_jobs(requested: Optional[int] = None) -> int:
    """``requested`` if given, else ``EPZERO_JOBS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("EPZERO_JOBS")
    return max(1, int(env)) if env else 1


# Strichartz scaling ------------------------------------------------------------------
@dataclass(frozen=True)
class StrichartzPoint:
    epsilon: float
    norm: float
    data_norm: float

    @property
    def ratio(self) -> float:
        """``||U||_{L^1_t L^inf} / (eps^{1/4} ||U_0||_{L^2})``."""
        return self.norm / (self.epsilon**0.25 * self.data_norm)


def strichartz_scaling(m0: SpectralField, d0: SpectralField, epsilons: Sequence[float], base: ModelParams,
                       t_end: float, dt: float, p: float = math.inf) -> list:
    """Mixed space-time norm of the linear acoustic flow of ``(m0, d0)`` for each epsilon.

    The trajectory is the exact semigroup sampled every ``dt``; the time
    integral is the trapezoidal rule.
    """
    n = int(round(t_end / dt))
    times = dt * np.arange(n + 1)
    data_norm = math.sqrt(m0.norm() ** 2 + d0.norm() ** 2)
    out = []
    for e in check_epsilon_list(epsilons):
        traj = acoustic_trajectory(m0, d0, times, base.with_epsilon(e))
        out.append(StrichartzPoint(e, strichartz_norm(traj, dt, p), data_norm))
    return out


def acoustic_pair(state: ScaledState) -> tuple:
    """``(m, d)`` with ``d = Lambda^{-1} div Qv`` for a scaled state."""
    grid = state.grid
    r = grid.xi_norm
    unit = np.where(r > 0, grid.xi / np.where(r > 0, r, 1.0), 0.0)
    _, d = split_velocity(state.v.coefficients, unit)
    return state.m, SpectralField(grid, d)
