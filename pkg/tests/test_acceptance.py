"""Acceptance gate: every criterion at its stated tolerance, one PASS/FAIL line each.

Default resolution is N = 2, M = 128 on the default torus side.  Worker
processes for the heavier sweeps follow ``EPZERO_JOBS``.
"""

import itertools
import math
import time

import numpy as np
import pytest

from epzero.acoustic_semigroup import acoustic_symbol_from_norm, apply_linear_propagator, propagator
from epzero.euler_poisson_solver import SolverConfig, besov_sigma, decay_fit, energy_Q, solve
from epzero.experiments import dispersive_summary, dispersive_table, ill_prepared_data, random_field, random_state, shell_packet
from epzero.incompressible_limit import SweepConfig, resolve_jobs, run_sweep, strichartz_scaling
from epzero.littlewood_paley import block, block_indices, partition_sum
from epzero.plasma_model import (
    H,
    ModelParams,
    ScaledState,
    build_ill_prepared,
    kawashima_product_check,
    poisson_correction,
    poisson_field,
)
from epzero.spectral_core import SpectralField, TorusGrid, divergence, leray_project, transform
from gate import record
from oracles import taylor_expm_stepped

pytestmark = pytest.mark.acceptance

GRID = TorusGrid(2, 128)
BASE = ModelParams(2.0, 1.0, 1.0, 0.1)


def rel_dev(a, b):
    num = math.sqrt((a.m - b.m).norm() ** 2 + (a.v - b.v).norm() ** 2)
    return num / math.sqrt(b.m.norm() ** 2 + b.v.norm() ** 2)


def test_criterion_01_partition_of_unity():
    rng = np.random.default_rng(101)
    xi = rng.standard_normal((10_000, 2)) * 10.0 ** rng.uniform(-3, 3, (10_000, 1))
    err = float(np.max(np.abs(partition_sum(np.linalg.norm(xi, axis=1), 14) - 1.0)))
    assert record(1, "partition of unity", err <= 1e-12, f"max |sum - 1| = {err:.2e} (<= 1e-12)")


def test_criterion_02_almost_orthogonality():
    rng = np.random.default_rng(102)
    qs = block_indices(GRID)
    worst = 0.0
    for _ in range(20):
        f = transform(GRID, rng.standard_normal((1,) + GRID.shape))
        blocks = {q: block(f, q) for q in qs}
        for p, q in itertools.product(qs, qs):
            if abs(p - q) >= 2:
                worst = max(worst, block(blocks[q], p).norm() / f.norm())
    assert record(2, "almost orthogonality", worst <= 1e-12,
                  f"max ||D_p D_q f||/||f|| = {worst:.2e} over {len(qs)} blocks (<= 1e-12)")


def test_criterion_03_leray_projection():
    rng = np.random.default_rng(103)
    div_worst = pq_worst = 0.0
    for _ in range(100):
        v = transform(GRID, rng.standard_normal((2,) + GRID.shape))
        pv, qv = leray_project(v)
        div_worst = max(div_worst, divergence(pv).norm() / v.norm())
        pq_worst = max(pq_worst, leray_project(qv)[0].norm() / v.norm())
    ok = div_worst <= 1e-13 and pq_worst <= 1e-13
    assert record(3, "Leray projection", ok, f"||div Pv||/||v|| = {div_worst:.2e}, ||PQv||/||v|| = {pq_worst:.2e} (<= 1e-13)")


def test_criterion_04_kawashima_identity():
    # residual measured relative to the size psi_bar |xi| / eps of the product
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(1000):
        xi = rng.standard_normal(2)
        p = BASE.with_epsilon(10.0 ** rng.uniform(-2, 0))
        worst = max(worst, kawashima_product_check(xi, p) / (p.psi_bar * np.linalg.norm(xi) / p.epsilon))
    assert record(4, "Kawashima identity", worst <= 1e-13, f"max relative residual = {worst:.2e} (<= 1e-13)")


def test_criterion_05_semigroup_exactness():
    start = time.perf_counter()
    worst = 0.0
    for eps in (1.0, 0.1, 0.01):
        p = BASE.with_epsilon(eps)
        for e in range(-2, 7):
            sym = acoustic_symbol_from_norm(2.0**e, p)
            for t in (0.1, 1.0, 10.0):
                ref = taylor_expm_stepped(sym.matrix(), t)
                worst = max(worst, np.linalg.norm(propagator(sym, t) - ref) / np.linalg.norm(ref))
    slopes = []
    ts = np.linspace(5, 60, 400)
    for eps in (1.0, 0.1, 0.01):
        sym = acoustic_symbol_from_norm(2.0, BASE.with_epsilon(eps))
        slopes.append(np.polyfit(ts, np.log([np.linalg.norm(propagator(sym, t), 2) for t in ts]), 1)[0])
    slope_err = max(abs(s + 0.5) for s in slopes)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and slope_err <= 0.01 and elapsed < 30
    assert record(5, "semigroup exactness", ok,
                  f"max rel error = {worst:.2e} (<= 1e-8), decay slopes {', '.join(f'{s:.4f}' for s in slopes)} "
                  f"(-0.5 +- 0.01), {elapsed:.1f} s")


def test_criterion_06_07_linear_regime_order_and_mass():
    start = time.perf_counter()
    devs = {}
    for eps, dt in ((0.1, 0.02), (0.01, 0.01)):
        p = BASE.with_epsilon(eps)
        n01, v0 = ill_prepared_data(GRID, 1e-6, 4.0)
        s0 = ScaledState(n01, v0, poisson_field(n01, p)[0])
        traj = solve(SolverConfig(p, GRID, dt, 5.0, record_every=int(round(0.5 / dt))), s0)
        devs[eps] = max(rel_dev(s, apply_linear_propagator(s0, s.time, p)) for s in traj.states)
    dev_ok = max(devs.values()) <= 1e-7

    p = BASE
    n01, v0 = ill_prepared_data(GRID, 0.02, 4.0)
    s0 = build_ill_prepared(n01, v0, p)
    finals = [solve(SolverConfig(p, GRID, dt, 1.0, record_every=10**6), s0).final for dt in (0.04, 0.02, 0.01)]
    e = [math.sqrt(sum((a - b).norm() ** 2 for a, b in zip(x.fields(), y.fields())))
         for x, y in zip(finals, finals[1:])]
    order = math.log2(e[0] / e[1])
    order_ok = abs(order - 2.0) <= 0.2
    elapsed = time.perf_counter() - start
    record(6, "linear-regime oracle and order", dev_ok and order_ok and elapsed < 120,
           "max rel deviation " + ", ".join(f"eps={k:g}: {v:.2e}" for k, v in devs.items())
           + f" (<= 1e-7), order {order:.3f} (2 +- 0.2), {elapsed:.0f} s")

    traj = solve(SolverConfig(p, GRID, 0.01, 10.0, record_every=100, keep_states=False), s0)
    mass = traj.column("mass_mean")
    drift = float(np.max(np.abs(mass - mass[0])))
    record(7, "mass conservation", drift <= 1e-9, f"drift of mean(n - n_bar) over 10 time units = {drift:.2e} (<= 1e-9)")
    assert dev_ok and order_ok and elapsed < 120 and drift <= 1e-9


def test_criterion_08_uniform_decay():
    start = time.perf_counter()
    n01, v0 = ill_prepared_data(GRID, 0.02, 4.0)
    fits = []
    for eps in (1.0, 0.1, 0.01):
        p = BASE.with_epsilon(eps)
        traj = solve(SolverConfig(p, GRID, 0.02, 20.0, record_every=10, keep_states=False),
                     build_ill_prepared(n01, v0, p))
        fits.append(decay_fit(traj))
    rates = [f.rate for f in fits]
    spread = min(rates) / max(rates) if max(rates) < 0 else math.inf
    r2 = min(f.r2 for f in fits)
    elapsed = time.perf_counter() - start
    ok = all(r < 0 for r in rates) and spread <= 3 and r2 >= 0.95 and elapsed < 600
    assert record(8, "uniform exponential decay", ok,
                  f"rates {', '.join(f'{r:.4f}' for r in rates)} (all < 0, spread {spread:.3f} <= 3), "
                  f"min r2 {r2:.5f} (>= 0.95), {elapsed:.0f} s")


def test_criterion_09_energy_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(109)
    ratios = []
    for eps in (1.0, 0.1, 0.01):
        p = BASE.with_epsilon(eps)
        for _ in range(50):
            # random spectral extent and unequal weights of m, v, grad phi
            f = random_field(rng, GRID, 5, band=int(rng.integers(2, 41))).coefficients
            w = 10.0 ** rng.uniform(-3, -1, 3)
            s = ScaledState(SpectralField(GRID, w[0] * f[:1]), SpectralField(GRID, w[1] * f[1:3]),
                            SpectralField(GRID, w[2] * f[3:]))
            ratios.append(energy_Q(s, p) / besov_sigma(s))
    c_star = max(max(ratios), 1 / min(ratios))
    elapsed = time.perf_counter() - start
    assert record(9, "energy equivalence", c_star <= 20 and elapsed < 60,
                  f"Q/||.|| in [{min(ratios):.3f}, {max(ratios):.3f}], C* = {c_star:.3f} (<= 20), {elapsed:.0f} s")


def test_criterion_10_dispersive_bound():
    start = time.perf_counter()
    js, taus = [1, 2, 3, 4, 5], [1.0, 4.0, 16.0, 64.0]
    rows = dispersive_table(BASE, js, [0, 1, 2], taus, [0.0, 1.0, 2.0], jobs=resolve_jobs())
    constants, tau_ratio = dispersive_summary(rows, js, taus)
    elapsed = time.perf_counter() - start
    spreads_ok = all(spread <= 3 for _, _, spread in constants)
    ok = spreads_ok and tau_ratio >= 1.4 and elapsed < 900
    assert record(10, "dispersive bound", ok,
                  "C_fit/spread per j " + ", ".join(f"j={j}: {c:.3g}/{s:.2f}" for j, c, s in constants)
                  + f" (spread <= 3), min |I(tau)|/|I(4 tau)| = {tau_ratio:.3f} (>= 1.4), {elapsed:.0f} s")


def test_criterion_11_strichartz_scaling():
    start = time.perf_counter()
    m0 = shell_packet(GRID, 0)
    points = strichartz_scaling(m0, SpectralField.zeros(GRID), [0.1, 0.05, 0.025, 0.0125], BASE, 20.0, 0.002)
    ratios = [pt.ratio for pt in points]
    spread = max(ratios) / min(ratios)
    elapsed = time.perf_counter() - start
    assert record(11, "Strichartz eps-scaling", spread <= 2 and elapsed < 300,
                  f"ratios {', '.join(f'{r:.2f}' for r in ratios)}, spread {spread:.3f} (<= 2), {elapsed:.0f} s")


def test_criterion_12_zero_electron_mass_limit():
    start = time.perf_counter()
    n01, v0 = ill_prepared_data(GRID, 0.02, 4.0)
    cfg = SweepConfig(GRID, t_end=4.0, record_interval=0.05, jobs=resolve_jobs())
    report = run_sweep(n01, v0, [0.2, 0.1, 0.05, 0.025], cfg)
    pv, fit = report.values("err_Pv"), report.metrics["err_Pv"].fit
    ok = report.complete and bool(np.all(np.diff(pv) < 0)) and fit.slope >= 0.2 and fit.r2 >= 0.9
    details = [f"sup ||Pv - u|| {', '.join(f'{x:.3e}' for x in pv)} slope {fit.slope:.3f} r2 {fit.r2:.3f}"]
    for name in ("err_acoustic_Binf", "err_field_Binf"):
        vals, f = report.values(name), report.metrics[name].fit
        ok = ok and bool(np.all(np.diff(vals) < 0)) and f.slope > 0
        details.append(f"{name} slope {f.slope:.3f}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 1200
    assert record(12, "zero-electron-mass convergence", ok, "; ".join(details) + f", {elapsed:.0f} s")


def test_criterion_13_degenerate_coupling():
    start = time.perf_counter()
    p = ModelParams(3.0, 1.0 / 3.0, 1.0, 0.1)
    rng = np.random.default_rng(113)
    worst = float(np.max(np.abs(H(np.linspace(-0.5, 0.5, 1001), p))))
    for _ in range(10):
        worst = max(worst, float(np.max(np.abs(poisson_correction(random_state(rng, GRID, 0.1), p).coefficients))))
    n01, v0 = ill_prepared_data(GRID, 0.02, 4.0)
    seen = []
    solve(SolverConfig(p, GRID, 0.05, 2.0, record_every=4, keep_states=False), build_ill_prepared(n01, v0, p),
          observer=lambda state, diag: seen.append(float(np.max(np.abs(poisson_correction(state, p).coefficients)))))
    worst = max(worst, max(seen))
    elapsed = time.perf_counter() - start
    assert record(13, "degenerate coupling", worst <= 1e-13 and elapsed < 60,
                  f"max |Poisson correction| = {worst:.2e} (<= 1e-13), {elapsed:.0f} s")
