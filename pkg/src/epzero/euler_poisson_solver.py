"""Nonlinear time integration of the scaled Euler-Poisson system and its diagnostics."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np
from scipy.stats import linregress

from .acoustic_semigroup import ETDPropagator, etd_step
from .errors import ConfigurationError, DomainError, PreconditionError, SolverAbort, StepRejected
from .littlewood_paley import BesovParams, besov_norm, block, block_indices
from .plasma_model import (
    ModelParams,
    ScaledState,
    check_state,
    domain_margin,
    h,
    poisson_field,
    source_terms,
)
from .spectral_core import SpectralField, TorusGrid, divergence, inverse, leray_project, transform

MAX_DT = 0.1


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping controls for :func:`solve`.

    ``dt`` must resolve the unit damping time; the acoustic scale needs no
    restriction because the linear part is propagated exactly.
    """

    params: ModelParams
    grid: TorusGrid
    dt: float
    t_end: float
    dealias: bool = True
    poisson_tol: float = 1e-10
    record_every: int = 1
    vacuum_fraction: float = 0.25
    energy_C: float = 5.0
    keep_states: bool = True

    def __post_init__(self):
        problems = []
        if not (self.dt > 0):
            problems.append("dt must be positive")
        elif self.dt > MAX_DT:
            problems.append(f"dt must be <= {MAX_DT} to resolve the damping scale")
        if not (self.t_end > 0):
            problems.append("t_end must be positive")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            problems.append("record_every must be a positive integer")
        if not (0 < self.vacuum_fraction < 1):
            problems.append("vacuum_fraction must lie in (0, 1)")
        if not (self.poisson_tol > 0):
            problems.append("poisson_tol must be positive")
        if not (self.energy_C > 0):
            problems.append("energy_C must be positive")
        if problems:
            raise ConfigurationError(problems)

    @property
    def steps(self) -> int:
        return max(1, math.ceil(self.t_end / self.dt - 1e-9))


@dataclass(frozen=True)
class Diagnostics:
    """Per-snapshot scalar diagnostics (also the CSV row)."""

    t: float
    mass_mean: float
    L2_m: float
    L2_Pv: float
    L2_Qv: float
    L2_gradphi: float
    besov_sigma: float
    Q_energy: float
    poisson_mean: float = 0.0


CSV_COLUMNS = ("t", "mass_mean", "L2_m", "L2_Pv", "L2_Qv", "L2_gradphi", "besov_sigma", "Q_energy")


@dataclass
class Trajectory:
    """Recorded snapshots of one run, in strictly increasing time."""

    config: SolverConfig
    diagnostics: list = field(default_factory=list)
    states: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([d.t for d in self.diagnostics])

    def column(self, name: str) -> np.ndarray:
        if name not in {f.name for f in fields(Diagnostics)}:
            raise KeyError(f"unknown diagnostic {name!r}")
        return np.array([getattr(d, name) for d in self.diagnostics])

    @property
    def final(self) -> ScaledState:
        if not self.states:
            raise IndexError("trajectory holds no states (keep_states disabled)")
        return self.states[-1]

    def __len__(self):
        return len(self.diagnostics)


# diagnostics ------------------------------------------------------------------
def sigma_index(grid: TorusGrid) -> float:
    """Regularity index ``1 + N/2`` of the energy space."""
    return 1.0 + grid.dimension / 2.0


def mass_mean(state: ScaledState, params: ModelParams) -> float:
    """Spatial mean of the density perturbation ``n - n_bar = h(eps m)``."""
    return float(np.mean(h(params.epsilon * inverse(state.m)[0], params)))


@dataclass(frozen=True)
class EnergyConstants:
    """Weights of the Lyapunov functional.

    ``K1, K2`` weight the high blocks, ``K1_low, K2_low, K3_low`` the lowest
    block; ``K3`` only enters the dissipation estimate and is kept for the
    coupling relation.
    """

    K1: float
    K2: float
    K3: float
    K1_low: float
    K2_low: float
    K3_low: float

    @classmethod
    def from_coupling(cls, params: ModelParams, C: float = 5.0, K1: float = 1.0,
                      K1_low: float = 1.0) -> "EnergyConstants":
        """Constants tied by ``K2 = K1/(4C)`` and ``K3 = A gamma psi_bar/(4 C^2 n_bar^(3-gamma)) K2``."""
        factor = params.A * params.gamma * params.psi_bar / (4 * C**2 * params.n_bar ** (3 - params.gamma))
        K2, K2_low = K1 / (4 * C), K1_low / (4 * C)
        return cls(K1, K2, factor * K2, K1_low, K2_low, factor * K2_low)

    def satisfies_coupling(self, params: ModelParams, C: float, rtol: float = 1e-12) -> bool:
        ref = EnergyConstants.from_coupling(params, C, self.K1, self.K1_low)
        return all(math.isclose(getattr(self, k), getattr(ref, k), rel_tol=rtol, abs_tol=0)
                   for k in ("K2", "K3", "K2_low", "K3_low"))


def _cross_term(mq: np.ndarray, vq: np.ndarray, xi: np.ndarray) -> float:
    """``Im sum |xi| W^* K(xi) W`` over modes, which equals ``2 Im sum conj(m) xi.v``."""
    return float(2.0 * np.sum(np.imag(np.conj(mq) * np.sum(xi * vq, axis=0))))


def energy_Q(state: ScaledState, params: ModelParams, constants: Optional[EnergyConstants] = None,
             C: float = 5.0) -> float:
    """Block sum of square-rooted weighted energies plus compensating cross terms.

    Raises ConfigurationError if a block's bracketed quantity is negative.
    """
    k = constants if constants is not None else EnergyConstants.from_coupling(params, C)
    grid = state.grid
    xi = grid.xi
    eps, nbar = params.epsilon, params.n_bar
    sigma = sigma_index(grid)
    total = 0.0
    for q in block_indices(grid):
        mq = block(state.m, q).coefficients[0]
        vq = block(state.v, q).coefficients
        gq = block(state.grad_phi, q).coefficients
        l2 = (np.sum(np.abs(mq) ** 2) + np.sum(np.abs(vq) ** 2) + np.sum(np.abs(gq) ** 2) / nbar)
        cross = _cross_term(mq, vq, xi)
        if q >= 0:
            bracket = k.K1 / 2 * 4.0**q * l2 + k.K2 * eps / 2 * cross
            weight = 2.0 ** (q * (sigma - 1))
        else:
            coupling = float(np.real(np.sum(gq * np.conj(vq))))
            bracket = k.K1_low / 2 * 0.25 * l2 + k.K2_low * eps / 2 * cross - k.K3_low * eps * coupling
            weight = 1.0
        if bracket < 0:
            scale = max(abs(l2), np.finfo(float).tiny)
            if bracket < -1e-14 * scale:
                raise ConfigurationError(
                    f"energy block q={q} is negative ({bracket:.3g}); constants violate positivity")
            bracket = 0.0
        total += weight * math.sqrt(bracket)
    return total


def besov_sigma(state: ScaledState) -> float:
    return besov_norm(state.fields(), BesovParams(s=sigma_index(state.grid), p=2, r=1))


def diagnose(state: ScaledState, params: ModelParams, C: float = 5.0, poisson_mean: float = 0.0) -> Diagnostics:
    pv, qv = leray_project(state.v)
    return Diagnostics(
        t=state.time,
        mass_mean=mass_mean(state, params),
        L2_m=state.m.norm(),
        L2_Pv=pv.norm(),
        L2_Qv=qv.norm(),
        L2_gradphi=state.grad_phi.norm(),
        besov_sigma=besov_sigma(state),
        Q_energy=energy_Q(state, params, C=C),
        poisson_mean=poisson_mean,
    )


def continuity_residual(before: ScaledState, after: ScaledState, params: ModelParams) -> float:
    """Relative L2 size of ``div v + (eps div grad phi_t + div(h(eps m) v))/n_bar`` at the midpoint.

    ``grad phi_t`` is a finite difference between the two states, so the
    residual is first order in their time separation.
    """
    dt = after.time - before.time
    if not dt > 0:
        raise DomainError("states must be in increasing time order")
    grid = before.grid
    eps = params.epsilon
    mid_m = (before.m + after.m) * 0.5
    mid_v = (before.v + after.v) * 0.5
    dphi_dt = (after.grad_phi - before.grad_phi) / dt
    flux = transform(grid, h(eps * inverse(mid_m)[0], params)[None] * inverse(mid_v))
    div_v = divergence(mid_v)
    resid = div_v + (divergence(dphi_dt) * eps + divergence(flux)) / params.n_bar
    return resid.norm() / max(div_v.norm(), np.finfo(float).tiny)


# integration ------------------------------------------------------------------
def _check_initial(initial: ScaledState, config: SolverConfig):
    """Initial data built from grid samples satisfy the Poisson relation without
    dealiasing; solver snapshots satisfy the dealiased one.  Either is accepted."""
    try:
        check_state(initial, config.params, config.poisson_tol, config.dealias)
    except PreconditionError as first:
        if not config.dealias:
            raise
        try:
            check_state(initial, config.params, config.poisson_tol, dealias=False)
        except PreconditionError:
            raise first from None


def solve(config: SolverConfig, initial: ScaledState,
          observer: Optional[Callable[[ScaledState, Diagnostics], None]] = None) -> Trajectory:
    """Advance ``initial`` to ``config.t_end`` with exponential RK2 steps.

    After every step the Poisson relation is re-solved with the mean of
    ``h(eps m)/eps`` removed; that mean is recorded in the diagnostics.
    ``observer`` is called on every recorded snapshot.  Vacuum approach or
    non-finite values raise :class:`SolverAbort`, whose ``trajectory``
    attribute holds the snapshots recorded so far.
    """
    params, grid = config.params, config.grid
    if initial.grid != grid:
        raise ConfigurationError("initial state lives on a different grid than the configuration")
    _check_initial(initial, config)
    traj = Trajectory(config)
    last_mean = [poisson_field(initial.m, params, config.dealias)[1]]

    def sources(state, p):
        return source_terms(state, p, config.dealias)

    def poisson(m, p):
        grad_phi, mean = poisson_field(m, p, config.dealias)
        last_mean[0] = mean
        return grad_phi

    def record(state):
        diag = diagnose(state, params, config.energy_C, last_mean[0])
        traj.diagnostics.append(diag)
        if config.keep_states:
            traj.states.append(state)
        if observer is not None:
            observer(state, diag)

    def abort(message, time):
        err = SolverAbort(message, time)
        err.trajectory = traj
        return err

    floor = config.vacuum_fraction * params.psi_bar
    t0 = initial.time
    state = initial
    record(state)
    operator = ETDPropagator(grid, params, config.dt)
    n = config.steps
    for i in range(1, n + 1):
        target = t0 + min(i * config.dt, config.t_end)
        dt = target - state.time
        op = operator if math.isclose(dt, config.dt, rel_tol=1e-12) else ETDPropagator(grid, params, dt)
        try:
            state = etd_step(state, op.dt, params, sources=sources, poisson=poisson, operator=op)
        except StepRejected as exc:
            raise abort(f"vacuum approach inside a step ({exc})", state.time) from exc
        state = state.with_time(target)
        if not all(np.all(np.isfinite(f.coefficients)) for f in state.fields()):
            raise abort("non-finite values", target)
        if not params.isothermal:
            low = float(domain_margin(params.epsilon * inverse(state.m)[0], params).min())
            if low < floor:
                raise abort(f"vacuum margin {low:.4g} below {floor:.4g}", target)
        if i % config.record_every == 0 or i == n:
            record(state)
    return traj


# fits --------------------------------------------------------------------------
@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    r2: float


def decay_fit(data, norm: str = "besov_sigma", min_points: int = 4) -> DecayFit:
    """Least-squares fit of ``log(norm)`` against time over the tail half of a run.

    ``data`` is a :class:`Trajectory` or a pair ``(times, values)``.
    Non-positive values are skipped.
    """
    if isinstance(data, Trajectory):
        t, y = data.times, data.column(norm)
    else:
        t, y = (np.asarray(a, dtype=float) for a in data)
    if t.size != y.size:
        raise DomainError("times and values differ in length")
    if t.size < 2:
        raise PreconditionError("decay fit needs at least two snapshots")
    half = t[0] + 0.5 * (t[-1] - t[0])
    keep = (t >= half) & (y > 0) & np.isfinite(y)
    if keep.sum() < min_points:
        raise PreconditionError(f"only {int(keep.sum())} usable points in the fit window (need {min_points})")
    fit = linregress(t[keep], np.log(y[keep]))
    return DecayFit(float(fit.slope), float(math.exp(fit.intercept)), float(fit.rvalue**2))


# input/output --------------------------------------------------------------------
def write_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for d in traj.diagnostics:
            writer.writerow([repr(float(getattr(d, c))) for c in CSV_COLUMNS])


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


_HEADER = struct.Struct("<qq6d")


def write_snapshot(state: ScaledState, params: ModelParams, path) -> None:
    """Binary snapshot: header ``(N, M, L, gamma, A, n_bar, eps, t)`` then
    little-endian float64 ``(re, im)`` pairs of ``m``, ``v``, ``grad phi`` in
    row-major mode order."""
    g = state.grid
    head = _HEADER.pack(g.dimension, g.points_per_axis, g.side_length, params.gamma, params.A,
                        params.n_bar, params.epsilon, state.time)
    coeffs = np.concatenate([f.coefficients for f in state.fields()], axis=0)
    pairs = np.stack([coeffs.real, coeffs.imag], axis=-1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(pairs).tobytes())


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(state, params)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DomainError("snapshot file is truncated")
    dim, m, side, gamma, A, n_bar, eps, t = _HEADER.unpack_from(raw)
    grid = TorusGrid(int(dim), int(m), side)
    params = ModelParams(gamma, A, n_bar, eps)
    comps = 1 + 2 * grid.dimension
    expected = comps * int(np.prod(grid.shape)) * 2
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != expected:
        raise DomainError(f"snapshot payload has {data.size} values, expected {expected}")
    pairs = data.reshape((comps,) + grid.shape + (2,))
    coeffs = pairs[..., 0] + 1j * pairs[..., 1]
    n = grid.dimension
    state = ScaledState(SpectralField(grid, coeffs[:1]), SpectralField(grid, coeffs[1:1 + n]),
                        SpectralField(grid, coeffs[1 + n:]), t)
    return state, params
