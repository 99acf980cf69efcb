"""Exact linear acoustics, exponential time stepping and dispersive measurements.

In the variables ``U = (m, d)`` with ``d = Lambda^{-1} div Q v`` every nonzero
frequency evolves by the 2x2 damped-wave matrix

    A(xi) = [[0, -c],
             [c + h'(0)/(|xi| eps), -1]],     c = psi_bar |xi| / eps,

whose eigenvalues are ``-1/2 +- i lambda/eps``.  The solenoidal velocity is
damped by ``e^{-t}`` and decouples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import j0

from .errors import AccuracyError, DomainError, PreconditionError, StepRejected
from .plasma_model import ModelParams, ScaledState, domain_margin, poisson_field, source_terms
from .spectral_core import MEAN_TOL, SpectralField, TorusGrid, inverse, lp_norm

_PHI_SERIES_RADIUS = 0.1
_PHI_SERIES_TERMS = 14


@dataclass(frozen=True)
class AcousticSymbol:
    """Per-frequency eigen-data of the acoustic matrix.

    Fields broadcast: ``xi_norm`` may be a scalar or an array of moduli.
    """

    xi_norm: np.ndarray
    epsilon: float
    psi_bar: float
    h_prime_0: float
    lambda_osc: np.ndarray

    @property
    def frequency(self) -> np.ndarray:
        """Angular frequency ``lambda/eps`` of the oscillation."""
        return self.lambda_osc / self.epsilon

    @property
    def lambda_plus(self) -> np.ndarray:
        return -0.5 + 1j * self.frequency

    @property
    def lambda_minus(self) -> np.ndarray:
        return -0.5 - 1j * self.frequency

    @property
    def coupling_up(self) -> np.ndarray:
        """``psi_bar |xi| / eps``, the (m <- d) coupling magnitude."""
        return self.psi_bar * self.xi_norm / self.epsilon

    @property
    def coupling_down(self) -> np.ndarray:
        """``psi_bar |xi| / eps + h'(0) / (|xi| eps)``, the (d <- m) coupling."""
        return self.coupling_up + self.h_prime_0 / (self.xi_norm * self.epsilon)

    def matrix(self) -> np.ndarray:
        """``A(xi)`` with shape ``(2, 2, *xi_norm.shape)``."""
        r = np.asarray(self.xi_norm, dtype=float)
        a = np.zeros((2, 2) + r.shape)
        a[0, 1] = -self.coupling_up
        a[1, 0] = self.coupling_down
        a[1, 1] = -1.0
        return a

    def projectors(self):
        """Spectral projectors ``(P+, P-)``, each ``(2, 2, *shape)`` complex."""
        a = self.matrix().astype(complex)
        eye = np.eye(2).reshape((2, 2) + (1,) * np.ndim(self.xi_norm))
        lp, lm = self.lambda_plus, self.lambda_minus
        p_plus = (a - lm * eye) / (lp - lm)
        p_minus = (a - lp * eye) / (lm - lp)
        return p_plus, p_minus


def acoustic_symbol(xi, params: ModelParams) -> AcousticSymbol:
    """Eigen-data for a frequency vector ``xi`` (see also :func:`acoustic_symbol_from_norm`)."""
    r = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    return acoustic_symbol_from_norm(r, params)


def acoustic_symbol_from_norm(xi_norm, params: ModelParams) -> AcousticSymbol:
    """Eigen-data for a scalar or array of frequency moduli."""
    r = np.asarray(xi_norm, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("acoustic symbol needs |xi| > 0")
    eps = params.epsilon
    disc = params.psi_bar**2 * r**2 + params.psi_bar * params.h_prime_0 - eps**2 / 4
    if np.any(disc <= 0):
        bad = np.flatnonzero(np.atleast_1d(disc) <= 0)[0]
        rb = float(np.atleast_1d(r)[bad])
        raise DomainError(f"overdamped acoustic mode at |xi| = {rb:.6g}, eps = {eps:.6g} (discriminant <= 0)")
    return AcousticSymbol(r, eps, params.psi_bar, params.h_prime_0, np.sqrt(disc))


def _scalar_coefficients(symbol: AcousticSymbol, t: float):
    """``c0 = (lambda+ e^{lambda- t} - lambda- e^{lambda+ t}) / (lambda+ - lambda-)`` and
    ``c1 = (e^{lambda+ t} - e^{lambda- t}) / (lambda+ - lambda-)``, in real form."""
    w = symbol.frequency
    decay = math.exp(-0.5 * t)
    s, c = np.sin(w * t), np.cos(w * t)
    c1 = decay * s / w
    c0 = decay * (c + 0.5 * s / w)
    return c0, c1


def propagator(symbol: AcousticSymbol, t: float) -> np.ndarray:
    """``exp(t A(xi))``, shape ``(2, 2, *shape)``.

    Entries follow the eigenvalue form ``e^{lambda+ t} P+ + e^{lambda- t} P-``;
    the scalar combinations are evaluated in trigonometric form, which is the
    same expression without complex cancellation.
    """
    if t < 0:
        raise DomainError("propagator needs t >= 0")
    c0, c1 = _scalar_coefficients(symbol, t)
    out = np.empty((2, 2) + np.shape(c0))
    out[0, 0] = c0
    out[0, 1] = -symbol.coupling_up * c1
    out[1, 0] = symbol.coupling_down * c1
    out[1, 1] = c0 - c1
    return out


# phi-functions ---------------------------------------------------------------
def phi_functions(z: np.ndarray):
    """``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z^2`` for complex ``z``."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < _PHI_SERIES_RADIUS
    p1 = np.empty_like(z)
    p2 = np.empty_like(z)
    zs = z[small]
    s1 = np.zeros_like(zs)
    s2 = np.zeros_like(zs)
    for k in range(_PHI_SERIES_TERMS, -1, -1):
        s1 = s1 * zs + 1.0 / math.factorial(k + 1)
        s2 = s2 * zs + 1.0 / math.factorial(k + 2)
    p1[small], p2[small] = s1, s2
    zl = z[~small]
    e = np.expm1(zl)
    p1[~small] = e / zl
    p2[~small] = (e - zl) / zl**2
    return p1, p2


def matrix_phi_functions(symbol: AcousticSymbol, h: float):
    """``phi1(hA)`` and ``phi2(hA)`` as ``(2, 2, *shape)`` real arrays."""
    pp, pm = symbol.projectors()
    f1p, f2p = phi_functions(h * symbol.lambda_plus)
    f1m, f2m = phi_functions(h * symbol.lambda_minus)
    phi1 = (f1p * pp + f1m * pm).real
    phi2 = (f2p * pp + f2m * pm).real
    return phi1, phi2


# grid-level linear operators --------------------------------------------------
@dataclass
class _ModeData:
    """Cached per-grid symbol arrays for one parameter set."""

    acoustic: np.ndarray  # mask of frequencies carrying the acoustic pair
    symbol: AcousticSymbol
    unit: np.ndarray  # xi / |xi| on acoustic modes, 0 elsewhere


_MODE_CACHE: dict = {}


def _mode_data(grid: TorusGrid, params: ModelParams) -> _ModeData:
    key = (grid, params)
    data = _MODE_CACHE.get(key)
    if data is None:
        mask = ~grid.zero_lattice
        r = grid.xi_norm[mask]
        symbol = acoustic_symbol_from_norm(r, params)
        unit = np.zeros_like(grid.xi)
        unit[:, mask] = grid.xi[:, mask] / r
        data = _ModeData(mask, symbol, unit)
        if len(_MODE_CACHE) > 64:
            _MODE_CACHE.clear()
        _MODE_CACHE[key] = data
    return data


def split_velocity(v: np.ndarray, unit: np.ndarray):
    """Coefficients ``(Pv, d)`` with ``d = Lambda^{-1} div Qv = i unit . v``."""
    along = np.sum(unit * v, axis=0)
    return v - unit * along[None], 1j * along


def join_velocity(pv: np.ndarray, d: np.ndarray, unit: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_velocity`: ``Qv = -i unit d``."""
    return pv - 1j * unit * d[None]


def linear_poisson(m: SpectralField, params: ModelParams) -> SpectralField:
    """Linearized field ``grad Delta^{-1}(h'(0) m)`` with the zero lattice annihilated."""
    grid = m.grid
    r2 = grid.xi_norm**2
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.where(r2 > 0, -1j * grid.xi / np.where(r2 > 0, r2, 1.0), 0.0)
    return SpectralField(grid, params.h_prime_0 * sym * m.coefficients[0][None])


def nonlinear_poisson(m: SpectralField, params: ModelParams) -> SpectralField:
    return poisson_field(m, params)[0]


def _require_mean_zero_m(state: ScaledState):
    zero = abs(state.m.coefficients[(0,) + (0,) * state.grid.dimension])
    if zero > MEAN_TOL * max(state.m.norm(), np.finfo(float).tiny) and zero > 0:
        raise PreconditionError(f"linear propagation requires mean-zero m (mean {zero:.3g})")


def _propagate_arrays(m: np.ndarray, v: np.ndarray, t: float, data: _ModeData):
    """Exact linear flow on coefficient arrays; the mean of m passes through."""
    mask = data.acoustic
    pv, d = split_velocity(v, data.unit)
    e = propagator(data.symbol, t)
    m_new = m.copy()
    d_new = np.zeros_like(d)
    ma, da = m[mask], d[mask]
    m_new[mask] = e[0, 0] * ma + e[0, 1] * da
    d_new[mask] = e[1, 0] * ma + e[1, 1] * da
    return m_new, join_velocity(math.exp(-t) * pv, d_new, data.unit)


def apply_linear_propagator(state: ScaledState, t: float, params: ModelParams) -> ScaledState:
    """Advance a mean-zero state by the exact linear acoustic semigroup for time ``t``.

    ``grad phi`` is recomputed from the linearized Poisson relation.
    """
    if t < 0:
        raise DomainError("propagation time must be non-negative")
    _require_mean_zero_m(state)
    grid = state.grid
    data = _mode_data(grid, params)
    m, v = _propagate_arrays(state.m.coefficients[0], state.v.coefficients, t, data)
    m_field = SpectralField(grid, m)
    return ScaledState(m_field, SpectralField(grid, v), linear_poisson(m_field, params), state.time + t)


# exponential time differencing -------------------------------------------------
class ETDPropagator:
    """Precomputed ETD2RK operators for one ``(grid, params, dt)``.

    The state is carried as ``(m, Pv, d)`` coefficient arrays.  Acoustic modes
    use the matrix phi-functions; the solenoidal channel uses the scalar rate
    ``-1``; the zero lattice of ``m`` has rate ``0``.
    """

    def __init__(self, grid: TorusGrid, params: ModelParams, dt: float):
        if not dt > 0:
            raise DomainError("time step must be positive")
        self.grid, self.params, self.dt = grid, params, dt
        self.data = _mode_data(grid, params)
        sym = self.data.symbol
        self.expA = propagator(sym, dt)
        self.phi1A, self.phi2A = matrix_phi_functions(sym, dt)
        p1, p2 = phi_functions(np.array([-dt, 0.0]))
        self.exp_damp = math.exp(-dt)
        self.phi1_damp, self.phi2_damp = p1[0].real, p2[0].real
        self.phi1_zero, self.phi2_zero = p1[1].real, p2[1].real

    def _apply(self, mat: np.ndarray, damp: float, zero: float, m, pv, d):
        mask = self.data.acoustic
        m_out = zero * m
        d_out = np.zeros_like(d)
        ma, da = m[mask], d[mask]
        m_out[mask] = mat[0, 0] * ma + mat[0, 1] * da
        d_out[mask] = mat[1, 0] * ma + mat[1, 1] * da
        return m_out, damp * pv, d_out

    def linear(self, m, pv, d):
        return self._apply(self.expA, self.exp_damp, 1.0, m, pv, d)

    def phi1(self, m, pv, d):
        return self._apply(self.phi1A, self.phi1_damp, self.phi1_zero, m, pv, d)

    def phi2(self, m, pv, d):
        return self._apply(self.phi2A, self.phi2_damp, self.phi2_zero, m, pv, d)


SourceFunction = Callable[[ScaledState, ModelParams], tuple]
PoissonClosure = Callable[[SpectralField, ModelParams], SpectralField]


def zero_sources(state: ScaledState, params: ModelParams):
    return SpectralField.zeros(state.grid), SpectralField.zeros(state.grid, state.grid.dimension)


def _check_margin(m: np.ndarray, grid: TorusGrid, params: ModelParams, stage: str):
    if params.isothermal:
        return
    m_phys = inverse(SpectralField(grid, m))[0]
    low = float(domain_margin(params.epsilon * m_phys, params).min())
    if not low > 0:
        raise StepRejected(f"vacuum-free domain left during {stage}", low)


def etd_step(state: ScaledState, dt: float, params: ModelParams,
             sources: Optional[SourceFunction] = None,
             poisson: Optional[PoissonClosure] = None,
             operator: Optional[ETDPropagator] = None) -> ScaledState:
    """One second-order exponential Runge-Kutta step (Cox-Matthews ETD2RK).

    ``a = e^{hL} u + h phi1(hL) N(u)`` and
    ``u+ = a + h phi2(hL) (N(a) - N(u))``, where ``L`` is the exact acoustic
    operator and ``N`` the nonlinear sources.  ``sources`` defaults to the full
    nonlinear sources and ``poisson`` to the full Poisson re-solve; pass
    :func:`zero_sources` and :func:`linear_poisson` for the pure linear flow.
    """
    sources = source_terms if sources is None else sources
    poisson = nonlinear_poisson if poisson is None else poisson
    grid = state.grid
    op = operator if operator is not None and operator.dt == dt else ETDPropagator(grid, params, dt)
    unit = op.data.unit
    zero_vec = SpectralField.zeros(grid, grid.dimension)

    def nonlinear(m, v):
        s = ScaledState(SpectralField(grid, m), SpectralField(grid, v), zero_vec, state.time)
        try:
            F, G = sources(s, params)
        except DomainError as exc:
            if isinstance(exc, StepRejected):
                raise
            m_phys = inverse(s.m)[0]
            low = float(domain_margin(params.epsilon * m_phys, params).min())
            raise StepRejected(str(exc), low) from exc
        pg, dg = split_velocity(G.coefficients, unit)
        return F.coefficients[0], pg, dg

    m0 = state.m.coefficients[0]
    pv0, d0 = split_velocity(state.v.coefficients, unit)
    _check_margin(m0, grid, params, "step start")
    n0 = nonlinear(m0, state.v.coefficients)

    lin = op.linear(m0, pv0, d0)
    kick = op.phi1(*n0)
    a = tuple(x + dt * y for x, y in zip(lin, kick))
    _check_margin(a[0], grid, params, "predictor stage")
    na = nonlinear(a[0], join_velocity(a[1], a[2], unit))
    corr = op.phi2(*(x - y for x, y in zip(na, n0)))
    m1, pv1, d1 = (x + dt * y for x, y in zip(a, corr))

    m_field = SpectralField(grid, m1)
    v_field = SpectralField(grid, join_velocity(pv1, d1, unit))
    return ScaledState(m_field, v_field, poisson(m_field, params), state.time + dt)


# dispersive integrals --------------------------------------------------------
_GK_X = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0])
_GK_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_GK_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                   0.381830050505118944950369775488975, 0.417959183673469387755102040816327])
_NODES = np.concatenate([-_GK_X[:-1], _GK_X[::-1]])
_WK = np.concatenate([_GK_WK[:-1], _GK_WK[::-1]])
_WG = np.zeros(15)
_WG[[1, 3, 5, 13, 11, 9]] = np.concatenate([_GK_WG[:3], _GK_WG[:3]])
_WG[7] = _GK_WG[3]


def _smooth_step(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


BUMP_SUPPORT = (1.0 / 6.0, 3.0)
BUMP_PLATEAU = (5.0 / 6.0, 12.0 / 5.0)


def bump(x) -> np.ndarray:
    """Radial bump equal to 1 on ``[5/6, 12/5]`` and supported in ``[1/6, 3]``."""
    x = np.asarray(x, dtype=float)
    lo, hi = BUMP_SUPPORT
    plo, phi = BUMP_PLATEAU
    return _smooth_step((x - lo) / (plo - lo)) * (1.0 - _smooth_step((x - phi) / (hi - phi)))


def dispersive_kernel(j: int, r: np.ndarray, t: float, tau: float, params: ModelParams, sign: int = 1) -> np.ndarray:
    """Radial kernel of ``I_{j,k}`` (without the bump and the Fourier factor).

    ``sign`` selects the phase ``e^{+- i tau lambda}`` for ``j = 3, 4, 5``
    (``j = 3`` pairs ``e^{+i tau lambda}`` with ``lambda-``).
    """
    sym = acoustic_symbol_from_norm(r, params)
    diff = sym.lambda_plus - sym.lambda_minus
    lam = sym.lambda_osc
    base = math.exp(-0.5 * t) / diff
    if j == 1:
        return base * np.exp(1j * tau * lam)
    if j == 2:
        return base * np.exp(-1j * tau * lam)
    phase = np.exp(1j * sign * tau * lam)
    if j == 3:
        weight = sym.lambda_minus if sign > 0 else sym.lambda_plus
        return weight * base * phase
    if j == 4:
        return sym.coupling_up * base * phase
    if j == 5:
        return (params.h_prime_0 / (r * params.epsilon)) * base * phase
    raise DomainError(f"dispersive kernel index must be in 1..5 (got {j})")


def _panel_edges(a: float, b: float, phase_rate: float, max_phase: float) -> np.ndarray:
    count = max(1, int(math.ceil((b - a) * phase_rate / max_phase)))
    return np.linspace(a, b, count + 1)


def adaptive_radial_integral(func, a: float, b: float, phase_rate: float, rtol: float = 1e-6,
                             max_panels: int = 2_000_000, atol: float = 0.0) -> complex:
    """Integrate ``func`` over ``[a, b]`` with Gauss-Kronrod (7, 15) panels.

    Panels start at a width covering ``pi/4`` of phase at rate ``phase_rate``
    and are bisected until the summed error estimate is below ``rtol`` times
    the magnitude of the integral (or below ``atol``, for integrals that cancel
    almost completely).  Raises :class:`AccuracyError` otherwise.
    """
    edges = _panel_edges(a, b, max(phase_rate, 1e-12), math.pi / 4)
    done_val = 0.0 + 0.0j
    done_err = 0.0
    lo, hi = edges[:-1], edges[1:]
    total_panels = lo.size
    while True:
        val, err = _gk_pairs(func, lo, hi)
        total = done_val + val.sum()
        scale = max(abs(total), np.finfo(float).tiny)
        budget = max(rtol * scale, atol)
        current_err = done_err + err.sum()
        if current_err <= budget:
            return complex(total)
        # accept panels whose error is small relative to their share of the budget
        share = budget * (hi - lo) / (b - a)
        good = err <= share
        done_val += val[good].sum()
        done_err += err[good].sum()
        lo, hi = lo[~good], hi[~good]
        if lo.size == 0:
            if done_err <= budget:
                return complex(done_val)
            raise AccuracyError("radial quadrature did not converge", done_err / scale)
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        total_panels += lo.size
        if total_panels > max_panels or np.min(hi - lo) < 1e-14 * (b - a):
            raise AccuracyError("radial quadrature exhausted its panel budget", current_err / scale)


def _gk_pairs(func, lo: np.ndarray, hi: np.ndarray):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = func(x)
    kron = half * (fx @ _WK)
    gauss = half * (fx @ _WG)
    return kron, np.abs(kron - gauss)


def dispersive_integral(j: int, k: int, t: float, tau: float, z, params: ModelParams,
                        sign: int = 1, rtol: float = 1e-6, atol: float = 0.0) -> complex:
    """Evaluate ``I_{j,k}(t, tau, z)`` in two dimensions.

    The integrand is radial apart from ``e^{i xi.z}``, so the plane integral
    reduces exactly to ``2 pi int bump(2^-k r) K_j(r) J0(r |z|) r dr``.
    """
    zn = float(np.linalg.norm(np.atleast_1d(np.asarray(z, dtype=float))))
    scale = 2.0**k
    a, b = BUMP_SUPPORT[0] * scale, BUMP_SUPPORT[1] * scale
    # lambda grows at most like psi_bar * r; J0(r|z|) oscillates at rate |z|
    rate = tau * params.psi_bar + zn + 1.0 / scale

    def integrand(r):
        return bump(r / scale) * dispersive_kernel(j, r, t, tau, params, sign) * j0(r * zn) * r

    return 2 * math.pi * adaptive_radial_integral(integrand, a, b, rate, rtol, atol=atol / (2 * math.pi))


def dispersive_profile(j: int, k: int, t: float, tau: float, radii: np.ndarray, params: ModelParams,
                       sign: int = 1, nodes_per_phase: float = 8.0) -> np.ndarray:
    """``|I_{j,k}|`` on many values of ``|z|`` by a fixed composite Gauss-Kronrod rule.

    Used for scanning ``sup_z``; the maxima are then refined with the adaptive
    :func:`dispersive_integral`.
    """
    radii = np.asarray(radii, dtype=float)
    scale = 2.0**k
    a, b = BUMP_SUPPORT[0] * scale, BUMP_SUPPORT[1] * scale
    rate = tau * params.psi_bar + float(radii.max()) + 1.0 / scale
    edges = _panel_edges(a, b, rate * nodes_per_phase / 4, math.pi / 4)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    r = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    w = (half[:, None] * _WK[None, :]).ravel()
    f = bump(r / scale) * dispersive_kernel(j, r, t, tau, params, sign) * r * w
    out = np.empty(radii.size)
    for start in range(0, radii.size, 64):
        chunk = radii[start:start + 64]
        out[start:start + 64] = np.abs(2 * math.pi * (j0(np.outer(chunk, r)) @ f))
    return out


def sup_dispersive_integral(j: int, k: int, t: float, tau: float, params: ModelParams,
                            sign: int = 1, rtol: float = 1e-6):
    """``max_z |I_{j,k}(t, tau, z)|`` and the maximizing ``|z|``.

    A scan over ``|z|`` up to beyond the fastest group-velocity front is refined
    by golden-section search using the adaptive quadrature.
    """
    from scipy.optimize import minimize_scalar

    scale = 2.0**k
    rmax = BUMP_SUPPORT[1] * scale
    zmax = tau * params.psi_bar * 1.2 + 8.0 / scale * 6
    step = math.pi / (8 * rmax)
    radii = np.arange(0.0, zmax + step, step)
    prof = dispersive_profile(j, k, t, tau, radii, params, sign)
    order = np.argsort(prof)[::-1]
    candidates = []
    for idx in order:
        if all(abs(idx - c) > 4 for c in candidates):
            candidates.append(idx)
        if len(candidates) == 3:
            break
    # values far below the peak only need absolute accuracy
    atol = rtol * float(prof.max())
    best_val, best_z = abs(dispersive_integral(j, k, t, tau, 0.0, params, sign, rtol, atol)), 0.0
    for idx in candidates:
        lo = radii[max(idx - 1, 0)]
        hi = radii[min(idx + 1, radii.size - 1)]
        if hi <= lo:
            continue
        res = minimize_scalar(lambda zz: -abs(dispersive_integral(j, k, t, tau, zz, params, sign, rtol, atol)),
                              bounds=(lo, hi), method="bounded", options={"xatol": step * 1e-3})
        val = -res.fun
        if val > best_val:
            best_val, best_z = val, float(res.x)
    return best_val, best_z


def dispersive_bound(j: int, k: int, t: float, tau: float, params: ModelParams | None = None,
                     epsilon: float | None = None, dimension: int = 2) -> float:
    """Right-hand side of the dispersive estimate for ``I_{j,k}`` with unit constant."""
    if epsilon is None:
        epsilon = params.epsilon if params is not None else 1.0
    n = dimension
    envelope = math.exp(-0.5 * t) * min(2.0**k / (2.0**k + 1), tau ** -0.5 if tau > 0 else math.inf)
    if j in (1, 2):
        pre = epsilon * 2.0 ** ((n - 1) * k) * max(1.0, 2.0**-k)
    elif j == 3:
        pre = 2.0 ** (n * k) * max(1.0, 2.0 ** (-2 * k))
    elif j == 4:
        pre = 2.0 ** (n * k) * max(1.0, 2.0**-k)
    elif j == 5:
        pre = 2.0 ** ((n - 2) * k) * max(1.0, 2.0**-k)
    else:
        raise DomainError(f"dispersive bound index must be in 1..5 (got {j})")
    return pre * envelope


# Strichartz norms ------------------------------------------------------------
def strichartz_norm(trajectory: Sequence, dt: float, p: float = math.inf) -> float:
    """``int_0^T ||U(t)||_{L^p_x} dt`` by the trapezoidal rule on uniform samples.

    ``trajectory`` holds SpectralFields (components stacked pointwise) or
    physical sample arrays of shape ``(C, *shape)``.
    """
    values = []
    for u in trajectory:
        samples = inverse(u) if isinstance(u, SpectralField) else np.asarray(u, dtype=float)
        values.append(lp_norm(samples, p))
    if len(values) < 2:
        return 0.0
    return float(trapezoid(values, dx=dt))


def acoustic_trajectory(m0: SpectralField, d0: SpectralField, times: np.ndarray, params: ModelParams):
    """Exact samples of the linear acoustic pair ``(m, d)`` at the given times.

    Yields 2-component SpectralFields; the data must vanish on the zero lattice.
    """
    grid = m0.grid
    data = _mode_data(grid, params)
    mask = data.acoustic
    if np.any(m0.coefficients[0][~mask]) or np.any(d0.coefficients[0][~mask]):
        raise PreconditionError("acoustic data must vanish on the zero lattice")
    ma, da = m0.coefficients[0][mask], d0.coefficients[0][mask]
    for t in times:
        e = propagator(data.symbol, float(t))
        out = np.zeros((2,) + grid.shape, dtype=complex)
        out[0][mask] = e[0, 0] * ma + e[0, 1] * da
        out[1][mask] = e[1, 0] * ma + e[1, 1] * da
        yield SpectralField(grid, out)
