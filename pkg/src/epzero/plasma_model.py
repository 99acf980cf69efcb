"""Physical parameters, symmetrizing variables and nonlinear couplings.

The entropic variable ``m`` replaces the density ``n``; the density
perturbation is recovered through ``h``:

* ``gamma > 1``: ``n - n_bar = h(m) = n_bar * ((1 + a m)^beta - 1)`` with
  ``a = (gamma-1) / (2 psi_bar)`` and ``beta = 2 / (gamma-1)``;
* ``gamma = 1``: ``h(m) = n_bar * (exp(m / sqrt(A)) - 1)``.

``H(m) = h(m)/m - h'(0)`` is the remainder that carries the nonlinear part of
the Poisson coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import binom

from .errors import ConfigurationError, DomainError, PreconditionError
from .spectral_core import (
    MEAN_TOL,
    SpectralField,
    TorusGrid,
    dealias as dealias_field,
    divergence,
    gradient,
    inverse,
    jacobian,
    leray_project,
    transform,
)

_SERIES_RADIUS = 1e-2
_SERIES_TERMS = 10


@dataclass(frozen=True)
class ModelParams:
    """Adiabatic exponent, pressure constant, background density and scaled electron mass."""

    gamma: float = 2.0
    A: float = 1.0
    n_bar: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        problems = []
        if not self.gamma >= 1:
            problems.append("gamma must be ≥ 1")
        if not self.A > 0:
            problems.append("A must be > 0")
        if not self.n_bar > 0:
            problems.append("n_bar must be > 0")
        if not 0 < self.epsilon <= 1:
            problems.append("epsilon must lie in (0, 1]")
        if problems:
            raise ConfigurationError(problems)

    @property
    def isothermal(self) -> bool:
        return self.gamma == 1

    @property
    def psi_bar(self) -> float:
        """Sound speed at the background density."""
        return math.sqrt(self.A * self.gamma) * self.n_bar ** ((self.gamma - 1) / 2)

    @property
    def h_prime_0(self) -> float:
        return (self.A * self.gamma) ** -0.5 * self.n_bar ** ((3 - self.gamma) / 2)

    @property
    def exponent(self) -> float:
        """``2/(gamma-1)``; infinite in the isothermal case."""
        return math.inf if self.isothermal else 2.0 / (self.gamma - 1)

    @property
    def slope(self) -> float:
        """``(gamma-1)/(2 psi_bar)``; the isothermal limit uses ``1/sqrt(A)`` with the exponential."""
        return 1.0 / math.sqrt(self.A) if self.isothermal else (self.gamma - 1) / (2 * self.psi_bar)

    def with_epsilon(self, epsilon: float) -> "ModelParams":
        return replace(self, epsilon=epsilon)


def pressure(n, params: ModelParams):
    return params.A * np.asarray(n, dtype=float) ** params.gamma


def sound_speed(n, params: ModelParams):
    return np.sqrt(params.A * params.gamma) * np.asarray(n, dtype=float) ** ((params.gamma - 1) / 2)


def domain_margin(m, params: ModelParams):
    """``(gamma-1)/2 * m + psi_bar``; ``h`` is defined where this is positive."""
    return (params.gamma - 1) / 2 * np.asarray(m, dtype=float) + params.psi_bar


def _check_domain(m, params: ModelParams):
    if not params.isothermal:
        low = np.min(domain_margin(m, params)) if np.size(m) else params.psi_bar
        if not low > 0:
            raise DomainError(f"argument outside the vacuum-free domain (min margin {low:.6g})")


def m_of_n(n, params: ModelParams):
    """Entropic variable of a density (sound-speed change, or enthalpy change for gamma = 1)."""
    n = np.asarray(n, dtype=float)
    if np.any(~(n > 0)):
        raise DomainError("density must be positive")
    log_ratio = np.log(n / params.n_bar)
    if params.isothermal:
        return math.sqrt(params.A) * log_ratio
    return np.expm1(log_ratio / params.exponent) / params.slope


def n_of_m(m, params: ModelParams):
    return params.n_bar + h(m, params)


def h(m, params: ModelParams):
    """Density perturbation ``n - n_bar`` as a function of ``m``; ``h(0) = 0``."""
    m = np.asarray(m, dtype=float)
    _check_domain(m, params)
    y = params.slope * m
    if params.isothermal:
        return params.n_bar * np.expm1(y)
    beta = params.exponent
    if _small_integer(beta):
        return params.n_bar * y * _remainder_ratio(y, beta) + params.n_bar * beta * y
    return params.n_bar * np.expm1(beta * np.log1p(y))


def _small_integer(beta: float) -> bool:
    return math.isfinite(beta) and float(beta).is_integer() and beta <= 16


def _remainder_ratio(y: np.ndarray, beta: float) -> np.ndarray:
    """``((1+y)^beta - 1 - beta y) / y`` (``beta = inf`` means ``(e^y - 1 - y)/y``).

    Small integer exponents use the exact binomial polynomial.
    """
    y = np.asarray(y, dtype=float)
    if _small_integer(beta):
        k = np.arange(2, int(beta) + 1)
        return np.sum(binom(beta, k)[:, None] * y.reshape(1, -1) ** (k[:, None] - 1), axis=0).reshape(y.shape)
    small = np.abs(y) < _SERIES_RADIUS
    out = np.empty_like(y)
    ys = y[small]
    if math.isinf(beta):
        coef = [1.0 / math.factorial(k) for k in range(2, _SERIES_TERMS + 2)]
    else:
        coef = [float(binom(beta, k)) for k in range(2, _SERIES_TERMS + 2)]
    acc = np.zeros_like(ys)
    for c in reversed(coef):
        acc = acc * ys + c
    out[small] = acc * ys
    yl = y[~small]
    if math.isinf(beta):
        out[~small] = (np.expm1(yl) - yl) / yl
    else:
        out[~small] = (np.expm1(beta * np.log1p(yl)) - beta * yl) / yl
    return out


def H(m, params: ModelParams):
    """``h(m)/m - h'(0)``, evaluated without cancellation near ``m = 0``; ``H(0) = 0``."""
    m = np.asarray(m, dtype=float)
    _check_domain(m, params)
    return params.n_bar * params.slope * _remainder_ratio(params.slope * m, params.exponent)


def h_eps(m_scaled, params: ModelParams, epsilon: float | None = None):
    """``h(eps m) / eps`` for the scaled variable."""
    eps = params.epsilon if epsilon is None else epsilon
    m_scaled = np.asarray(m_scaled, dtype=float)
    return params.h_prime_0 * m_scaled + H(eps * m_scaled, params) * m_scaled


@dataclass(frozen=True)
class ScaledState:
    """The scaled triple ``(m, v, grad phi)`` at a given time."""

    m: SpectralField
    v: SpectralField
    grad_phi: SpectralField
    time: float = 0.0

    def __post_init__(self):
        g = self.m.grid
        if self.m.components != 1:
            raise ConfigurationError("m must be a scalar field")
        for name in ("v", "grad_phi"):
            f = getattr(self, name)
            if f.grid != g or f.components != g.dimension:
                raise ConfigurationError(f"{name} must be an N-component field on the grid of m")
        if not self.time >= 0:
            raise ConfigurationError("time must be non-negative")

    @property
    def grid(self) -> TorusGrid:
        return self.m.grid

    @classmethod
    def zeros(cls, grid: TorusGrid, time: float = 0.0) -> "ScaledState":
        return cls(SpectralField.zeros(grid), SpectralField.zeros(grid, grid.dimension),
                   SpectralField.zeros(grid, grid.dimension), time)

    def with_time(self, time: float) -> "ScaledState":
        return replace(self, time=time)

    def fields(self) -> tuple:
        return (self.m, self.v, self.grad_phi)

    def norm(self) -> float:
        """Joint L2 norm of the triple."""
        return math.sqrt(sum(f.norm() ** 2 for f in self.fields()))

    def sup_norm(self) -> float:
        """Largest grid value of ``|m|``, ``|v|`` and ``|grad phi|``."""
        vals = [np.sqrt(np.sum(inverse(f) ** 2, axis=0)).max() for f in self.fields()]
        return float(max(vals))


def poisson_field(m: SpectralField, params: ModelParams, dealias: bool = True):
    """Solve ``Delta phi = h(eps m)/eps`` spectrally.

    Returns ``(grad phi, mean)`` where ``mean`` is the spatial mean of
    ``h(eps m)/eps`` that was removed before inversion.
    """
    rhs = transform(m.grid, h_eps(inverse(m)[0], params))
    if dealias:
        rhs = dealias_field(rhs)
    mean = float(rhs.mean()[0])
    return _grad_inverse_laplacian(rhs), mean


def _grad_inverse_laplacian(f: SpectralField) -> SpectralField:
    """``grad Delta^{-1}`` with the zero lattice annihilated."""
    grid = f.grid
    r2 = grid.xi_norm**2
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.where(r2 > 0, -1j * grid.xi / np.where(r2 > 0, r2, 1.0), 0.0)
    return SpectralField(grid, sym * f.coefficients[0][None])


def state_violations(state: ScaledState, params: ModelParams, poisson_tol: float = 1e-10,
                     dealias: bool = True) -> list:
    """Return a description of every ScaledState invariant that fails."""
    problems = []
    gp = state.grad_phi
    scale = max(gp.norm(), np.finfo(float).tiny)
    curl_part, _ = leray_project(gp)
    if curl_part.norm() > 1e-10 * scale and curl_part.norm() > 1e-300:
        problems.append(f"grad_phi not curl-free (solenoidal part {curl_part.norm():.3g})")
    m_phys = inverse(state.m)[0]
    margin = domain_margin(params.epsilon * m_phys, params)
    if not params.isothermal and margin.min() <= 0:
        problems.append(f"positivity violated (min margin {margin.min():.6g})")
        return problems
    expected, _ = poisson_field(state.m, params, dealias)
    rhs_scale = max(expected.norm(), np.finfo(float).tiny)
    resid = (gp - expected).norm()
    if resid > poisson_tol * rhs_scale and resid > 1e-300:
        problems.append(f"Poisson residual {resid / rhs_scale:.3g} exceeds {poisson_tol:g}")
    return problems


def check_state(state: ScaledState, params: ModelParams, poisson_tol: float = 1e-10, dealias: bool = True):
    problems = state_violations(state, params, poisson_tol, dealias)
    if problems:
        raise PreconditionError("; ".join(problems))


def build_ill_prepared(n01: SpectralField, v0: SpectralField, params: ModelParams,
                       delta0: float | None = 0.05) -> ScaledState:
    """Scaled initial data for ``n0 = n_bar + eps * n01`` and velocity ``v0``.

    ``delta0`` bounds the grid maximum of ``|m0|``, ``|v0|`` and
    ``|grad phi0|``; pass ``None`` to skip the smallness check.
    """
    grid = n01.grid
    if n01.components != 1 or v0.components != grid.dimension or v0.grid != grid:
        raise ConfigurationError("n01 must be scalar and v0 an N-component field on the same grid")
    mean = abs(n01.mean()[0])
    if mean > MEAN_TOL * max(n01.norm(), np.finfo(float).tiny):
        raise PreconditionError(f"n01 must have zero mean (mean {mean:.3g})")
    eps = params.epsilon
    n0 = params.n_bar + eps * inverse(n01)[0]
    if n0.min() <= 0:
        raise PreconditionError(f"initial density reaches vacuum (min {n0.min():.6g})")
    m0 = transform(grid, m_of_n(n0, params) / eps)
    # (n0 - n_bar)/eps is n01 itself; zero mode annihilated
    grad_phi0 = _grad_inverse_laplacian(n01)
    state = ScaledState(m0, v0, grad_phi0, 0.0)
    if delta0 is not None:
        amp = state.sup_norm()
        if amp > delta0:
            raise PreconditionError(f"initial amplitude {amp:.4g} exceeds smallness threshold {delta0:g}")
    return state


def unscale(state: ScaledState, params: ModelParams):
    """Physical density and velocity samples ``(n, v)`` of a scaled state."""
    eps = params.epsilon
    n = n_of_m(eps * inverse(state.m)[0], params)
    return n, inverse(state.v)


def poisson_correction(state: ScaledState, params: ModelParams, dealias: bool = True) -> SpectralField:
    """The singular Poisson remainder ``grad Delta^{-1}(H(eps m) m) / eps``."""
    m_phys = inverse(state.m)[0]
    eps = params.epsilon
    q = transform(state.grid, H(eps * m_phys, params) * m_phys / eps)
    if dealias:
        q = dealias_field(q)
    return _grad_inverse_laplacian(q)


def source_terms(state: ScaledState, params: ModelParams, dealias: bool = True):
    """Nonlinear sources ``(F, G)`` of the scaled system.

    ``F = -v.grad m - (gamma-1)/2 m div v`` and
    ``G = -v.grad v - (gamma-1)/2 m grad m + grad Delta^{-1}(H(eps m) m)/eps``.
    Products are taken on grid samples and dealiased.
    """
    grid = state.grid
    eps = params.epsilon
    m_phys = inverse(state.m)[0]
    _check_domain(eps * m_phys, params)
    v_phys = inverse(state.v)
    grad_m = inverse(gradient(state.m))
    div_v = inverse(divergence(state.v))[0]
    jac = jacobian(state.v)
    jac_phys = np.fft.ifftn(jac, axes=tuple(range(2, grid.dimension + 2)), norm="forward").real
    k = (params.gamma - 1) / 2
    f_phys = -np.sum(v_phys * grad_m, axis=0) - k * m_phys * div_v
    g_phys = -np.einsum("j...,ij...->i...", v_phys, jac_phys) - k * m_phys[None] * grad_m
    F = transform(grid, f_phys)
    G = transform(grid, g_phys)
    if dealias:
        F, G = dealias_field(F), dealias_field(G)
    G = G + poisson_correction(state, params, dealias)
    return F, G


def kawashima_matrix(xi) -> np.ndarray:
    """Skew-symmetric compensating matrix for frequency ``xi`` (size ``N+1``)."""
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    if r == 0:
        raise DomainError("compensating matrix undefined at xi = 0")
    n = xi.size
    k = np.zeros((n + 1, n + 1))
    k[0, 1:] = xi / r
    k[1:, 0] = -xi / r
    return k


def hyperbolic_symbol(xi, params: ModelParams) -> np.ndarray:
    """``sum_j xi_j A_j(0)`` of the symmetric first-order operator at zero velocity."""
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    c = params.psi_bar / params.epsilon
    a = np.zeros((n + 1, n + 1))
    a[0, 1:] = c * xi
    a[1:, 0] = c * xi
    return a


def kawashima_product_check(xi, params: ModelParams) -> float:
    """Frobenius residual of the product identity ``K(xi) sum xi_j A_j = diag(...)``."""
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    c = params.psi_bar / params.epsilon
    expected = np.zeros((xi.size + 1, xi.size + 1))
    expected[0, 0] = c * r
    expected[1:, 1:] = -c * np.outer(xi, xi) / r
    return float(np.linalg.norm(kawashima_matrix(xi) @ hyperbolic_symbol(xi, params) - expected))
