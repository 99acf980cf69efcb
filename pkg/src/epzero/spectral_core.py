"""Periodic-torus grids, Fourier transforms and Fourier-multiplier operators.

Coefficient convention: ``c_j = mean_x f(x) exp(-i xi_j . x)``, so a constant
field ``c`` has coefficient ``c`` at mode 0 and ``cos(2 pi x / L)`` has ``1/2``
at modes +-1.  All norms are taken with respect to the normalized (unit-mass)
measure on the torus, for which ``||f||_{L2} = ||c||_{l2}`` exactly.

Odd multipliers (``i xi``) break Hermitian symmetry on the Nyquist mode, whose
partner ``-M/2`` aliases onto itself.  Every symbol is therefore evaluated on
the *symmetric lattice* in which the Nyquist component of the frequency vector
is replaced by zero; all operators then commute and preserve real fields.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import ConfigurationError, DomainError, PreconditionError

MEAN_TOL = 1e-12

Symbol = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, complex, float]


class ZeroMode(enum.Enum):
    """What a multiplier does on frequencies where the symbol lattice vanishes."""

    PASS = "pass-through"
    ANNIHILATE = "annihilate"
    ERROR = "error"


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on ``[0, L)^N`` with ``M`` points per axis."""

    dimension: int
    points_per_axis: int
    side_length: float = 2 * np.pi * 16

    def __post_init__(self):
        problems = []
        if self.dimension not in (1, 2, 3):
            problems.append(f"dimension must be 1, 2 or 3 (got {self.dimension})")
        m = self.points_per_axis
        if not isinstance(m, (int, np.integer)) or m < 8 or (m & (m - 1)) != 0:
            problems.append(f"points_per_axis must be a power of two >= 8 (got {m})")
        if not (np.isfinite(self.side_length) and self.side_length > 0):
            problems.append(f"side_length must be positive (got {self.side_length})")
        if problems:
            raise ConfigurationError(problems)

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dimension

    @property
    def axes(self) -> tuple:
        """Spatial axes of a ``(components, *shape)`` coefficient array."""
        return tuple(range(1, self.dimension + 1))

    @property
    def fundamental(self) -> float:
        return 2 * np.pi / self.side_length

    @cached_property
    def mode_indices(self) -> np.ndarray:
        """Integer mode index per axis, shape ``(N, *shape)``, in FFT order."""
        j = np.fft.fftfreq(self.points_per_axis, d=1.0 / self.points_per_axis).astype(int)
        return np.stack(np.meshgrid(*([j] * self.dimension), indexing="ij"))

    @cached_property
    def xi(self) -> np.ndarray:
        """Frequency vectors on the symmetric lattice (Nyquist component zeroed)."""
        j = self.mode_indices.astype(float)
        j[self.mode_indices == -self.points_per_axis // 2] = 0.0
        return j * self.fundamental

    @cached_property
    def xi_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.xi**2, axis=0))

    @cached_property
    def zero_lattice(self) -> np.ndarray:
        """Boolean mask of the frequencies where the symmetric lattice is zero."""
        return self.xi_norm == 0.0

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True on modes kept by the two-thirds rule (all ``|j| <= M/3``)."""
        return np.all(np.abs(self.mode_indices) <= self.points_per_axis // 3, axis=0)

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Physical sample points, shape ``(N, *shape)``."""
        x = np.arange(self.points_per_axis) * (self.side_length / self.points_per_axis)
        return np.stack(np.meshgrid(*([x] * self.dimension), indexing="ij"))

    @property
    def max_frequency(self) -> float:
        return float(self.xi_norm.max())


class SpectralField:
    """Real field on a torus stored by its Fourier coefficients.

    ``coefficients`` has shape ``(components, *grid.shape)``.  Instances are
    immutable: the coefficient array is copied and marked read-only.
    """

    __slots__ = ("grid", "coefficients")

    def __init__(self, grid: TorusGrid, coefficients):
        c = np.array(coefficients, dtype=np.complex128)
        if c.shape == grid.shape:
            c = c[None]
        if c.ndim != grid.dimension + 1 or c.shape[1:] != grid.shape:
            raise ConfigurationError(
                f"coefficient shape {c.shape} does not match grid shape {grid.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "coefficients", c)

    def __setattr__(self, name, value):
        raise AttributeError("SpectralField is immutable")

    def __reduce__(self):
        return (SpectralField, (self.grid, self.coefficients))

    def __repr__(self):
        return (
            f"SpectralField(components={self.components}, N={self.grid.dimension}, "
            f"M={self.grid.points_per_axis}, L={self.grid.side_length:.6g})"
        )

    # construction -------------------------------------------------------
    @classmethod
    def from_physical(cls, grid: TorusGrid, samples) -> "SpectralField":
        return transform(grid, samples)

    @classmethod
    def zeros(cls, grid: TorusGrid, components: int = 1) -> "SpectralField":
        return cls(grid, np.zeros((components,) + grid.shape, dtype=np.complex128))

    # views --------------------------------------------------------------
    @property
    def components(self) -> int:
        return self.coefficients.shape[0]

    def component(self, i: int) -> "SpectralField":
        return SpectralField(self.grid, self.coefficients[i])

    def physical(self) -> np.ndarray:
        """Samples on the grid, shape ``(components, *shape)``."""
        return inverse(self)

    def mean(self) -> np.ndarray:
        idx = (slice(None),) + (0,) * self.grid.dimension
        return self.coefficients[idx].real

    def norm(self) -> float:
        """L2 norm (normalized measure) of the pointwise Euclidean magnitude."""
        return float(np.sqrt(np.sum(np.abs(self.coefficients) ** 2)))

    def hermitian_defect(self) -> float:
        """Relative size of ``c(-j) - conj(c(j))``."""
        c = self.coefficients
        mirrored = np.roll(np.flip(c, axis=self.grid.axes), 1, axis=self.grid.axes)
        scale = max(np.max(np.abs(c)), np.finfo(float).tiny)
        return float(np.max(np.abs(mirrored - np.conj(c))) / scale)

    # arithmetic ---------------------------------------------------------
    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid or other.components != self.components:
            raise ConfigurationError("fields live on different grids or have different shapes")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coefficients + other.coefficients)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coefficients - other.coefficients)

    def __neg__(self):
        return SpectralField(self.grid, -self.coefficients)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.grid, self.coefficients * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.grid, self.coefficients / scalar)


def stack(fields) -> SpectralField:
    """Concatenate the components of several fields on one grid."""
    fields = list(fields)
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise ConfigurationError("cannot stack fields from different grids")
    return SpectralField(grid, np.concatenate([f.coefficients for f in fields], axis=0))


# transforms ---------------------------------------------------------------
def transform(grid: TorusGrid, samples) -> SpectralField:
    """Forward transform of real samples of shape ``grid.shape`` or ``(C, *grid.shape)``."""
    a = np.asarray(samples, dtype=float)
    if a.shape == grid.shape:
        a = a[None]
    if a.ndim != grid.dimension + 1 or a.shape[1:] != grid.shape:
        raise ConfigurationError(f"sample shape {np.shape(samples)} does not match grid {grid.shape}")
    return SpectralField(grid, np.fft.fftn(a, axes=grid.axes, norm="forward"))


def inverse(field: SpectralField) -> np.ndarray:
    """Inverse transform; returns real samples of shape ``(C, *grid.shape)``."""
    return np.fft.ifftn(field.coefficients, axes=field.grid.axes, norm="forward").real


# multipliers --------------------------------------------------------------
def _evaluate(grid: TorusGrid, symbol: Symbol) -> np.ndarray:
    if callable(symbol):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(symbol(grid.xi), dtype=np.complex128)
    return np.asarray(symbol, dtype=np.complex128)


def apply_multiplier(f: SpectralField, symbol: Symbol, zero_mode: ZeroMode | None = None) -> SpectralField:
    """Multiply every coefficient by ``symbol(xi)``.

    ``symbol`` is a callable of the ``(N, *shape)`` frequency array, or a
    precomputed array.  Scalar symbols have shape ``grid.shape`` (or broadcast
    to it) and act componentwise; matrix symbols have shape
    ``(C_out, C_in, *grid.shape)``.

    With ``zero_mode=None`` a non-finite symbol value at a frequency carrying a
    nonzero coefficient raises :class:`DomainError`.
    """
    grid = f.grid
    s = _evaluate(grid, symbol)
    n = grid.dimension
    matrix = s.ndim == n + 2
    if not matrix:
        s = np.broadcast_to(s, grid.shape)
    if matrix and s.shape[1] != f.components:
        raise ConfigurationError(f"matrix symbol expects {s.shape[1]} components, field has {f.components}")

    zl = grid.zero_lattice
    if zero_mode is not None:
        s = s.copy()
        if zero_mode is ZeroMode.ERROR and np.any(np.abs(f.coefficients[:, zl]) > 0):
            raise DomainError("field has content on the zero frequency and zero_mode=ERROR")
        if matrix:
            if zero_mode is ZeroMode.PASS:
                s[:, :, zl] = np.eye(s.shape[0], s.shape[1])[..., None]
            else:
                s[:, :, zl] = 0.0
        else:
            s[zl] = 1.0 if zero_mode is ZeroMode.PASS else 0.0

    if matrix:
        bad = ~np.all(np.isfinite(s), axis=(0, 1))
    else:
        bad = ~np.isfinite(s)
    if np.any(bad):
        used = np.any(np.abs(f.coefficients) > 0, axis=0)
        if np.any(bad & used):
            raise DomainError("symbol is singular at a frequency carrying field content; declare a zero-mode policy")
        s = np.where(bad, 0.0, s) if not matrix else np.where(bad[None, None], 0.0, s)

    if matrix:
        out = np.einsum("ab...,b...->a...", s, f.coefficients)
    else:
        out = s[None] * f.coefficients
    return SpectralField(grid, out)


def _require_mean_zero(f: SpectralField, what: str):
    idx = (slice(None),) + (0,) * f.grid.dimension
    zero = np.max(np.abs(f.coefficients[idx]))
    if zero > MEAN_TOL * max(f.norm(), np.finfo(float).tiny) and zero > 0:
        raise PreconditionError(f"{what} requires a mean-zero field (mean coefficient {zero:.3g})")


def gradient(f: SpectralField) -> SpectralField:
    """Gradient of a scalar field."""
    if f.components != 1:
        raise ConfigurationError("gradient expects a scalar field")
    return SpectralField(f.grid, 1j * f.grid.xi * f.coefficients[0][None])


def divergence(v: SpectralField) -> SpectralField:
    """Divergence of an N-component vector field."""
    if v.components != v.grid.dimension:
        raise ConfigurationError("divergence expects an N-component vector field")
    return SpectralField(v.grid, np.sum(1j * v.grid.xi * v.coefficients, axis=0))


def jacobian(v: SpectralField) -> np.ndarray:
    """Coefficients of ``d v_i / d x_j``, shape ``(C, N, *shape)``."""
    return 1j * v.grid.xi[None] * v.coefficients[:, None]


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, -(f.grid.xi_norm**2) * f.coefficients)


def lambda_power(f: SpectralField, s: float) -> SpectralField:
    """``Lambda^s`` with symbol ``|xi|^s``; the zero mode is annihilated for ``s <= 0``."""
    if s < 0:
        _require_mean_zero(f, "Lambda^s with s < 0")
    r = f.grid.xi_norm
    with np.errstate(divide="ignore"):
        sym = np.where(r > 0, r ** float(s), 0.0)
    return SpectralField(f.grid, sym * f.coefficients)


def inverse_laplacian(f: SpectralField) -> SpectralField:
    """``Delta^{-1}`` with symbol ``-|xi|^{-2}`` on mean-zero input."""
    _require_mean_zero(f, "inverse_laplacian")
    r2 = f.grid.xi_norm**2
    with np.errstate(divide="ignore"):
        sym = np.where(r2 > 0, -1.0 / r2, 0.0)
    return SpectralField(f.grid, sym * f.coefficients)


def grad_inverse_laplacian(f: SpectralField) -> SpectralField:
    """``grad Delta^{-1}`` of a mean-zero scalar field."""
    return gradient(inverse_laplacian(f))


def leray_project(v: SpectralField):
    """Split ``v`` into its solenoidal part ``Pv`` and gradient part ``Qv``.

    ``Q`` has symbol ``xi xi^T / |xi|^2``; the zero mode goes wholly to ``Pv``.
    """
    grid = v.grid
    if v.components != grid.dimension:
        raise ConfigurationError("leray_project expects an N-component vector field")
    r2 = grid.xi_norm**2
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(r2 > 0, grid.xi / np.sqrt(np.where(r2 > 0, r2, 1.0)), 0.0)
    along = np.sum(unit * v.coefficients, axis=0)
    q = unit * along[None]
    return SpectralField(grid, v.coefficients - q), SpectralField(grid, q)


def dealias(f: SpectralField) -> SpectralField:
    """Two-thirds rule: zero every mode with some ``|j| > M/3``."""
    return SpectralField(f.grid, np.where(f.grid.dealias_mask[None], f.coefficients, 0.0))


def multiply(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product of a scalar field with any field, taken on grid samples.

    The result is aliased; pass it through :func:`dealias` when both inputs are
    band-limited to ``M/3``.
    """
    if f.components != 1:
        raise ConfigurationError("multiply expects a scalar first factor")
    return transform(f.grid, inverse(f)[0][None] * inverse(g))


def lp_norm(samples: np.ndarray, p: float) -> float:
    """L^p norm (normalized measure) of the pointwise Euclidean magnitude.

    ``samples`` has shape ``(C, *shape)``.
    """
    mag = np.sqrt(np.sum(np.asarray(samples, dtype=float) ** 2, axis=0))
    if np.isinf(p):
        return float(np.max(mag))
    return float(np.mean(mag**p) ** (1.0 / p))
