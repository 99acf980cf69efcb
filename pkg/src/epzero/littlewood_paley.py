"""Dyadic frequency decomposition, Besov norms and related measurements.

Blocks are radial Fourier multipliers built from one smooth cutoff ``chi``:
``phi(r) = chi(r/2) - chi(r)``, so every partial sum of blocks telescopes to a
single rescaled cutoff and the partition of unity holds to rounding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, DomainError
from .spectral_core import SpectralField, TorusGrid, gradient, inverse, jacobian, lp_norm

FieldLike = Union[SpectralField, Sequence[SpectralField]]


def _exp_step(x: np.ndarray) -> np.ndarray:
    """Smooth monotone step: 0 for x <= 0, 1 for x >= 1, C-infinity in between."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def _gauss_step(x: np.ndarray) -> np.ndarray:
    """A second smooth step, built from exp(-1/x^2), for partition comparisons."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0) ** 2), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0) ** 2), 0.0)
    return a / (a + b)


_STEPS = {"exp": _exp_step, "gauss": _gauss_step}


@dataclass(frozen=True)
class DyadicPartition:
    """Radial cutoff pair ``(chi, phi)``.

    ``chi`` equals 1 on ``r <= inner`` and vanishes for ``r >= outer``; the
    admissible range is ``3/4 <= inner < outer <= 4/3`` so that ``phi`` lives in
    the shell ``3/4 <= r <= 8/3``.
    """

    inner: float = 0.75
    outer: float = 4.0 / 3.0
    step: str = "exp"

    def __post_init__(self):
        if not (0.75 <= self.inner < self.outer <= 4.0 / 3.0):
            raise ConfigurationError(f"cutoff radii must satisfy 3/4 <= inner < outer <= 4/3 (got {self.inner}, {self.outer})")
        if self.step not in _STEPS:
            raise ConfigurationError(f"unknown step profile {self.step!r}")

    def chi(self, r) -> np.ndarray:
        x = (np.asarray(r, dtype=float) - self.inner) / (self.outer - self.inner)
        return 1.0 - _STEPS[self.step](x)

    def phi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.chi(0.5 * r) - self.chi(r)


DEFAULT_PARTITION = DyadicPartition()


@dataclass(frozen=True)
class BesovParams:
    """Indices ``(s, p, r)`` of a nonhomogeneous Besov norm ``B^s_{p,r}``."""

    s: float
    p: float = 2.0
    r: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.p >= 2:
            problems.append(f"p must be >= 2 (got {self.p})")
        if self.r not in (1, math.inf):
            problems.append(f"r must be 1 or inf (got {self.r})")
        if problems:
            raise ConfigurationError(problems)


def block_indices(grid: TorusGrid, partition: DyadicPartition = DEFAULT_PARTITION) -> list:
    """Nonhomogeneous indices ``q >= -1`` whose block can be nonzero on ``grid``."""
    rmax = grid.max_frequency
    q = -1
    while 2.0 ** (q + 1) * partition.inner < rmax:
        q += 1
    return list(range(-1, q + 1))


def homogeneous_indices(grid: TorusGrid, partition: DyadicPartition = DEFAULT_PARTITION) -> list:
    """Indices ``k`` whose homogeneous block can be nonzero on ``grid``."""
    rmin = grid.fundamental
    rmax = grid.max_frequency
    lo = math.floor(math.log2(rmin / (2 * partition.outer))) - 1
    hi = math.ceil(math.log2(rmax / partition.inner)) + 1
    return [k for k in range(lo, hi + 1)
            if np.any(partition.phi(2.0 ** (-k) * grid.xi_norm[~grid.zero_lattice]) > 0)]


@lru_cache(maxsize=256)
def _block_symbol(grid: TorusGrid, partition: DyadicPartition, kind: str, q: int) -> np.ndarray:
    r = grid.xi_norm
    if kind == "block":
        s = partition.chi(r) if q == -1 else partition.phi(2.0 ** (-q) * r)
    elif kind == "hblock":
        s = np.where(grid.zero_lattice, 0.0, partition.phi(2.0 ** (-q) * r))
    else:
        s = np.zeros_like(r) if q == -1 else partition.chi(2.0 ** (-q) * r)
    s.setflags(write=False)
    return s


def block_symbol(grid: TorusGrid, q: int, partition: DyadicPartition = DEFAULT_PARTITION) -> np.ndarray:
    if q < -1:
        raise DomainError(f"nonhomogeneous block index must be >= -1 (got {q})")
    return _block_symbol(grid, partition, "block", int(q))


def block(f: SpectralField, q: int, partition: DyadicPartition = DEFAULT_PARTITION) -> SpectralField:
    """Nonhomogeneous block: ``chi(D) f`` for ``q = -1``, ``phi(2^-q D) f`` otherwise."""
    return SpectralField(f.grid, block_symbol(f.grid, q, partition)[None] * f.coefficients)


def homogeneous_block(f: SpectralField, k: int, partition: DyadicPartition = DEFAULT_PARTITION) -> SpectralField:
    """Homogeneous block ``phi(2^-k D) f``; the zero lattice is excluded."""
    return SpectralField(f.grid, _block_symbol(f.grid, partition, "hblock", int(k))[None] * f.coefficients)


def low_cutoff(f: SpectralField, q: int, partition: DyadicPartition = DEFAULT_PARTITION) -> SpectralField:
    """Sum of all blocks below ``q``, equal to ``chi(2^-q D) f`` (zero for ``q = -1``)."""
    if q < -1:
        raise DomainError(f"low-cutoff index must be >= -1 (got {q})")
    return SpectralField(f.grid, _block_symbol(f.grid, partition, "low", int(q))[None] * f.coefficients)


def _as_fields(f: FieldLike) -> list:
    return [f] if isinstance(f, SpectralField) else list(f)


def block_norms(f: FieldLike, p: float = 2.0, partition: DyadicPartition = DEFAULT_PARTITION) -> np.ndarray:
    """``||Delta_q f||_{L^p}`` for every grid-representable ``q``, summed over a tuple of fields.

    Vector fields are measured by their pointwise Euclidean magnitude.
    """
    fields = _as_fields(f)
    qs = block_indices(fields[0].grid, partition)
    out = np.zeros(len(qs))
    for field in fields:
        for i, q in enumerate(qs):
            b = block(field, q, partition)
            out[i] += b.norm() if p == 2 else lp_norm(inverse(b), p)
    return out


def besov_norm(f: FieldLike, params: BesovParams, partition: DyadicPartition = DEFAULT_PARTITION) -> float:
    """Nonhomogeneous Besov norm, truncated to the blocks present on the grid."""
    fields = _as_fields(f)
    qs = np.array(block_indices(fields[0].grid, partition), dtype=float)
    weighted = 2.0 ** (qs * params.s) * block_norms(fields, params.p, partition)
    return float(np.sum(weighted) if params.r == 1 else np.max(weighted))


def band_project(f: SpectralField, mode: str, lower: float | None = None, upper: float | None = None) -> SpectralField:
    """Sharp radial frequency cutoff.

    ``mode`` is ``"ge"`` (``|xi| >= lower``), ``"lt"`` (``|xi| < upper``),
    ``"le"`` (``|xi| <= upper``) or ``"between"`` (``lower <= |xi| <= upper``).
    """
    r = f.grid.xi_norm
    for name, value in (("lower", lower), ("upper", upper)):
        if value is not None and not value > 0:
            raise DomainError(f"{name} threshold must be positive (got {value})")
    need = {"ge": ("lower",), "lt": ("upper",), "le": ("upper",), "between": ("lower", "upper")}
    if mode not in need:
        raise ConfigurationError(f"unknown band mode {mode!r}")
    if any({"lower": lower, "upper": upper}[k] is None for k in need[mode]):
        raise ConfigurationError(f"band mode {mode!r} needs thresholds {need[mode]}")
    if mode == "ge":
        mask = r >= lower
    elif mode == "lt":
        mask = r < upper
    elif mode == "le":
        mask = r <= upper
    else:
        mask = (r >= lower) & (r <= upper)
    return SpectralField(f.grid, np.where(mask[None], f.coefficients, 0.0))


def bernstein_ratio(f: SpectralField, q: int, k: int) -> float:
    """``max_{|alpha|=k} ||d^alpha f||_{L2} / (2^{qk} ||f||_{L2})``."""
    base = f.norm()
    if base == 0:
        raise DomainError("Bernstein ratio of a field with empty spectrum")
    xi = f.grid.xi
    best = 0.0
    for alpha in itertools.product(range(k + 1), repeat=f.grid.dimension):
        if sum(alpha) != k:
            continue
        sym = np.prod([(1j * xi[j]) ** a for j, a in enumerate(alpha)], axis=0)
        best = max(best, float(np.sqrt(np.sum(np.abs(sym[None] * f.coefficients) ** 2))))
    return best / (2.0 ** (q * k) * base)


@dataclass(frozen=True)
class CommutatorResult:
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def _padded_grid(grid: TorusGrid) -> TorusGrid:
    return TorusGrid(grid.dimension, 2 * grid.points_per_axis, grid.side_length)


def _pad(f: SpectralField, big: TorusGrid) -> np.ndarray:
    """Embed coefficients into a twice-larger grid (exact products of two fields)."""
    m, n = f.grid.points_per_axis, f.grid.dimension
    j = np.fft.fftfreq(m, d=1.0 / m).astype(int) % big.points_per_axis
    out = np.zeros((f.components,) + big.shape, dtype=np.complex128)
    out[(slice(None),) + np.ix_(*([j] * n))] = f.coefficients
    return out


def _apply_operator(g: SpectralField, operator: str) -> np.ndarray:
    if operator == "div":
        if g.components != g.grid.dimension:
            raise ConfigurationError("div needs a vector field g")
        return np.sum(1j * g.grid.xi * g.coefficients, axis=0)[None]
    if operator == "grad":
        return jacobian(g)
    raise ConfigurationError(f"operator must be 'div' or 'grad' (got {operator!r})")


def _combine(f_phys: np.ndarray, ag_phys: np.ndarray, operator: str) -> np.ndarray:
    """Pointwise ``f`` acting on ``A g``: scalar multiple or ``f . grad``."""
    if operator == "div" or f_phys.shape[0] == 1:
        if f_phys.shape[0] != 1:
            raise ConfigurationError("with 'div' the field f must be scalar")
        return (f_phys[0][None] * ag_phys.reshape((-1,) + f_phys.shape[1:]))
    return np.einsum("j...,ij...->i...", f_phys, ag_phys)


def commutator_check(f: SpectralField, g: SpectralField, q: int, operator: str = "div",
                     s: float | None = None, partition: DyadicPartition = DEFAULT_PARTITION) -> CommutatorResult:
    """Measure ``2^{qs} ||[f, Delta_q] A g||_{L2}`` against ``||f||_{B^s_{2,1}} ||g||_{B^s_{2,1}}``.

    ``A`` is ``"div"`` (scalar ``f``, vector ``g``) or ``"grad"`` (``f`` scalar or
    vector; a vector ``f`` contracts with the gradient index).  Products are
    formed on a twice-refined grid so no aliasing enters the commutator.
    ``s`` defaults to ``1 + N/2``.
    """
    grid = f.grid
    if s is None:
        s = 1.0 + grid.dimension / 2.0
    big = _padded_grid(grid)
    ag = _apply_operator(g, operator)
    ag_shape = ag.shape
    ag_field = SpectralField(grid, ag.reshape((-1,) + grid.shape))
    f_phys = inverse(SpectralField(big, _pad(f, big)))
    ag_phys = inverse(SpectralField(big, _pad(ag_field, big))).reshape(ag_shape[:-grid.dimension] + big.shape)
    blocked = inverse(block(SpectralField(big, _pad(ag_field, big)), q, partition)).reshape(ag_phys.shape)
    first = _combine(f_phys, blocked, operator)
    prod = SpectralField(big, np.fft.fftn(_combine(f_phys, ag_phys, operator), axes=big.axes, norm="forward"))
    second = inverse(block(prod, q, partition))
    comm = first - second
    lhs = 2.0 ** (q * s) * float(np.sqrt(np.mean(np.sum(comm**2, axis=0))))
    besov = BesovParams(s, 2.0, 1.0)
    rhs = besov_norm(f, besov, partition) * besov_norm(g, besov, partition)
    return CommutatorResult(lhs, rhs)


def sup_gradient(f: SpectralField) -> float:
    """``||grad f||_{L^inf}`` for a scalar field (grid maximum)."""
    return lp_norm(inverse(gradient(f)), math.inf)


def partition_sum(r: np.ndarray, q_max: int, partition: DyadicPartition = DEFAULT_PARTITION) -> np.ndarray:
    """``chi(r) + sum_{q=0}^{q_max} phi(2^-q r)`` evaluated term by term."""
    total = partition.chi(r).astype(float)
    for q in range(q_max + 1):
        total = total + partition.phi(2.0 ** (-q) * np.asarray(r))
    return total


def homogeneous_partition_sum(r: np.ndarray, k_range: Iterable[int], partition: DyadicPartition = DEFAULT_PARTITION) -> np.ndarray:
    total = np.zeros_like(np.asarray(r, dtype=float))
    for k in k_range:
        total = total + partition.phi(2.0 ** (-k) * np.asarray(r))
    return total
