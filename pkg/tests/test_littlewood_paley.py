import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epzero.errors import ConfigurationError, DomainError
from epzero.littlewood_paley import (
    BesovParams,
    DyadicPartition,
    band_project,
    bernstein_ratio,
    besov_norm,
    block,
    block_indices,
    block_norms,
    commutator_check,
    homogeneous_block,
    homogeneous_indices,
    homogeneous_partition_sum,
    low_cutoff,
    partition_sum,
    sup_gradient,
)
from epzero.spectral_core import SpectralField, TorusGrid, transform
from oracles import random_real_field


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def single_mode(grid, j):
    """cos(xi_j . x) for integer mode vector j, set exactly in coefficient space."""
    c = np.zeros(grid.shape, dtype=complex)
    c[tuple(j)] += 0.5
    c[tuple(-np.asarray(j))] += 0.5
    return SpectralField(grid, c)


class TestPartition:
    def test_profiles_in_unit_interval(self):
        r = np.linspace(0, 10, 10001)
        p = DyadicPartition()
        for v in (p.chi(r), p.phi(r)):
            assert v.min() >= 0 and v.max() <= 1

    def test_supports(self):
        p = DyadicPartition()
        r = np.linspace(0, 10, 100001)
        assert np.all(p.chi(r[r >= 4 / 3]) == 0)
        assert np.all(p.chi(r[r <= 3 / 4]) == 1)
        assert np.all(p.phi(r[(r <= 3 / 4) | (r >= 8 / 3)]) == 0)

    @pytest.mark.parametrize("partition", [DyadicPartition(), DyadicPartition(0.8, 1.25, "gauss")])
    def test_unity(self, rng, partition):
        r = rng.uniform(0, 1000, 10_000)
        assert np.max(np.abs(partition_sum(r, 12, partition) - 1)) <= 1e-12
        r = rng.uniform(1e-3, 1e3, 10_000)
        assert np.max(np.abs(homogeneous_partition_sum(r, range(-12, 13), partition) - 1)) <= 1e-12

    def test_rejects_inadmissible(self):
        with pytest.raises(ConfigurationError):
            DyadicPartition(0.5, 1.2)
        with pytest.raises(ConfigurationError):
            BesovParams(1.0, 1.5, 2)


class TestBlocks:
    grid = TorusGrid(2, 64, 2 * np.pi)

    def test_negative_index(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        with pytest.raises(DomainError):
            block(f, -2)

    def test_single_mode_support(self):
        f = single_mode(self.grid, (8, 0))
        for q in block_indices(self.grid):
            if abs(q - 3) >= 2:
                assert block(f, q).norm() == 0

    def test_zero_field(self):
        z = SpectralField.zeros(self.grid)
        assert block(z, 2).norm() == 0

    def test_reconstruction_and_boundedness(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        total = SpectralField.zeros(self.grid)
        for q in block_indices(self.grid):
            b = block(f, q)
            assert b.norm() <= (1 + 1e-12) * f.norm()
            total = total + b
        assert (total - f).norm() <= 1e-12 * f.norm()

    def test_low_cutoff_is_partial_sum(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        acc = SpectralField.zeros(self.grid)
        for q in block_indices(self.grid):
            assert (low_cutoff(f, q) - acc).norm() <= 1e-13 * f.norm()
            acc = acc + block(f, q)

    def test_almost_orthogonality(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        qs = block_indices(self.grid)
        for p in qs:
            for q in qs:
                if abs(p - q) >= 2:
                    assert block(block(f, p), q).norm() <= 1e-12 * f.norm()

    def test_homogeneous_blocks_reconstruct_mean_free_part(self, rng):
        a = rng.standard_normal(self.grid.shape)
        f = transform(self.grid, a - a.mean())
        f = SpectralField(self.grid, np.where(self.grid.zero_lattice, 0, f.coefficients[0]))
        total = SpectralField.zeros(self.grid)
        for k in homogeneous_indices(self.grid):
            total = total + homogeneous_block(f, k)
        assert (total - f).norm() <= 1e-12 * f.norm()


class TestBesov:
    grid = TorusGrid(2, 64, 2 * np.pi)

    def test_zero(self):
        assert besov_norm(SpectralField.zeros(self.grid), BesovParams(2.0)) == 0

    @pytest.mark.parametrize("q", [1, 2, 3])
    def test_single_mode_scaling(self, q):
        f = single_mode(self.grid, (2**q, 0))
        f = f / f.norm()
        sigma = 2.0
        val = besov_norm(f, BesovParams(sigma, 2, 1))
        # a mode at |xi| = 2^q meets at most blocks q-1, q (weights 2^{-sigma}..1)
        assert 2 ** (q * sigma) * 2.0 ** (-sigma) <= val <= 2 * 2 ** (q * sigma)

    def test_dominates_l2(self, rng):
        f = transform(self.grid, random_real_field(rng, self.grid.shape, band=20))
        assert besov_norm(f, BesovParams(0.0, 2, 1)) >= f.norm() * (1 - 1e-12)

    def test_monotone_in_s(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        vals = [besov_norm(f, BesovParams(s)) for s in (0.0, 0.5, 1.0, 2.0)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_sup_norm_variant(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        inf_norm = besov_norm(f, BesovParams(0.0, math.inf, math.inf))
        assert inf_norm == pytest.approx(max(block_norms(f, math.inf)))

    def test_tuple_sums_components(self, rng):
        a = transform(self.grid, rng.standard_normal(self.grid.shape))
        b = transform(self.grid, rng.standard_normal(self.grid.shape))
        pars = BesovParams(1.0)
        assert besov_norm((a, b), pars) == pytest.approx(besov_norm(a, pars) + besov_norm(b, pars))

    def test_partition_choice_equivalence(self, rng):
        other = DyadicPartition(0.8, 1.25, "gauss")
        ratios = []
        for _ in range(10):
            f = transform(self.grid, rng.standard_normal(self.grid.shape))
            pars = BesovParams(2.0)
            ratios.append(besov_norm(f, pars) / besov_norm(f, pars, other))
        assert 0.5 < min(ratios) <= max(ratios) < 2.0


class TestBandProject:
    grid = TorusGrid(2, 32, 2 * np.pi)

    def test_disjoint(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        assert band_project(band_project(f, "ge", lower=5.0), "le", upper=0.5).norm() == 0

    def test_between_identity(self):
        f = single_mode(self.grid, (3, 0))
        assert (band_project(f, "between", 2.0, 4.0) - f).norm() == 0

    def test_complement(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        total = band_project(f, "ge", lower=3.3) + band_project(f, "lt", upper=3.3)
        assert (total - f).norm() <= 1e-15 * f.norm()

    def test_thresholds_positive(self, rng):
        f = transform(self.grid, rng.standard_normal(self.grid.shape))
        with pytest.raises(DomainError):
            band_project(f, "ge", lower=-1.0)


class TestBernstein:
    grid = TorusGrid(2, 256, 2 * np.pi)

    def test_order_zero(self):
        assert bernstein_ratio(single_mode(self.grid, (5, 0)), 2, 0) == pytest.approx(1.0)

    def test_single_mode_in_shell(self):
        for q in range(2, 6):
            r = bernstein_ratio(single_mode(self.grid, (2**q, 0)), q, 1)
            assert 3 / 4 <= r <= 8 / 3

    def test_empty_spectrum(self):
        with pytest.raises(DomainError):
            bernstein_ratio(SpectralField.zeros(self.grid), 1, 1)

    def test_random_shell_fields(self, rng):
        ratios = []
        for q in range(2, 7):
            f = transform(self.grid, rng.standard_normal(self.grid.shape))
            f = band_project(f, "between", 0.75 * 2**q, 8 / 3 * 2**q)
            ratios.append(bernstein_ratio(f, q, 1))
        assert 0.75 / math.sqrt(2) <= min(ratios) and max(ratios) <= 8 / 3


class TestCommutator:
    grid = TorusGrid(2, 64, 2 * np.pi)

    def smooth(self, rng, components=1):
        return transform(self.grid, random_real_field(rng, self.grid.shape, components, band=10))

    def test_constant_f(self, rng):
        g = self.smooth(rng, 2)
        f = transform(self.grid, np.full(self.grid.shape, 3.0))
        assert commutator_check(f, g, 2, "div").lhs <= 1e-12

    def test_ratio_bounded_over_q(self, rng):
        ratios = []
        for _ in range(4):
            f, g = self.smooth(rng), self.smooth(rng, 2)
            ratios.append([commutator_check(f, g, q, "div").ratio for q in range(0, 6)])
        ratios = np.array(ratios)
        assert np.all(np.isfinite(ratios)) and ratios.max() < 1.0
        assert np.all(ratios.sum(axis=1) < 1.0)

    def test_vector_transport_form(self, rng):
        v, m = self.smooth(rng, 2), self.smooth(rng)
        res = commutator_check(v, m, 2, "grad")
        assert 0 < res.ratio < 1.0

    def test_same_field_bound(self, rng):
        consts = []
        for _ in range(20):
            f = self.smooth(rng)
            res = commutator_check(f, f, 2, "grad")
            besov = besov_norm(f, BesovParams(2.0))
            consts.append(res.lhs / (sup_gradient(f) * besov))
        assert max(consts) / min(consts) < 10 and max(consts) < 10


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0, 1e4, allow_nan=False))
def test_unity_property(r):
    assert abs(partition_sum(np.array([r]), 16)[0] - 1) <= 1e-12
