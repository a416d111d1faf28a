import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psgm import basis
from psgm.basis import MemoryTapped, Monomial, OrthogonalPoly, PiecewiseConstant
from psgm.errors import DegenerateSamples, DimensionMismatch, EmptyBatch, UnsupportedFamily
from psgm.sampling import GaussianMixture, SampleBatch


def batch_of(x, lead=0, lag=0):
    x = np.asarray(x, dtype=float)
    n = x.size - lead - lag
    return SampleBatch(0, x, np.zeros(n), lead, lag)


class TestDesignMatrix:
    def test_monomial(self):
        phi = basis.eval_design_matrix(Monomial(3), batch_of([0.0, 1.0, 2.0]))
        assert np.array_equal(phi, [[1, 0, 0], [1, 1, 1], [1, 2, 4]])

    def test_lut_indicators(self):
        phi = basis.eval_design_matrix(PiecewiseConstant(4), batch_of([0.1, 0.6])).toarray()
        assert np.array_equal(phi, [[1, 0, 0, 0], [0, 0, 1, 0]])

    def test_tapped_lut_gain_row(self):
        # Offsets (-1, 0, 1); window is chronological with the current sample
        # in the middle, so tap t reads x[n - t].
        b = MemoryTapped(PiecewiseConstant(2), offsets=(-1, 0, 1), gain=True)
        row = basis.eval_design_matrix(b, batch_of([0.2, 0.8, 0.2], 1, 1)).toarray()[0]
        # t=-1 -> x[n+1]=0.2 in bin 1; t=0 -> 0.8 in bin 2; t=1 -> x[n-1]=0.2 in bin 1.
        assert np.allclose(row, [0.2, 0, 0, 0.8, 0.2, 0])

    def test_tapped_plain_form_and_column_order(self):
        b = MemoryTapped(PiecewiseConstant(2), offsets=(0, 1), gain=False)
        x = np.array([0.9, 0.1, 0.7])
        phi = basis.eval_design_matrix(b, batch_of(x, 1, 0)).toarray()
        # Tap-major: columns 0-1 are tap 0, columns 2-3 tap 1.
        assert np.array_equal(phi, [[1, 0, 0, 1], [0, 1, 1, 0]])

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            basis.eval_design_matrix(Monomial(2), batch_of([]))

    def test_missing_context(self):
        b = MemoryTapped(PiecewiseConstant(2), offsets=(-2, -1, 0, 1, 2))
        with pytest.raises(DimensionMismatch):
            basis.eval_design_matrix(b, batch_of([0.1, 0.2, 0.3]))

    def test_out_of_domain_clamped(self):
        lut = PiecewiseConstant(4, -1.0, 1.0)
        assert list(lut.bin_index([-5.0, 5.0])) == [0, 3]

    def test_right_closed_edges(self):
        lut = PiecewiseConstant(4)
        # 0.25 is the first interior edge and belongs to the first bin.
        assert list(lut.bin_index([0.0, 0.25, 0.2500001, 1.0])) == [0, 0, 1, 3]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=50), st.integers(1, 40))
    def test_lut_rows_sum_to_one(self, xs, size):
        phi = PiecewiseConstant(size, -1.0, 1.0).values(xs)
        assert np.array_equal(np.asarray(phi.sum(axis=1)).ravel(), np.ones(len(xs)))
        assert np.array_equal(phi.getnnz(axis=1), np.ones(len(xs)))


class TestEvalFunction:
    @pytest.mark.parametrize(
        "b", [Monomial(3), PiecewiseConstant(5), OrthogonalPoly.fit(np.linspace(0, 1, 500), 3)]
    )
    def test_zero_coefficients(self, b):
        assert basis.eval_function(b, np.zeros(b.size), 0.4) == 0.0

    def test_lut_lookup(self):
        assert basis.eval_function(PiecewiseConstant(2), np.array([5.0, 7.0]), 0.8) == 7.0

    def test_monomial(self):
        assert basis.eval_function(Monomial(2), np.array([1.0, 3.0]), 2.0) == 7.0

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatch):
            basis.eval_function(Monomial(2), np.zeros(3), 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_tapped_constant_window_collapses(self, x, seed):
        lut = PiecewiseConstant(6)
        b = MemoryTapped(lut, gain=True)
        u = np.random.default_rng(seed).standard_normal(b.size)
        got = basis.eval_function(b, u, np.full(5, x))
        j = lut.bin_index(x)[0]
        expected = x * sum(u[t * 6 + j] for t in range(5))
        assert got == pytest.approx(expected, abs=1e-12)


class TestOrthogonal:
    def test_legendre_on_uniform(self):
        x = np.random.default_rng(0).uniform(-1, 1, 200_000)
        b = basis.build_orthogonal_polys(x, 2)
        p = b.values(x)
        assert np.allclose(p[:, 0], 1.0)
        # Legendre polynomials made orthonormal on the same samples.
        prev = p[:, :1]
        for j, leg in ((1, x), (2, 3 * x**2 - 1)):
            q = leg - prev @ (prev.T @ leg / x.size)
            q /= np.sqrt(np.mean(q**2))
            err = min(np.max(np.abs(p[:, j] - q)), np.max(np.abs(p[:, j] + q)))
            assert err < 1e-8
            prev = p[:, : j + 1]

    def test_degree_zero_is_unit_constant(self):
        # Degree 0 gives the single constant function.
        x = np.random.default_rng(1).normal(size=1000)
        b = basis.build_orthogonal_polys(x, 0)
        assert b.size == 1
        assert np.mean(b.values(x)[:, 0] ** 2) == pytest.approx(1.0)

    def test_degree_one_has_constant_first_function(self):
        x = np.random.default_rng(1).normal(size=1000)
        b = basis.build_orthogonal_polys(x, 1)
        assert np.allclose(b.values(x)[:, 0], 1.0)

    def test_constant_samples_degenerate(self):
        with pytest.raises(DegenerateSamples):
            basis.build_orthogonal_polys(np.full(1000, 0.3), 2)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            basis.build_orthogonal_polys(np.linspace(0, 1, 50), 2)

    @pytest.mark.parametrize("seed", range(3))
    def test_gram_identity_degree_9(self, seed):
        x = GaussianMixture().sample(np.random.default_rng(seed), 100_000)
        b = basis.build_orthogonal_polys(x, 9)
        p = b.values(x)
        gram = p.T @ p / x.size
        assert np.max(np.abs(gram - np.eye(10))) <= 1e-6

    def test_coefficient_table_lower_triangular(self):
        x = np.random.default_rng(2).uniform(size=5000)
        b = basis.build_orthogonal_polys(x, 4)
        c = b.coefficients
        assert np.array_equal(c, np.tril(c))
        t = (x - b.center) / b.scale
        assert np.allclose(np.vander(t, 5, increasing=True) @ c.T, b.values(x), atol=1e-9)


class TestDerivatives:
    def test_monomial_rows(self):
        assert np.array_equal(basis.derivative_rows(Monomial(3), [1.0]), [[0, 1, 2]])
        assert np.array_equal(basis.derivative_rows(Monomial(2), [0.0]), [[0, 1]])

    @pytest.mark.parametrize("family", [PiecewiseConstant(4), MemoryTapped(PiecewiseConstant(2))])
    def test_unsupported(self, family):
        with pytest.raises(UnsupportedFamily):
            basis.derivative_rows(family, [0.5])

    @pytest.mark.parametrize("degree", [3, 6, 9])
    def test_finite_differences(self, degree):
        rng = np.random.default_rng(degree)
        b = basis.build_orthogonal_polys(rng.uniform(size=10_000), degree)
        z = rng.uniform(size=20)
        h = 1e-6
        fd = (b.values(z + h) - b.values(z - h)) / (2 * h)
        assert np.max(np.abs(basis.derivative_rows(b, z) - fd)) <= 1e-5

    def test_finite_difference_at_half_degree_3(self):
        b = basis.build_orthogonal_polys(np.linspace(0, 1, 1000), 3)
        h = 1e-6
        fd = (b.values([0.5 + h]) - b.values([0.5 - h])) / (2 * h)
        assert np.allclose(basis.derivative_rows(b, [0.5]), fd, atol=1e-6)

    def test_constraint_points(self):
        z = basis.constraint_points(0.6)
        assert z.size == 8
        assert z[0] > 0.6 and z[-1] == pytest.approx(1.0)
        assert np.allclose(np.diff(z), 0.05)
