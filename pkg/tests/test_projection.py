import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sftlab import fock, projection
from sftlab.errors import DomainError
from sftlab.projection import SplitSpec


def quad_entry(spec, block, q, p):
    """<e_q, pi e_p> by adaptive quadrature of the defining restriction."""
    r1, r2 = spec.ratios
    if block == 1:
        f = lambda x: np.exp(-2j * np.pi * q * x) * np.sqrt(r1) * np.exp(2j * np.pi * p * r1 * x)
    else:
        f = lambda x: (np.exp(-2j * np.pi * q * x) * np.sqrt(r2)
                       * np.exp(2j * np.pi * p * (1 - r2 + r2 * x)))
    re = integrate.quad(lambda x: f(x).real, 0, 1, limit=200, epsabs=1e-13)[0]
    im = integrate.quad(lambda x: f(x).imag, 0, 1, limit=200, epsabs=1e-13)[0]
    return re + 1j * im


class TestSplitMatrix:
    def test_constant_mode(self):
        mat = projection.l2_split_matrix(SplitSpec(1.0, 2.0, 4.0), 2)
        assert mat.entry(1, 0, 0) == pytest.approx(0.5)

    @pytest.mark.parametrize("spec", [SplitSpec(1.0, 2.0, 4.0), SplitSpec(1.0, 1.0, 2.0),
                                      SplitSpec(1.3, 1.1, 2.7)])
    def test_matches_quadrature(self, spec):
        mat = projection.l2_split_matrix(spec, 3)
        for block in (1, 2):
            for q in range(-3, 4):
                for p in range(-3, 4):
                    assert mat.entry(block, q, p) == pytest.approx(
                        quad_entry(spec, block, q, p), abs=1e-11)

    def test_identity_block(self):
        c = projection.split_coefficients(1.0, 0.0, np.arange(-2, 3), np.arange(-2, 3))
        np.testing.assert_allclose(c[0], np.eye(5), atol=1e-15)

    @pytest.mark.parametrize("spec", [SplitSpec(1.0, 1.0, 2.0), SplitSpec(1.2, 1.5, 2.7),
                                      SplitSpec(1.0, 1.2, 3.0)])
    def test_singular_values_bounded(self, spec):
        sv = projection.l2_split_matrix(spec, 32).singular_values()
        assert sv.max() <= 1 + 1e-12

    @pytest.mark.parametrize("spec", [SplitSpec(1.0, 1.0, 2.0), SplitSpec(1.2, 1.5, 2.7),
                                      SplitSpec(1.0, 1.2, 3.0)])
    def test_coisometry(self, spec):
        assert projection.coisometry_defect(spec, 32) < 1e-8

    def test_truncated_product_converges_to_coisometry(self):
        spec = SplitSpec(1.2, 1.5, 2.7)
        defects = []
        for Ks in (16, 64, 256, 1024):
            B = projection.l2_split_matrix(spec, 4, source_window=Ks).stacked
            defects.append(np.max(np.abs(B @ B.conj().T - np.eye(B.shape[0]))))
        assert all(a > b for a, b in zip(defects, defects[1:]))
        assert defects[-1] < 0.01

    def test_invalid_spec(self):
        with pytest.raises(DomainError):
            SplitSpec(1.0, 2.0, 2.5)
        with pytest.raises(DomainError):
            SplitSpec(0.0, 1.0, 2.5)


class TestSecondQuantize:
    basis = fock.enumerate_basis(1, 1.0, 1.0, 2.5)
    big = fock.enumerate_basis(1, 1.0, 1.0, 7.5)

    def test_identity(self):
        op = projection.second_quantize(np.eye(1), self.basis)
        np.testing.assert_allclose(op.matrix, np.eye(3))
        op = projection.second_quantize(np.eye(3), self.big)
        np.testing.assert_allclose(op.matrix, np.eye(self.big.dim), atol=1e-14)

    def test_scalar_contraction(self):
        c = 0.37
        op = projection.second_quantize(c * np.eye(1), self.basis)
        np.testing.assert_allclose(op.matrix, np.diag([1, c, c * c]), atol=1e-15)

    @pytest.mark.parametrize("spec", [SplitSpec(1.0, 1.0, 2.0), SplitSpec(1.0, 1.3, 3.0)])
    def test_vacuum_to_vacuum(self, spec):
        op = projection.second_quantize(projection.l2_split_matrix(spec, self.big.K), self.big)
        assert op.matrix[0, 0] == pytest.approx(1.0)
        assert np.allclose(op.matrix[1:, 0], 0)

    def test_zero_mode_split_closed_form(self):
        # one zero-mode particle splits as sqrt(r1)|1,0> + sqrt(r2)|0,1>
        spec = SplitSpec(1.0, 1.5, 3.0)
        op = projection.second_quantize(projection.l2_split_matrix(spec, 0), self.basis)
        prod = op.codomain
        one = fock.OccupationState(((0, 1, 1),))
        col = op.matrix[:, 1]
        assert col[prod.index(one, fock.VACUUM)] == pytest.approx(np.sqrt(1 / 3))
        assert col[prod.index(fock.VACUUM, one)] == pytest.approx(np.sqrt(0.5))
        # two particles: (sqrt(r1) a1* + sqrt(r2) a2*)^2 / sqrt(2)
        two = fock.OccupationState(((0, 1, 2),))
        col = op.matrix[:, 2]
        assert col[prod.index(two, fock.VACUUM)] == pytest.approx(1 / 3)
        assert col[prod.index(one, one)] == pytest.approx(np.sqrt(2) * np.sqrt(1 / 6))

    def test_norm_violation(self):
        with pytest.raises(DomainError):
            projection.second_quantize(1.1 * np.eye(1), self.basis)

    @given(st.floats(1.0, 1.5), st.floats(1.0, 1.5), st.floats(0.0, 1.0),
           st.lists(st.floats(-1, 1), min_size=2 * 23, max_size=2 * 23))
    @settings(max_examples=25, deadline=None)
    def test_contraction(self, l1, l2, slack, coords):
        spec = SplitSpec(l1, l2, l1 + l2 + slack)
        op = projection.second_quantize(projection.l2_split_matrix(spec, self.big.K), self.big)
        v = np.array(coords[: self.big.dim]) + 1j * np.array(coords[self.big.dim: 2 * self.big.dim])
        assert np.linalg.norm(op.matrix @ v) <= np.linalg.norm(v) * (1 + 1e-9) + 1e-15

    def test_multiplicative_on_low_sectors(self):
        rng = np.random.default_rng(3)
        n = 2 * self.big.K + 1
        A = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))[0] * 0.8
        B = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))[0] * 0.9
        gA = projection.second_quantize(A, self.big).matrix
        gB = projection.second_quantize(B, self.big).matrix
        gAB = projection.second_quantize(A @ B, self.big).matrix
        low = [i for i, s in enumerate(self.big.states) if s.n_particles <= 1]
        np.testing.assert_allclose((gA @ gB)[:, low], gAB[:, low], atol=1e-12)
        # diagonal one-particle maps lose nothing on any sector
        D1 = np.diag(np.exp(1j * np.arange(n)) * 0.7)
        D2 = np.diag(np.linspace(0.2, 0.9, n))
        g = lambda X: projection.second_quantize(X, self.big).matrix
        np.testing.assert_allclose(g(D1) @ g(D2), g(D1 @ D2), atol=1e-12)


class TestSmoothedFamily:
    basis = fock.enumerate_basis(1, 1.0, 1.0, 7.5)
    spec = SplitSpec(1.0, 1.0, 3.0)

    def test_small_alpha_limit(self):
        op = projection.smoothed_family((1e-13,) * 3, (1.0,) * 3, self.spec, self.basis)
        gamma = projection.second_quantize(projection.l2_split_matrix(self.spec, self.basis.K),
                                           self.basis)
        np.testing.assert_allclose(op.matrix, gamma.matrix, atol=1e-11)

    @pytest.mark.parametrize("alpha", [1e-3, 0.1, 1.0])
    def test_norm_bounded(self, alpha):
        op = projection.smoothed_family((alpha,) * 3, (1.0, 0.7, 1.3), self.spec, self.basis)
        assert op.norm() <= 1 + 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            projection.smoothed_family((0.1, 0.0, 0.1), (1.0,) * 3, self.spec, self.basis)

    def test_derivative_in_l1(self):
        sq = projection.SecondQuantizer(self.basis, (self.basis, self.basis))

        def theta(l1):
            return projection.smoothed_family((0.1,) * 3, (1.0,) * 3, SplitSpec(l1, 1.0, 3.0),
                                              self.basis, sq=sq).matrix

        def central(h):
            return (theta(1.0 + h) - theta(1.0 - h)) / (2 * h)

        h = 0.02
        d1, d2, d3 = central(h), central(h / 2), central(h / 4)
        e12 = np.max(np.abs(d1 - d2))
        e23 = np.max(np.abs(d2 - d3))
        assert np.isfinite(d3).all()
        assert 3.0 < e12 / e23 < 5.0  # O(h^2) differences

    def test_lipschitz_stable_under_refinement(self):
        sq = projection.SecondQuantizer(self.basis, (self.basis, self.basis))
        consts = []
        for n in (9, 17, 33):
            grid = np.linspace(1.0, 1.5, n)
            mats = [projection.smoothed_family((0.1,) * 3, (1.0,) * 3, SplitSpec(x, 1.0, 3.0),
                                               self.basis, sq=sq).matrix for x in grid]
            consts.append(max(np.linalg.norm(b - a, 2) / (grid[1] - grid[0])
                              for a, b in zip(mats, mats[1:])))
        assert np.isfinite(consts).all()
        assert abs(consts[2] - consts[1]) < 0.1 * consts[1]


def test_binary_container_roundtrip(tmp_path):
    basis = fock.enumerate_basis(1, 1.0, 1.0, 2.5)
    spec = SplitSpec(1.0, 1.0, 2.5)
    op = projection.second_quantize(projection.l2_split_matrix(spec, basis.K), basis)
    projection.save_operator(op, tmp_path / "pi", spec=spec, K=basis.K)
    back, header = projection.load_operator(tmp_path / "pi")
    np.testing.assert_array_equal(back.matrix, op.matrix)
    assert header["spec"]["ell"] == 2.5 and header["K"] == 0
