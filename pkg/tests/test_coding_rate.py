import numpy as np
import pytest

from tests.helpers import make_bank, make_membership
from tost.coding_rate import (
    ProjectionBank,
    SpectralFn,
    check_membership,
    compression_rate,
    expansion_rate,
    general_compression,
    grad_variational,
    image_residual,
    oracle_bases,
    variational_bound_gap,
    variational_compression,
)
from tost.errors import DimensionError, PreconditionError, ValidationError


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestSpectralFn:
    def test_values(self):
        f = SpectralFn(2.0)
        assert f(0.0) == 0.0
        assert f.eval(1.0) == pytest.approx(np.log(3.0))
        assert f.grad(1.0) == pytest.approx(2.0 / 3.0)
        assert f.grad(0.0) == 2.0

    def test_from_epsilon(self):
        assert SpectralFn.from_epsilon(8, 2.0).alpha == 2.0

    def test_gate_strictly_decreasing(self):
        g = SpectralFn(3.0).grad(np.linspace(0, 10, 50))
        assert np.all(np.diff(g) < 0)

    @pytest.mark.parametrize("alpha", [0.0, -1.0, np.inf, np.nan])
    def test_rejects_bad_alpha(self, alpha):
        with pytest.raises(ValidationError):
            SpectralFn(alpha)


class TestProjectionBank:
    def test_shape_and_readonly(self, rng):
        bank = make_bank(rng, 3, 5, 2)
        assert (bank.K, bank.d, bank.p) == (3, 5, 2)
        assert bank.is_orthonormal()
        with pytest.raises(ValueError):
            bank.bases[0, 0, 0] = 1.0

    def test_from_list_requires_equal_shapes(self):
        with pytest.raises(DimensionError):
            ProjectionBank.from_list([np.eye(3)[:, :2], np.eye(3)])

    def test_rejects_wide_or_non_finite(self):
        with pytest.raises((DimensionError, ValidationError)):
            ProjectionBank(np.ones((1, 2, 3)))
        with pytest.raises(ValidationError):
            ProjectionBank(np.full((1, 2, 1), np.nan))


def test_membership_validation():
    with pytest.raises(ValidationError):
        check_membership(np.array([[0.5, 0.6]]), 1)
    with pytest.raises(ValidationError):
        check_membership(np.array([[1.5, -0.5]]), 1)
    with pytest.raises(DimensionError):
        check_membership(np.ones((2, 1)), 3)


class TestExpansion:
    def test_zero(self):
        assert expansion_rate(np.zeros((3, 4)), 1.0) == 0.0

    def test_identity(self):
        # eigenvalues of Z Z^T / n are (1/2, 1/2)
        assert expansion_rate(np.eye(2), 1.0) == pytest.approx(np.log(1.5), abs=1e-14)

    def test_scaling_increases(self, rng):
        Z = rng.standard_normal((4, 6))
        assert expansion_rate(2.0 * Z, 1.0) > expansion_rate(Z, 1.0)

    def test_matches_slogdet(self, rng):
        Z = rng.standard_normal((5, 3))
        ref = 0.5 * np.linalg.slogdet(np.eye(5) + 0.7 / 3 * Z @ Z.T)[1]
        assert expansion_rate(Z, 0.7) == pytest.approx(ref, abs=1e-12)


class TestCompression:
    def test_zero(self):
        assert compression_rate(np.zeros((2, 3)), np.full((3, 2), 0.5), 1.0) == 0.0

    def test_single_group_equals_expansion(self, rng):
        Z = rng.standard_normal((4, 7))
        assert compression_rate(Z, np.ones((7, 1)), 1.3) == pytest.approx(expansion_rate(Z, 1.3), abs=1e-12)

    def test_hard_assignment_identity(self):
        assert compression_rate(np.eye(2), np.eye(2), 1.0) == pytest.approx(0.5 * np.log(2.0), abs=1e-14)

    def test_general_form_matches_logdet(self, rng):
        Z = rng.standard_normal((3, 5))
        Pi = make_membership(rng, 5, 2)
        ref = 0.0
        for k in range(2):
            nk = Pi[:, k].sum()
            ref += nk / 5 * np.linalg.slogdet(np.eye(3) + 0.9 / nk * (Z * Pi[:, k]) @ Z.T)[1]
        assert general_compression(Z, Pi, SpectralFn(0.9)) == pytest.approx(0.5 * ref, abs=1e-10)
        assert compression_rate(Z, Pi, 0.9) == pytest.approx(0.5 * ref, abs=1e-10)

    def test_general_form_two_by_two(self):
        # Z Z^T / n = [[2, 1], [1, 2]] with n = 2; eigenvalues (3, 1)
        Z = np.linalg.cholesky(2.0 * np.array([[2.0, 1.0], [1.0, 2.0]]))
        value = general_compression(Z, np.ones((2, 1)), SpectralFn(1.0))
        assert value == pytest.approx(0.5 * np.log(8.0), abs=1e-12)

    def test_empty_group_contributes_nothing(self, rng):
        Z = rng.standard_normal((3, 4))
        Pi = np.column_stack([np.ones(4), np.zeros(4)])
        assert compression_rate(Z, Pi, 1.0) == pytest.approx(expansion_rate(Z, 1.0), abs=1e-12)


class TestVariational:
    def test_zero(self, rng):
        assert variational_compression(np.zeros((3, 4)), np.full((4, 2), 0.5), make_bank(rng, 2, 3, 2), SpectralFn(1.0)) == 0.0

    def test_rotated_example(self):
        # M = diag(3, 0); rotating by 45 degrees gives diagonal (1.5, 1.5)
        Z = np.array([[np.sqrt(3.0)], [0.0]])
        Pi = np.ones((1, 1))
        bank = ProjectionBank(rot(np.pi / 4)[None])
        f = SpectralFn(1.0)
        assert variational_compression(Z, Pi, bank, f) == pytest.approx(0.5 * 2 * np.log(2.5), abs=1e-12)
        assert general_compression(Z, Pi, f) == pytest.approx(0.5 * np.log(4.0), abs=1e-12)
        assert variational_bound_gap(Z, Pi, bank, f) == pytest.approx(0.5 * (2 * np.log(2.5) - np.log(4.0)), abs=1e-12)

    def test_oracle_is_tight(self, rng):
        Z = rng.standard_normal((5, 9))
        Pi = make_membership(rng, 9, 3)
        f = SpectralFn(2.0)
        bank = oracle_bases(Z, Pi, 5)
        assert abs(variational_bound_gap(Z, Pi, bank, f)) <= 1e-8

    def test_random_bank_upper_bounds(self, rng):
        f = SpectralFn(1.5)
        for _ in range(20):
            Z = rng.standard_normal((4, 6))
            Pi = make_membership(rng, 6, 2)
            assert variational_bound_gap(Z, Pi, make_bank(rng, 2, 4, 4), f) >= -1e-8

    def test_image_condition_enforced(self, rng):
        Z = rng.standard_normal((3, 5))
        Pi = np.ones((5, 1))
        bank = ProjectionBank(np.eye(3)[None, :, :1])
        with pytest.raises(PreconditionError):
            variational_bound_gap(Z, Pi, bank, SpectralFn(1.0))

    def test_non_orthonormal_bank_not_checked(self, rng):
        Z = rng.standard_normal((3, 5))
        bank = ProjectionBank(2.0 * np.eye(3)[None, :, :1])
        assert np.isfinite(variational_bound_gap(Z, np.ones((5, 1)), bank, SpectralFn(1.0)))

    def test_dimension_errors(self, rng):
        with pytest.raises(DimensionError):
            variational_compression(np.ones((3, 2)), np.ones((2, 1)), make_bank(rng, 1, 4, 2), SpectralFn(1.0))
        with pytest.raises(DimensionError):
            variational_compression(np.ones((3, 2)), np.ones((2, 1)), make_bank(rng, 2, 3, 2), SpectralFn(1.0))


class TestOracleBases:
    def test_orthogonal_columns_hard_membership(self):
        Z = np.diag([3.0, 2.0, 1.0, 0.5])
        Pi = np.eye(2)[[0, 0, 1, 1]]
        bank = oracle_bases(Z, Pi, 2)
        # group 0 lives on e1, e2 and group 1 on e3, e4
        np.testing.assert_allclose(bank[0] @ bank[0].T, np.diag([1, 1, 0, 0]), atol=1e-12)
        np.testing.assert_allclose(bank[1] @ bank[1].T, np.diag([0, 0, 1, 1]), atol=1e-12)

    def test_full_orthogonal_when_p_equals_d(self, rng):
        bank = oracle_bases(rng.standard_normal((4, 3)), make_membership(rng, 3, 2), 4)
        assert bank.orthonormality_error() <= 1e-8

    def test_diagonalizes(self, rng):
        Z = rng.standard_normal((5, 8))
        Pi = make_membership(rng, 8, 2)
        bank = oracle_bases(Z, Pi, 5)
        for k in range(2):
            C = bank[k].T @ (Z * Pi[:, k]) @ Z.T @ bank[k]
            assert np.max(np.abs(C - np.diag(np.diag(C)))) <= 1e-8

    def test_low_rank_meets_image_condition(self, rng):
        Z = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 10))
        Pi = make_membership(rng, 10, 3)
        bank = oracle_bases(Z, Pi, 2)
        assert image_residual(Z, Pi, bank) <= 1e-8
        assert abs(variational_bound_gap(Z, Pi, bank, SpectralFn(6.0))) <= 1e-8

    def test_rejects_bad_p(self, rng):
        with pytest.raises(DimensionError):
            oracle_bases(rng.standard_normal((3, 4)), np.ones((4, 1)), 4)


class TestGradient:
    def test_scalar(self):
        g = grad_variational(np.array([[2.0]]), np.ones((1, 1)), ProjectionBank(np.ones((1, 1, 1))), SpectralFn(1.0))
        assert g[0, 0] == pytest.approx(0.4, abs=1e-15)

    def test_zero(self, rng):
        g = grad_variational(np.zeros((4, 6)), make_membership(rng, 6, 2), make_bank(rng, 2, 4, 3), SpectralFn(1.0))
        assert np.array_equal(g, np.zeros((4, 6)))

    def test_finite_differences(self, rng):
        from tost.checks import finite_difference_grad, relative_error

        Z = rng.standard_normal((4, 6))
        Pi = make_membership(rng, 6, 2)
        bank = make_bank(rng, 2, 4, 3)
        f = SpectralFn(4.0)
        fd = finite_difference_grad(lambda X: variational_compression(X, Pi, bank, f), Z)
        assert relative_error(grad_variational(Z, Pi, bank, f), fd) <= 1e-5
