import numpy as np
import pytest

from tost.errors import DimensionError, ValidationError
from tost.linalg import (
    EigenDecomposition,
    eigvalsh_psd,
    orthonormality_error,
    random_orthonormal,
    softmax,
    sym_eig,
)


def test_identity_eigenvalues():
    vals, vecs = sym_eig(np.eye(3))
    np.testing.assert_allclose(vals, [1, 1, 1], atol=1e-12)
    assert orthonormality_error(vecs) < 1e-12


def test_diagonal_case():
    vals, vecs = sym_eig(np.diag([3.0, 0.0]))
    np.testing.assert_allclose(vals, [3, 0], atol=1e-12)
    np.testing.assert_allclose(np.abs(vecs), np.eye(2), atol=1e-12)


def test_two_by_two_characteristic_polynomial():
    # roots of l^2 - 4l + 3
    vals, vecs = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(vals, [3.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(vecs), np.full((2, 2), 2**-0.5), atol=1e-12)


def test_returns_named_tuple_sorted_descending(rng):
    A = rng.standard_normal((6, 6))
    res = sym_eig(A @ A.T)
    assert isinstance(res, EigenDecomposition)
    assert np.all(np.diff(res.values) <= 0)


@pytest.mark.parametrize("d", [1, 2, 5, 12, 17])
def test_matches_lapack(rng, d):
    A = rng.standard_normal((d, d + 2))
    M = A @ A.T
    vals, vecs = sym_eig(M)
    np.testing.assert_allclose(vals, np.linalg.eigvalsh(M)[::-1], atol=1e-10 * max(1.0, vals[0]))
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, M, atol=1e-10 * np.abs(M).max())
    assert orthonormality_error(vecs) < 1e-12


def test_small_negative_eigenvalues_are_clamped(rng):
    u = rng.standard_normal(4)
    M = np.outer(u, u)  # rank one; rounding can leave tiny negatives
    assert np.all(eigvalsh_psd(M) >= 0.0)


def test_rejects_asymmetric_and_non_square():
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_rejects_non_finite():
    with pytest.raises(ValidationError):
        sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_random_orthonormal_contracts():
    U = random_orthonormal(4, 4, seed=0)
    np.testing.assert_allclose(U.T @ U, np.eye(4), atol=1e-10)
    V = random_orthonormal(8, 2, seed=1)
    np.testing.assert_allclose(np.linalg.norm(V, axis=0), 1.0, atol=1e-12)
    assert np.array_equal(random_orthonormal(8, 2, seed=1), V)


def test_random_orthonormal_rejects_wide():
    with pytest.raises(ValueError):
        random_orthonormal(2, 3, seed=0)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    out = softmax(np.array([1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.array([np.log(2.0), 0.0])), [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_rows():
    x = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, -800.0]])
    out = softmax(x, axis=1)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert out[1, 2] == 0.0
    with pytest.raises(ValidationError):
        softmax(np.array([0.0, np.inf]))
