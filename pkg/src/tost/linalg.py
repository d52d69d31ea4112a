"""Dense linear-algebra substrate: symmetric eigendecomposition, random
orthonormal frames and a stable softmax.

The eigensolver is a cyclic Jacobi method. Each sweep visits every
off-diagonal pair exactly once, in round-robin order, so that the ``m // 2``
rotations of one round act on disjoint index pairs and can be applied to
the matrix at the same time.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericalError, ValidationError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-10
NEG_CLAMP = 1e-12


class EigenDecomposition(NamedTuple):
    """Eigenvalues sorted descending with matching orthonormal eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    return m


@lru_cache(maxsize=None)
def _round_robin(m: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Circle method; index m (when m is odd) is a bye and is dropped.
    size = m + (m % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a < m and b < m:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eig(M) -> EigenDecomposition:
    """Eigendecomposition of a symmetric (PSD) matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm drops below
    ``JACOBI_TOL`` times the Frobenius norm of ``M``. Eigenvalues in
    ``[-1e-12, 0)`` are clamped to zero.

    Raises:
        DimensionError: ``M`` is not square or not symmetric.
        NumericalError: no convergence within ``JACOBI_MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(M, "M")
    m = a.shape[0]
    if a.shape[1] != m:
        raise DimensionError(f"M must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise DimensionError("M is not symmetric")

    a = 0.5 * (a + a.T)
    v = np.eye(m)
    target = JACOBI_TOL * float(np.linalg.norm(a))

    for _ in range(JACOBI_MAX_SWEEPS):
        if _off_norm(a) <= target:
            break
        for p, q in _round_robin(m):
            if p.size == 0:
                continue
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            app, aqq = a[p, p], a[q, q]
            with np.errstate(divide="ignore", invalid="ignore"):
                theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.hypot(1.0, theta))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            rp, rq = a[p, :], a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p], a[:, q]
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p], v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    else:
        if _off_norm(a) > target:
            raise NumericalError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    w[(w < 0.0) & (w >= -NEG_CLAMP)] = 0.0
    return EigenDecomposition(w, v[:, order])


def eigvalsh_psd(M) -> np.ndarray:
    """Descending eigenvalues of a symmetric PSD matrix (negatives clipped to 0)."""
    return np.maximum(sym_eig(M).values, 0.0)


def random_orthonormal(d: int, p: int, seed: int) -> np.ndarray:
    """A ``d x p`` matrix with orthonormal columns, deterministic in ``seed``.

    Gaussian fill followed by QR, with column signs fixed so that ``R`` has a
    non-negative diagonal.
    """
    if d < 1 or p < 1:
        raise DimensionError("d and p must be positive")
    if p > d:
        raise DimensionError(f"p={p} exceeds d={d}")
    rng = np.random.default_rng(seed)
    return haar_orthonormal(rng, d, p)


def haar_orthonormal(rng: np.random.Generator, d: int, p: int) -> np.ndarray:
    """Orthonormal ``d x p`` frame drawn from ``rng`` (Haar distributed)."""
    if p > d:
        raise DimensionError(f"p={p} exceeds d={d}")
    g = rng.standard_normal((d, p))
    q, r = np.linalg.qr(g)
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs


def orthonormality_error(U) -> float:
    """``max |U^T U - I|``."""
    U = np.asarray(U, dtype=np.float64)
    return float(np.max(np.abs(U.T @ U - np.eye(U.shape[1]))))


def softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` with max subtraction."""
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValidationError("softmax input has non-finite entries")
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)
