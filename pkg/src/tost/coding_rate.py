"""Coding-rate objectives, the variational compression bound and its gradient.

Conventions: token features are the columns of a ``d x n`` array ``Z``; the
membership ``Pi`` is ``n x K`` and row-stochastic; a projection bank stacks
``K`` bases of shape ``d x p`` into a ``(K, d, p)`` array.

``alpha`` is the coefficient ``d / eps**2`` of the log-det coding rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PreconditionError, ValidationError
from .linalg import as_matrix, eigvalsh_psd, orthonormality_error, sym_eig

EMPTY_GROUP = 1e-12
ROW_SUM_TOL = 1e-8
IMAGE_TOL = 1e-8
ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class SpectralFn:
    """``f(x) = log(1 + alpha x)`` and its derivative ``alpha / (1 + alpha x)``."""

    alpha: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"alpha must be positive and finite, got {self.alpha}")

    def eval(self, x):
        return np.log1p(self.alpha * np.asarray(x, dtype=np.float64))

    def grad(self, x):
        return self.alpha / (1.0 + self.alpha * np.asarray(x, dtype=np.float64))

    __call__ = eval

    @classmethod
    def from_epsilon(cls, d: int, epsilon: float = 1.0) -> "SpectralFn":
        return cls(alpha=d / epsilon**2)


@dataclass(frozen=True)
class ProjectionBank:
    """``K`` projection bases of identical shape ``d x p``, stored as ``(K, d, p)``."""

    bases: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bases, dtype=np.float64)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3 or min(b.shape) < 1:
            raise DimensionError(f"bank must have shape (K, d, p), got {b.shape}")
        if b.shape[2] > b.shape[1]:
            raise DimensionError(f"p={b.shape[2]} exceeds d={b.shape[1]}")
        if not np.all(np.isfinite(b)):
            raise ValidationError("bank has non-finite entries")
        b.setflags(write=False)
        object.__setattr__(self, "bases", b)

    @classmethod
    def from_list(cls, mats) -> "ProjectionBank":
        mats = [np.asarray(m, dtype=np.float64) for m in mats]
        if len({m.shape for m in mats}) != 1:
            raise DimensionError("bank members must share a shape")
        return cls(np.stack(mats))

    @property
    def K(self) -> int:
        return self.bases.shape[0]

    @property
    def d(self) -> int:
        return self.bases.shape[1]

    @property
    def p(self) -> int:
        return self.bases.shape[2]

    def __len__(self):
        return self.K

    def __getitem__(self, k):
        return self.bases[k]

    def orthonormality_error(self) -> float:
        return max(orthonormality_error(u) for u in self.bases)

    def is_orthonormal(self, tol: float = ORTHO_TOL) -> bool:
        return self.orthonormality_error() <= tol


def as_bank(bank) -> ProjectionBank:
    return bank if isinstance(bank, ProjectionBank) else ProjectionBank(np.asarray(bank))


def check_membership(Pi, n: int) -> np.ndarray:
    """Validate an ``n x K`` row-stochastic membership matrix."""
    P = as_matrix(Pi, "Pi")
    if P.shape[0] != n:
        raise DimensionError(f"Pi has {P.shape[0]} rows, expected {n}")
    if np.any(P < 0):
        raise ValidationError("Pi has negative entries")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise ValidationError("rows of Pi must sum to 1")
    return P


def _check_pair(Z, bank) -> tuple[np.ndarray, ProjectionBank]:
    Z = as_matrix(Z, "Z")
    bank = as_bank(bank)
    if bank.d != Z.shape[0]:
        raise DimensionError(f"bank dimension {bank.d} does not match d={Z.shape[0]}")
    return Z, bank


def _spectrum(Z: np.ndarray, w=None) -> np.ndarray:
    # Nonzero spectrum of Z Diag(w) Z^T via the smaller of the two Gram matrices.
    X = Z if w is None else Z * np.sqrt(w)
    G = X @ X.T if X.shape[0] <= X.shape[1] else X.T @ X
    return eigvalsh_psd(0.5 * (G + G.T))


def _group_masses(Pi: np.ndarray) -> np.ndarray:
    return Pi.sum(axis=0)


def expansion_rate(Z, alpha: float) -> float:
    """``1/2 log det(I + alpha/n Z Z^T)``."""
    Z = as_matrix(Z, "Z")
    n = Z.shape[1]
    lam = _spectrum(Z) / n
    return float(0.5 * np.sum(np.log1p(alpha * lam)))


def general_compression(Z, Pi, f: SpectralFn) -> float:
    """``1/2 sum_k (n_k/n) sum_i f(lambda_i(Z Diag(pi_k) Z^T / n_k))``."""
    Z = as_matrix(Z, "Z")
    n = Z.shape[1]
    Pi = check_membership(Pi, n)
    total = 0.0
    for k, nk in enumerate(_group_masses(Pi)):
        if nk < EMPTY_GROUP:
            continue
        lam = _spectrum(Z, Pi[:, k]) / nk
        total += (nk / n) * float(np.sum(f.eval(lam)))
    return 0.5 * total


def compression_rate(Z, Pi, alpha: float) -> float:
    """Log-det compression term; ``general_compression`` with ``log(1 + alpha x)``."""
    return general_compression(Z, Pi, SpectralFn(alpha))


def second_moments(Z: np.ndarray, Pi: np.ndarray, bank: ProjectionBank):
    """Projected tokens ``U_k^T Z`` (K, p, n) and their ``pi_k``-weighted second moments (K, p).

    Empty groups get a zero moment row; the returned mask marks them.
    """
    P = np.matmul(bank.bases.transpose(0, 2, 1), Z)
    nk = _group_masses(Pi)
    live = nk >= EMPTY_GROUP
    moments = np.einsum("kpn,nk->kp", P * P, Pi)
    moments[live] /= nk[live, None]
    moments[~live] = 0.0
    return P, moments, nk, live


def variational_compression(Z, Pi, bank, f: SpectralFn) -> float:
    """Upper bound on ``general_compression`` using diagonals of ``U_k^T M_k U_k``.

    The diagonals are computed as ``(U_k^T Z)**2 pi_k / n_k``; no ``d x d``
    covariance is formed.
    """
    Z, bank = _check_pair(Z, bank)
    n = Z.shape[1]
    Pi = check_membership(Pi, n)
    if Pi.shape[1] != bank.K:
        raise DimensionError(f"Pi has {Pi.shape[1]} groups, bank has {bank.K}")
    _, moments, nk, live = second_moments(Z, Pi, bank)
    per_group = np.sum(f.eval(moments), axis=1)
    return float(0.5 * np.sum(np.where(live, nk / n * per_group, 0.0)))


def group_covariance(Z: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """``Z Diag(pi) Z^T / <pi, 1>`` (``d x d``); zero for an empty group."""
    nk = float(np.sum(pi))
    if nk < EMPTY_GROUP:
        return np.zeros((Z.shape[0], Z.shape[0]))
    C = (Z * pi) @ Z.T / nk
    return 0.5 * (C + C.T)


def oracle_bases(Z, Pi, p: int) -> ProjectionBank:
    """Per-group top-``p`` eigenvectors of ``Z Diag(pi_k) Z^T``.

    These diagonalize each group covariance, so with ``p`` at least the
    group rank the variational bound is tight.
    """
    Z = as_matrix(Z, "Z")
    d, n = Z.shape
    Pi = check_membership(Pi, n)
    if not 1 <= p <= d:
        raise DimensionError(f"p={p} must lie in [1, {d}]")
    bases = [sym_eig(group_covariance(Z, Pi[:, k])).vectors[:, :p] for k in range(Pi.shape[1])]
    return ProjectionBank(np.stack(bases))


def image_residual(Z, Pi, bank) -> float:
    """Largest ``max |(I - U_k U_k^T) M_k|`` over groups."""
    Z, bank = _check_pair(Z, bank)
    worst = 0.0
    for k, U in enumerate(bank.bases):
        C = group_covariance(Z, Pi[:, k])
        worst = max(worst, float(np.max(np.abs(C - U @ (U.T @ C)))))
    return worst


def variational_bound_gap(Z, Pi, bank, f: SpectralFn) -> float:
    """``variational_compression - general_compression``; non-negative under the bound's hypotheses.

    For an orthonormal bank the image of each group covariance must lie in
    the span of its basis, otherwise ``PreconditionError`` is raised.
    Non-orthonormal banks are not checked.
    """
    Z, bank = _check_pair(Z, bank)
    Pi = check_membership(Pi, Z.shape[1])
    if bank.is_orthonormal():
        resid = image_residual(Z, Pi, bank)
        if resid > IMAGE_TOL:
            raise PreconditionError(f"group covariance image not contained in bank span (residual {resid:.3e})")
    return variational_compression(Z, Pi, bank, f) - general_compression(Z, Pi, f)


def grad_variational(Z, Pi, bank, f: SpectralFn) -> np.ndarray:
    """Gradient of ``variational_compression`` in ``Z`` with ``Pi`` held fixed.

    ``(1/n) sum_k U_k Diag(f'[moments_k]) U_k^T Z Diag(pi_k)``
    """
    Z, bank = _check_pair(Z, bank)
    n = Z.shape[1]
    Pi = check_membership(Pi, n)
    if Pi.shape[1] != bank.K:
        raise DimensionError(f"Pi has {Pi.shape[1]} groups, bank has {bank.K}")
    P, moments, _, live = second_moments(Z, Pi, bank)
    gate = np.where(live[:, None], f.grad(moments), 0.0)
    G = gate[:, :, None] * P * Pi.T[:, None, :]
    return np.einsum("kdp,kpn->dn", bank.bases, G) / n
