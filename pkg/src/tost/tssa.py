"""Token Statistics Self-Attention.

Each head projects the tokens onto its basis, estimates a membership-weighted
second moment per projected direction, gates the projected tokens by the
derivative of the spectral function at that moment, and maps back. Nothing
of size ``n x n`` or ``d x d`` is materialized: working memory is
``O(K p n)`` on top of the ``d x n`` output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coding_rate import EMPTY_GROUP, ProjectionBank, SpectralFn, _check_pair, as_bank
from .errors import DegenerateGroupError, DimensionError, ValidationError
from .linalg import as_matrix, softmax


@dataclass(frozen=True)
class TssaParams:
    """Scalar hyperparameters of the attention operator.

    ``f`` defaults to ``log(1 + (d / epsilon**2) x)`` with ``d`` taken from the
    input. ``W`` (``d x pK``) replaces the ``(tau/n) [U_1 ... U_K]`` output
    factor; set ``w_scaled`` to keep ``tau/n`` in front of ``W`` instead.
    """

    tau: float = 1.0
    eta: float = 1.0
    f: Optional[SpectralFn] = None
    epsilon: float = 1.0
    W: Optional[np.ndarray] = None
    w_scaled: bool = False
    normalize_membership: bool = True
    norm_eps: float = 1e-12

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not self.epsilon > 0 or not self.norm_eps > 0:
            raise ValidationError("epsilon and norm_eps must be positive")
        if self.W is not None:
            W = np.array(self.W, dtype=np.float64)
            if W.ndim != 2 or not np.all(np.isfinite(W)):
                raise ValidationError("W must be a finite 2-D array")
            W.setflags(write=False)
            object.__setattr__(self, "W", W)

    def spectral(self, d: int) -> SpectralFn:
        return self.f if self.f is not None else SpectralFn.from_epsilon(d, self.epsilon)


def _check_W(params: TssaParams, bank: ProjectionBank) -> None:
    if params.W is not None and params.W.shape != (bank.d, bank.p * bank.K):
        raise DimensionError(f"W has shape {params.W.shape}, expected {(bank.d, bank.p * bank.K)}")


def diag_gate(Z, pi, U, f: SpectralFn) -> np.ndarray:
    """Gate vector ``f'[(U^T Z)**2 pi / <pi, 1>]`` of one head (length ``p``)."""
    Z = as_matrix(Z, "Z")
    U = as_matrix(U, "U")
    pi = np.asarray(pi, dtype=np.float64)
    if U.shape[0] != Z.shape[0] or pi.shape != (Z.shape[1],):
        raise DimensionError("diag_gate: inconsistent shapes")
    mass = float(np.sum(pi))
    if mass < EMPTY_GROUP:
        raise DegenerateGroupError("membership vector has zero mass")
    P = U.T @ Z
    return f.grad((P * P) @ pi / mass)


def _projections(Z: np.ndarray, bank: ProjectionBank) -> np.ndarray:
    return np.matmul(bank.bases.transpose(0, 2, 1), Z)


def _reciprocal_norms(norm_sq: np.ndarray, eps: float) -> np.ndarray:
    # 1 / max(norm, eps), squared
    return 1.0 / np.maximum(norm_sq, eps * eps)


def membership_logits(P: np.ndarray, params: TssaParams) -> np.ndarray:
    """``n x K`` pre-softmax scores from projected tokens ``P`` of shape (K, p, n)."""
    sq = P * P
    if params.normalize_membership:
        sq = sq * _reciprocal_norms(sq.sum(axis=2, keepdims=True), params.norm_eps)
    return sq.sum(axis=1).T / (2.0 * params.eta)


def estimate_membership(Z, bank, params: TssaParams = TssaParams()) -> np.ndarray:
    """Soft assignment of tokens to heads: softmax over heads of projected energy / 2 eta."""
    Z, bank = _check_pair(Z, bank)
    return softmax(membership_logits(_projections(Z, bank), params), axis=1)


def gated_projections(Z: np.ndarray, Pi: np.ndarray, bank: ProjectionBank, f: SpectralFn, P=None) -> np.ndarray:
    """``D_k U_k^T Z Diag(pi_k)`` stacked as (K, p, n). Heads with zero mass are zero."""
    if P is None:
        P = _projections(Z, bank)
    mass = Pi.sum(axis=0)
    live = mass >= EMPTY_GROUP
    moments = np.einsum("kpn,nk->kp", P * P, Pi)
    moments[live] /= mass[live, None]
    gate = np.where(live[:, None], f.grad(moments), 0.0)
    G = P * Pi.T[:, None, :]
    G *= gate[:, :, None]
    return G


def attention_from_membership(Z, Pi, bank, params: TssaParams) -> np.ndarray:
    """Attention output for a caller-supplied membership ``Pi`` (no re-estimation)."""
    Z, bank = _check_pair(Z, bank)
    _check_W(params, bank)
    Pi = as_matrix(Pi, "Pi")
    if Pi.shape != (Z.shape[1], bank.K):
        raise DimensionError(f"Pi has shape {Pi.shape}, expected {(Z.shape[1], bank.K)}")
    G = gated_projections(Z, Pi, bank, params.spectral(Z.shape[0]))
    return _output(G, bank, params, Z.shape[1])


def _output(G: np.ndarray, bank: ProjectionBank, params: TssaParams, n: int) -> np.ndarray:
    K, p, _ = G.shape
    if params.W is None:
        out = bank.bases.transpose(1, 0, 2).reshape(bank.d, K * p) @ G.reshape(K * p, -1)
        out *= -params.tau / n
        return out
    out = params.W @ G.reshape(K * p, -1)
    out *= -(params.tau / n if params.w_scaled else 1.0)
    return out


def tssa_attention(Z, bank, params: TssaParams = TssaParams()) -> np.ndarray:
    """The attention operator: ``-(tau/n) sum_k U_k D_k U_k^T Z Diag(pi_k)``.

    ``Pi`` is estimated from ``Z`` and ``bank``. With ``params.W`` set, the
    stacked gated projections are mapped back through ``-W`` instead.
    Runs in ``O(K p d n)`` time.
    """
    Z, bank = _check_pair(Z, bank)
    _check_W(params, bank)
    P = _projections(Z, bank)
    Pi = softmax(membership_logits(P, params), axis=1)
    G = gated_projections(Z, Pi, bank, params.spectral(Z.shape[0]), P=P)
    del P
    return _output(G, bank, params, Z.shape[1])


def token_update(Z, bank, params: TssaParams = TssaParams()) -> np.ndarray:
    """One compression step with residual: ``Z + tssa_attention(Z)``."""
    Z = as_matrix(Z, "Z")
    return Z + tssa_attention(Z, bank, params)


def per_token_update(Z, Pi, bank, params: TssaParams) -> np.ndarray:
    """Column-by-column form ``z_j+ = sum_k Pi_jk [I - (tau/n) U_k D_k U_k^T] z_j``.

    Reference evaluation used to cross-check the batched operator.
    """
    Z, bank = _check_pair(Z, bank)
    d, n = Z.shape
    f = params.spectral(d)
    Pi = np.asarray(Pi, dtype=np.float64)
    heads = []
    for k in range(bank.K):
        U = bank[k]
        D = diag_gate(Z, Pi[:, k], U, f)
        heads.append(np.eye(d) - (params.tau / n) * (U * D) @ U.T)
    out = np.empty_like(Z)
    for j in range(n):
        out[:, j] = sum(Pi[j, k] * (heads[k] @ Z[:, j]) for k in range(bank.K))
    return out
