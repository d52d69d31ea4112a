"""Causal TSSA: position ``j`` sees only tokens ``1..j``.

All token statistics (membership normalizers, head masses and second
moments) are running prefix sums, so the whole sequence is processed in one
pass in ``O(K p d n)`` time.

Internally the kernel works token-major (rows are tokens) and contracts with
``einsum`` rather than BLAS: the per-token arithmetic then does not depend on
the sequence length, which keeps ``CausalStream`` bitwise identical to the
batch computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coding_rate import ProjectionBank, SpectralFn, _check_pair
from .errors import DimensionError, ValidationError
from .linalg import as_matrix, softmax
from .tssa import TssaParams, _check_W, _reciprocal_norms


@dataclass(frozen=True)
class CausalParams:
    """``base`` operator settings plus an optional ``n x K`` additive pre-softmax bias."""

    base: TssaParams = field(default_factory=TssaParams)
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.bias is not None:
            b = np.array(self.bias, dtype=np.float64)
            if b.ndim != 2 or not np.all(np.isfinite(b)):
                raise ValidationError("bias must be a finite 2-D array")
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)


def _stacked(bank: ProjectionBank) -> np.ndarray:
    # (K p, d); row k*p + q is column q of U_k
    return np.ascontiguousarray(bank.bases.transpose(0, 2, 1).reshape(bank.K * bank.p, bank.d))


def _project(Zt: np.ndarray, Ut: np.ndarray, K: int) -> np.ndarray:
    P = np.einsum("nd,qd->nq", Zt, Ut)
    return P.reshape(Zt.shape[0], K, -1)


def _logits(sq: np.ndarray, row_sq: np.ndarray, params: TssaParams, bias) -> np.ndarray:
    # sq, row_sq: (m, K, p); row_sq holds prefix sums of sq through each row
    if params.normalize_membership:
        sq = sq * _reciprocal_norms(row_sq, params.norm_eps)
    z = sq.sum(axis=2) / (2.0 * params.eta)
    if bias is not None:
        z = z + bias
    return z


def _gated(P: np.ndarray, Pi: np.ndarray, S: np.ndarray, N: np.ndarray, f: SpectralFn) -> np.ndarray:
    # softmax can underflow to an exact 0, leaving a zero-mass prefix (then S == 0 too)
    N = np.where(N > 0.0, N, 1.0)
    gate = f.grad(S / N[:, :, None])
    return gate * P * Pi[:, :, None]


def _emit(G: np.ndarray, back: np.ndarray, scale: np.ndarray) -> np.ndarray:
    m = G.shape[0]
    out = np.einsum("nq,dq->nd", G.reshape(m, -1), back)
    out *= scale[:, None]
    return out


def _back_and_scale(bank: ProjectionBank, params: TssaParams, positions: np.ndarray):
    if params.W is None:
        back = np.ascontiguousarray(_stacked(bank).T)
        scale = -params.tau / positions
    else:
        back = np.ascontiguousarray(params.W)
        scale = -params.tau / positions if params.w_scaled else -np.ones_like(positions)
    return back, scale


def _bias_for(params: CausalParams, n: int, K: int):
    if params.bias is None:
        return None
    if params.bias.shape != (n, K):
        raise DimensionError(f"bias has shape {params.bias.shape}, expected {(n, K)}")
    return params.bias


def _prepare(Z, bank, params: CausalParams):
    Z, bank = _check_pair(Z, bank)
    _check_W(params.base, bank)
    bias = _bias_for(params, Z.shape[1], bank.K)
    Zt = np.ascontiguousarray(Z.T)
    P = _project(Zt, _stacked(bank), bank.K)
    return Z, bank, bias, P


def _membership_from_projections(P, params: CausalParams, bias):
    sq = P * P
    row_sq = np.cumsum(sq, axis=0) if params.base.normalize_membership else None
    return softmax(_logits(sq, row_sq, params.base, bias), axis=1), sq


def causal_membership(Z, bank, params: CausalParams = CausalParams()) -> np.ndarray:
    """Row ``j``: softmax over heads of ``||U_k^T z_j * y_k^j||^2 / (2 eta) + b_jk``.

    ``y_k^j`` holds reciprocal row norms of the prefix ``U_k^T Z[:, :j]``.
    """
    _, _, bias, P = _prepare(Z, bank, params)
    return _membership_from_projections(P, params, bias)[0]


def causal_tssa_attention(Z, bank, params: CausalParams = CausalParams()) -> np.ndarray:
    """Causal attention output (``d x n``).

    Column ``j`` is ``-(tau/j) sum_k Pi_jk U_k D_k^j U_k^T z_j`` where
    ``D_k^j`` gates on second moments of the first ``j`` tokens weighted by
    ``pi_k`` and normalized by their mass ``n_{j,k}``.
    """
    Z, bank, bias, P = _prepare(Z, bank, params)
    n = Z.shape[1]
    Pi, sq = _membership_from_projections(P, params, bias)
    S = np.cumsum(sq * Pi[:, :, None], axis=0)
    del sq
    N = np.cumsum(Pi, axis=0)
    G = _gated(P, Pi, S, N, params.base.spectral(bank.d))
    del P, S
    back, scale = _back_and_scale(bank, params.base, np.arange(1, n + 1, dtype=np.float64))
    return np.ascontiguousarray(_emit(G, back, scale).T)


def causal_token_update(Z, bank, params: CausalParams = CausalParams()) -> np.ndarray:
    """``Z + causal_tssa_attention(Z)``."""
    Z = as_matrix(Z, "Z")
    return Z + causal_tssa_attention(Z, bank, params)


class CausalStream:
    """Incremental causal attention: feed tokens one at a time.

    Carries the running sums used by ``causal_tssa_attention`` (``O(K p)``
    state) and returns the same output column, bit for bit, as the batch
    computation at that position.
    """

    def __init__(self, bank, params: CausalParams = CausalParams()):
        self.bank = bank if isinstance(bank, ProjectionBank) else ProjectionBank(np.asarray(bank))
        self.params = params
        _check_W(params.base, self.bank)
        K, p = self.bank.K, self.bank.p
        self._Ut = _stacked(self.bank)
        self._f = params.base.spectral(self.bank.d)
        self._row_sq = np.zeros((K, p))
        self._S = np.zeros((K, p))
        self._N = np.zeros(K)
        self.position = 0

    def push(self, z, bias_row=None) -> np.ndarray:
        z = np.ascontiguousarray(np.asarray(z, dtype=np.float64).reshape(1, -1))
        if z.shape[1] != self.bank.d:
            raise DimensionError(f"token has length {z.shape[1]}, expected {self.bank.d}")
        if bias_row is None and self.params.bias is not None:
            bias_row = self.params.bias[self.position]
        bias = None if bias_row is None else np.asarray(bias_row, dtype=np.float64).reshape(1, -1)
        base = self.params.base
        K = self.bank.K

        P = _project(z, self._Ut, K)
        sq = P * P
        row_sq = None
        if base.normalize_membership:
            row_sq = self._row_sq + sq if self.position else sq.copy()
            self._row_sq = row_sq[0]
        Pi = softmax(_logits(sq, row_sq, base, bias), axis=1)
        w = sq * Pi[:, :, None]
        S = self._S + w if self.position else w
        N = self._N + Pi if self.position else Pi.copy()
        self._S, self._N = S[0], N[0]
        self.position += 1

        G = _gated(P, Pi, S, N, self._f)
        back, scale = _back_and_scale(self.bank, base, np.array([float(self.position)]))
        return _emit(G, back, scale)[0]

    def run(self, Z) -> np.ndarray:
        Z = as_matrix(Z, "Z")
        return np.stack([self.push(Z[:, j]) for j in range(Z.shape[1])], axis=1)
