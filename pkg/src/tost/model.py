"""Transformer blocks built around (causal) TSSA.

A block is pre-norm: ``Z1 = Z + attn(LN1(Z))`` then ``Z1 + MLP(LN2(Z1))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import erf

from .causal import CausalParams, causal_membership, causal_tssa_attention
from .coding_rate import ProjectionBank, SpectralFn, expansion_rate, variational_compression
from .errors import DimensionError, ValidationError
from .linalg import as_matrix, random_orthonormal
from .tssa import TssaParams, estimate_membership, tssa_attention

VAR_EPS = 1e-6
MODES = ("random", "oracle-ready")

AttnParams = Union[TssaParams, CausalParams]


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class LayerNormParams:
    scale: np.ndarray
    shift: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "LayerNormParams":
        return cls(np.ones(d), np.zeros(d))


def layer_norm(Z, scale, shift, var_eps: float = VAR_EPS) -> np.ndarray:
    """Standardize each column over its ``d`` features, then scale and shift.

    The variance is floored at ``var_eps`` so constant columns map to ``shift``.
    """
    Z = as_matrix(Z, "Z")
    mu = Z.mean(axis=0, keepdims=True)
    c = Z - mu
    var = np.mean(c * c, axis=0, keepdims=True)
    out = c / np.sqrt(np.maximum(var, var_eps))
    return out * np.asarray(scale, dtype=np.float64)[:, None] + np.asarray(shift, dtype=np.float64)[:, None]


def mlp_forward(Z, w1, b1, w2, b2) -> np.ndarray:
    """Two-layer GELU MLP applied to every token: ``w2^T gelu(w1^T Z + b1) + b2``."""
    Z = as_matrix(Z, "Z")
    w1, w2 = np.asarray(w1, dtype=np.float64), np.asarray(w2, dtype=np.float64)
    if w1.shape[0] != Z.shape[0] or w2.shape != (w1.shape[1], Z.shape[0]):
        raise DimensionError(f"mlp weights {w1.shape}, {w2.shape} do not fit d={Z.shape[0]}")
    H = gelu(w1.T @ Z + np.asarray(b1, dtype=np.float64)[:, None])
    return w2.T @ H + np.asarray(b2, dtype=np.float64)[:, None]


@dataclass(frozen=True)
class BlockParams:
    bank: ProjectionBank
    attn: AttnParams
    mlp_w1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b1: np.ndarray
    mlp_b2: np.ndarray
    norm1: LayerNormParams
    norm2: LayerNormParams

    def __post_init__(self):
        d, h = np.shape(self.mlp_w1)
        if h < 1:
            raise DimensionError("hidden width must be at least 1")
        shapes = {
            "mlp_w2": (np.shape(self.mlp_w2), (h, d)),
            "mlp_b1": (np.shape(self.mlp_b1), (h,)),
            "mlp_b2": (np.shape(self.mlp_b2), (d,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise DimensionError(f"{name} has shape {got}, expected {want}")
        if self.bank.d != d:
            raise DimensionError(f"bank dimension {self.bank.d} does not match d={d}")
        for arr in (self.mlp_w1, self.mlp_w2, self.mlp_b1, self.mlp_b2):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("block parameters must be finite")

    @property
    def causal(self) -> bool:
        return isinstance(self.attn, CausalParams)

    @property
    def tssa(self) -> TssaParams:
        return self.attn.base if self.causal else self.attn

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.bank.d, self.bank.p, self.bank.K, np.shape(self.mlp_w1)[1]


@dataclass(frozen=True)
class ModelParams:
    layers: tuple[BlockParams, ...] = field(default_factory=tuple)
    d: int = 0
    p: int = 0
    K: int = 0
    h: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for blk in self.layers:
            if blk.dims != (self.d, self.p, self.K, self.h):
                raise DimensionError(f"layer dims {blk.dims} differ from model dims {(self.d, self.p, self.K, self.h)}")

    @property
    def depth(self) -> int:
        return len(self.layers)


class LayerRecord(NamedTuple):
    layer: int
    compression_var: float
    expansion: float


def attention(Z: np.ndarray, params: BlockParams) -> np.ndarray:
    if params.causal:
        return causal_tssa_attention(Z, params.bank, params.attn)
    return tssa_attention(Z, params.bank, params.attn)


def membership(Z: np.ndarray, params: BlockParams) -> np.ndarray:
    if params.causal:
        return causal_membership(Z, params.bank, params.attn)
    return estimate_membership(Z, params.bank, params.attn)


def block_forward(Z, params: BlockParams) -> np.ndarray:
    Z = as_matrix(Z, "Z")
    X = layer_norm(Z, params.norm1.scale, params.norm1.shift)
    Z1 = Z + attention(X, params)
    Y = layer_norm(Z1, params.norm2.scale, params.norm2.shift)
    return Z1 + mlp_forward(Y, params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2)


def model_forward(Z, params: ModelParams, record: bool = False):
    """Apply all blocks in order.

    With ``record`` set, also returns one ``LayerRecord`` per layer, measured
    on that layer's attention input (after the first layer norm) with the
    membership the attention itself estimates there.
    """
    Z = as_matrix(Z, "Z")
    trace: Optional[list[LayerRecord]] = [] if record else None
    for i, blk in enumerate(params.layers):
        if record:
            X = layer_norm(Z, blk.norm1.scale, blk.norm1.shift)
            Pi = membership(X, blk)
            f = blk.tssa.spectral(X.shape[0])
            trace.append(LayerRecord(i, variational_compression(X, Pi, blk.bank, f), expansion_rate(X, f.alpha)))
        Z = block_forward(Z, blk)
    return Z, trace


def init_model(
    d: int,
    p: int,
    K: int,
    h: Optional[int] = None,
    L: int = 1,
    seed: int = 0,
    mode: str = "random",
    causal: bool = False,
    tau: Optional[float] = None,
    eta: float = 1.0,
    epsilon: float = 1.0,
) -> ModelParams:
    """Deterministic initialization.

    ``random``: orthonormal banks, Gaussian MLP weights (std 0.02), zero biases,
    identity norms, ``tau`` default 1. ``oracle-ready``: same banks but a zero
    MLP and ``tau`` default ``1e-2 / alpha``, i.e. an attention-only descent
    stack whose banks can be swapped for oracle bases.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    h = 4 * d if h is None else h
    if min(d, p, K, h) < 1 or L < 0:
        raise DimensionError("d, p, K, h must be >= 1 and L >= 0")
    if p > d:
        raise DimensionError(f"p={p} exceeds d={d}")
    f = SpectralFn.from_epsilon(d, epsilon)
    if tau is None:
        tau = 1.0 if mode == "random" else 1e-2 / f.alpha
    tp = TssaParams(tau=tau, eta=eta, f=f, epsilon=epsilon)
    attn: AttnParams = CausalParams(tp) if causal else tp

    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(L):
        seeds = rng.integers(0, 2**63 - 1, size=K)
        bank = ProjectionBank(np.stack([random_orthonormal(d, p, int(s)) for s in seeds]))
        if mode == "random":
            w1 = 0.02 * rng.standard_normal((d, h))
            w2 = 0.02 * rng.standard_normal((h, d))
        else:
            w1, w2 = np.zeros((d, h)), np.zeros((h, d))
        layers.append(
            BlockParams(
                bank=bank,
                attn=attn,
                mlp_w1=w1,
                mlp_w2=w2,
                mlp_b1=np.zeros(h),
                mlp_b2=np.zeros(d),
                norm1=LayerNormParams.identity(d),
                norm2=LayerNormParams.identity(d),
            )
        )
    return ModelParams(tuple(layers), d, p, K, h)
