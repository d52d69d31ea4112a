"""Binary container for ``ModelParams``.

Layout (all little-endian; see docs/FORMATS.md)::

    b"TOST"  u32 version  u32 d  u32 p  u32 K  u32 h  u32 L
    per layer:
        bank            f64[K, d, p]
        attn record     f64[10]  tau, eta, alpha (0 = derive from epsilon),
                                 epsilon, normalize_membership, norm_eps,
                                 w_scaled, causal, has_W, bias_rows
        W               f64[d, p*K]        if has_W
        bias            f64[bias_rows, K]  if bias_rows > 0
        mlp_w1 f64[d, h]  mlp_w2 f64[h, d]  mlp_b1 f64[h]  mlp_b2 f64[d]
        norm1.scale f64[d]  norm1.shift f64[d]  norm2.scale f64[d]  norm2.shift f64[d]
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .causal import CausalParams
from .coding_rate import ProjectionBank, SpectralFn
from .errors import ValidationError
from .model import BlockParams, LayerNormParams, ModelParams
from .tssa import TssaParams

MAGIC = b"TOST"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
_ATTN_FIELDS = 10


def _put(buf: io.BytesIO, arr) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dumps(model: ModelParams) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, model.d, model.p, model.K, model.h, model.depth))
    for blk in model.layers:
        tp = blk.tssa
        bias = blk.attn.bias if blk.causal else None
        _put(buf, blk.bank.bases)
        _put(
            buf,
            [
                tp.tau,
                tp.eta,
                tp.f.alpha if tp.f is not None else 0.0,
                tp.epsilon,
                float(tp.normalize_membership),
                tp.norm_eps,
                float(tp.w_scaled),
                float(blk.causal),
                float(tp.W is not None),
                0.0 if bias is None else float(bias.shape[0]),
            ],
        )
        if tp.W is not None:
            _put(buf, tp.W)
        if bias is not None:
            _put(buf, bias)
        for arr in (blk.mlp_w1, blk.mlp_w2, blk.mlp_b1, blk.mlp_b2):
            _put(buf, arr)
        for norm in (blk.norm1, blk.norm2):
            _put(buf, norm.scale)
            _put(buf, norm.shift)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, *shape: int) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        end = self.pos + 8 * count
        if end > len(self.data):
            raise ValidationError("truncated TOST container")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos = end
        return arr.reshape(shape)


def loads(data: bytes) -> ModelParams:
    if len(data) < _HEADER.size:
        raise ValidationError("truncated TOST container")
    magic, version, d, p, K, h, L = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValidationError(f"unsupported container version {version}")
    r = _Reader(data)
    r.pos = _HEADER.size
    layers = []
    for _ in range(L):
        bank = ProjectionBank(r.take(K, d, p))
        tau, eta, alpha, eps, norm, norm_eps, w_scaled, causal, has_w, bias_rows = r.take(_ATTN_FIELDS)
        W = r.take(d, p * K) if has_w else None
        bias = r.take(int(bias_rows), K) if bias_rows else None
        tp = TssaParams(
            tau=tau,
            eta=eta,
            f=SpectralFn(alpha) if alpha > 0 else None,
            epsilon=eps,
            W=W,
            w_scaled=bool(w_scaled),
            normalize_membership=bool(norm),
            norm_eps=norm_eps,
        )
        attn = CausalParams(tp, bias) if causal else tp
        w1, w2, b1, b2 = r.take(d, h), r.take(h, d), r.take(h), r.take(d)
        n1 = LayerNormParams(r.take(d), r.take(d))
        n2 = LayerNormParams(r.take(d), r.take(d))
        layers.append(BlockParams(bank, attn, w1, w2, b1, b2, n1, n2))
    if r.pos != len(data):
        raise ValidationError("trailing bytes after TOST container")
    return ModelParams(tuple(layers), d, p, K, h)


def save_model(model: ModelParams, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path) -> ModelParams:
    return loads(Path(path).read_bytes())
