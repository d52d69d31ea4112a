"""Synthetic data, the quadratic attention baseline, the layer-wise
compression experiment and time/memory scaling benchmarks."""

from __future__ import annotations

import gc
import time
import tracemalloc
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .causal import CausalParams, causal_tssa_attention
from .coding_rate import (
    ProjectionBank,
    SpectralFn,
    grad_variational,
    oracle_bases,
    variational_compression,
)
from .errors import DimensionError, SpecError
from .linalg import as_matrix, haar_orthonormal, random_orthonormal, softmax
from .tssa import TssaParams, estimate_membership, tssa_attention


@dataclass(frozen=True)
class SynthSpec:
    d: int = 16
    p: int = 4
    K: int = 4
    tokens_per_group: int = 12
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.p, self.K, self.tokens_per_group) < 1:
            raise SpecError("d, p, K and tokens_per_group must be positive")
        if self.p * self.K > self.d:
            raise SpecError(f"p*K = {self.p * self.K} exceeds d = {self.d}")
        if self.noise_std < 0:
            raise SpecError("noise_std must be non-negative")

    @property
    def n(self) -> int:
        return self.K * self.tokens_per_group


class SynthData(NamedTuple):
    Z: np.ndarray
    labels: np.ndarray
    bases: np.ndarray  # (K, d, p)


def synth_subspaces(spec: SynthSpec) -> SynthData:
    """Tokens drawn from ``K`` mutually orthogonal ``p``-dimensional subspaces.

    The subspaces are consecutive column blocks of one random orthogonal
    matrix; coefficients are standard Gaussian and ambient Gaussian noise of
    scale ``noise_std`` is added. Tokens are ordered by group.
    """
    rng = np.random.default_rng(spec.seed)
    Q = haar_orthonormal(rng, spec.d, spec.d)
    bases = np.stack([Q[:, k * spec.p : (k + 1) * spec.p] for k in range(spec.K)])
    m = spec.tokens_per_group
    Z = np.hstack([bases[k] @ rng.standard_normal((spec.p, m)) for k in range(spec.K)])
    if spec.noise_std > 0:
        Z = Z + spec.noise_std * rng.standard_normal(Z.shape)
    return SynthData(Z, np.repeat(np.arange(spec.K), m), bases)


def hard_membership(labels, K: int) -> np.ndarray:
    return np.eye(K)[np.asarray(labels)]


SDPA_BLOCK = 1 << 16  # score entries per block (512 KiB in double precision)


def baseline_sdpa(Z, Wq, Wk, Wv, return_weights: bool = False):
    """Single-head scaled dot-product attention, ``p x n`` output.

    Materializes the full ``n x n`` weight matrix (peak footprint: one
    ``n x n`` buffer). Scores are produced a block of query rows at a time
    and shifted, exponentiated and summed while the block is still in cache;
    the ``1/sqrt(p)`` scale goes on the queries and the row normalization on
    the ``p x n`` output.
    """
    Z = np.asarray(Z)
    if Z.ndim != 2:
        raise DimensionError("Z must be 2-D")
    Wq, Wk, Wv = (np.asarray(W, dtype=Z.dtype) for W in (Wq, Wk, Wv))
    if not (Wq.shape == Wk.shape == Wv.shape) or Wq.shape[0] != Z.shape[0]:
        raise DimensionError("Wq, Wk, Wv must all be d x p")
    p = Wq.shape[1]
    Q, Kt, V = Wq.T @ Z, Wk.T @ Z, Wv.T @ Z
    Q *= 1.0 / np.sqrt(p)
    Qt = np.ascontiguousarray(Q.T)
    n = Z.shape[1]
    A = np.empty((n, n), dtype=Qt.dtype)
    row_sum = np.empty(n, dtype=Qt.dtype)
    step = max(1, SDPA_BLOCK // n)
    for i in range(0, n, step):
        blk = A[i : i + step]
        np.matmul(Qt[i : i + step], Kt, out=blk)
        blk -= blk.max(axis=1, keepdims=True)
        np.exp(blk, out=blk)
        row_sum[i : i + step] = blk.sum(axis=1)
    out = (A @ V.T).T / row_sum
    if return_weights:
        A /= row_sum[:, None]
        return out, A
    return out


class LayerStat(NamedTuple):
    layer: int
    compression_var: float
    grad_norm: float


def layerwise_experiment(
    spec: SynthSpec,
    L: int,
    tau: Optional[float] = None,
    mode: str = "oracle",
    eta: float = 1e-2,
    epsilon: float = 1.0,
    normalize_membership: bool = True,
    Z: Optional[np.ndarray] = None,
) -> list[LayerStat]:
    """Run an ``L``-layer attention-only stack and record the variational
    compression at the input of every layer and at the output (``L + 1`` rows).

    ``oracle``: each layer first estimates the membership with the previous
    bank, replaces the bank with ``oracle_bases`` for that membership,
    re-estimates the membership, records, then applies TSSA. The very first
    bank is the oracle bank of the true labels. ``fixed``: a random bank
    drawn once from ``spec.seed`` is used throughout.

    ``tau`` defaults to ``1e-2 / alpha``.
    """
    if mode not in ("oracle", "fixed"):
        raise SpecError(f"mode must be 'oracle' or 'fixed', got {mode!r}")
    if L < 0:
        raise SpecError("L must be non-negative")
    data = synth_subspaces(spec)
    Z = data.Z if Z is None else as_matrix(Z, "Z")
    f = SpectralFn.from_epsilon(spec.d, epsilon)
    tau = 1e-2 / f.alpha if tau is None else tau
    params = TssaParams(tau=tau, eta=eta, f=f, normalize_membership=normalize_membership)

    if mode == "oracle":
        bank = oracle_bases(Z, hard_membership(data.labels, spec.K), spec.p)
    else:
        rng = np.random.default_rng(spec.seed)
        seeds = rng.integers(0, 2**63 - 1, size=spec.K)
        bank = ProjectionBank(np.stack([random_orthonormal(spec.d, spec.p, int(s)) for s in seeds]))

    trace = []
    for layer in range(L + 1):
        if mode == "oracle":
            bank = oracle_bases(Z, estimate_membership(Z, bank, params), spec.p)
        Pi = estimate_membership(Z, bank, params)
        g = grad_variational(Z, Pi, bank, f)
        trace.append(LayerStat(layer, variational_compression(Z, Pi, bank, f), float(np.linalg.norm(g))))
        if layer < L:
            Z = Z + tssa_attention(Z, bank, params)
    return trace


def is_non_increasing(values: Sequence[float], slack: float = 1e-9) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def peak_alloc_bytes(fn: Callable, *args, **kwargs):
    """Call ``fn`` and return ``(result, peak bytes allocated during the call)``.

    Counts bytes requested through the Python and NumPy allocators (NumPy
    reports its data buffers to ``tracemalloc``); the returned value is
    included. The cyclic garbage collector is paused during the call so its
    timing does not leak into the count.
    """
    was_tracing = tracemalloc.is_tracing()
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    if not was_tracing:
        tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        result = fn(*args, **kwargs)
        peak = tracemalloc.get_traced_memory()[1] - base
    finally:
        if not was_tracing:
            tracemalloc.stop()
        if gc_was_enabled:
            gc.enable()
    return result, max(int(peak), 0)


BENCH_OPS = ("tssa", "causal", "sdpa")
DEFAULT_GRID = (1024, 2048, 4096, 8192, 16384)
SCHEMA_VERSION = 1


@dataclass
class BenchCell:
    op: str
    n: int
    d: int
    K: int
    p: int
    median_s: float
    iqr_s: float
    peak_bytes: int
    reps: int


@dataclass
class BenchReport:
    cells: list[BenchCell]
    slopes: dict[str, float]
    threads: int
    precision: str
    seed: int
    reps: int
    schema_version: int = SCHEMA_VERSION
    windows: dict[str, list[float]] = field(
        default_factory=lambda: {"tssa": [0.8, 1.3], "causal": [0.8, 1.3], "sdpa": [1.7, 2.3]}
    )

    def cells_for(self, op: str) -> list[BenchCell]:
        return sorted((c for c in self.cells if c.op == op), key=lambda c: c.n)

    def memory_growth(self, op: str) -> dict[int, float]:
        """Peak-memory ratio ``peak(4n) / peak(n)`` for every ``n`` with ``4n`` on the grid."""
        by_n = {c.n: c.peak_bytes for c in self.cells_for(op)}
        return {n: by_n[4 * n] / by_n[n] for n in by_n if 4 * n in by_n and by_n[n] > 0}

    def to_dict(self) -> dict:
        return {
            "schema": "tost.bench",
            "schema_version": self.schema_version,
            "seed": self.seed,
            "threads": self.threads,
            "precision": self.precision,
            "reps": self.reps,
            "slopes": self.slopes,
            "slope_windows": self.windows,
            "memory_growth_4x": {op: {str(k): v for k, v in self.memory_growth(op).items()} for op in self.slopes},
            "cells": [asdict(c) for c in self.cells],
        }


def loglog_slope(ns: Sequence[float], ts: Sequence[float]) -> float:
    return float(np.polyfit(np.log(ns), np.log(ts), 1)[0])


def bench_inputs(n: int, d: int, K: int, p: int, seed: int, dtype=np.float64):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((d, n)).astype(dtype)
    bank = ProjectionBank(np.stack([haar_orthonormal(rng, d, p) for _ in range(K)]))
    W = [(rng.standard_normal((d, p)) / np.sqrt(d)).astype(dtype) for _ in range(3)]
    return Z, bank, W


def _op_callable(op: str, Z, bank, W, params: TssaParams):
    if op == "tssa":
        return lambda: tssa_attention(Z, bank, params)
    if op == "causal":
        cp = CausalParams(params)
        return lambda: causal_tssa_attention(Z, bank, cp)
    if op == "sdpa":
        return lambda: baseline_sdpa(Z, *W)
    raise SpecError(f"unknown op {op!r}; choose from {BENCH_OPS}")


def bench_scaling(
    ops: Sequence[str] = BENCH_OPS,
    n_grid: Sequence[int] = DEFAULT_GRID,
    d: int = 128,
    K: int = 8,
    p: int = 16,
    reps: int = 5,
    seed: int = 0,
    precision: str = "double",
    threads: int = 1,
    progress: Optional[Callable[[str], None]] = None,
) -> BenchReport:
    """Median wall time (after one warm-up call) and peak allocation per op and ``n``.

    TSSA operators compute in double precision; ``precision='single'`` only
    changes the baseline's arithmetic.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 3:
        raise SpecError("benchmark grid needs at least 3 points")
    if reps < 5:
        raise SpecError("benchmark needs at least 5 repetitions")
    if precision not in ("double", "single"):
        raise SpecError(f"precision must be 'double' or 'single', got {precision!r}")
    for op in ops:
        if op not in BENCH_OPS:
            raise SpecError(f"unknown op {op!r}; choose from {BENCH_OPS}")
    dtype = np.float64 if precision == "double" else np.float32
    params = TssaParams(tau=1.0, eta=1.0)
    cells = []
    with threadpool_limits(limits=threads):
        for n in n_grid:
            Z, bank, W = bench_inputs(n, d, K, p, seed, dtype)
            Z64 = Z.astype(np.float64)
            for op in ops:
                call = _op_callable(op, Z if op == "sdpa" else Z64, bank, W, params)
                call()
                times = []
                for _ in range(reps):
                    t0 = time.perf_counter()
                    call()
                    times.append(time.perf_counter() - t0)
                _, peak = peak_alloc_bytes(call)
                q1, med, q3 = np.percentile(times, [25, 50, 75])
                cells.append(BenchCell(op, n, d, K, p, float(med), float(q3 - q1), peak, reps))
                if progress:
                    progress(f"{op:6s} n={n:6d} median={med:.4g}s peak={peak}B")
    slopes = {}
    for op in ops:
        rows = sorted((c for c in cells if c.op == op), key=lambda c: c.n)
        slopes[op] = loglog_slope([c.n for c in rows], [c.median_s for c in rows])
    return BenchReport(cells, slopes, threads, precision, seed, reps)


def check_bench(report: BenchReport) -> list[tuple[str, bool, str]]:
    """Slope windows and memory growth; ``[(name, passed, detail), ...]``."""
    out = []
    for op, s in report.slopes.items():
        lo, hi = report.windows[op]
        out.append((f"slope[{op}]", lo <= s <= hi, f"{s:.3f} in [{lo}, {hi}]"))
    for op in ("tssa", "causal"):
        if op in report.slopes:
            for n, r in report.memory_growth(op).items():
                out.append((f"mem4x[{op}, n={n}]", r <= 4.5, f"{r:.2f} <= 4.5"))
    if "sdpa" in report.slopes:
        for n, r in report.memory_growth("sdpa").items():
            if n >= 4096:
                out.append((f"mem4x[sdpa, n={n}]", r >= 12.0, f"{r:.2f} >= 12"))
    return out
