"""Randomized verification suites.

Each suite is deterministic in its seed and returns plain row dicts (one
per trial or per check) plus a summary, so the CLI can serialize them and
the tests can assert on them.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .causal import CausalParams, CausalStream, causal_membership, causal_tssa_attention, causal_token_update
from .coding_rate import (
    IMAGE_TOL,
    ProjectionBank,
    SpectralFn,
    general_compression,
    grad_variational,
    group_covariance,
    image_residual,
    oracle_bases,
    variational_compression,
)
from .errors import PreconditionError, SpecError
from .linalg import haar_orthonormal, softmax
from .tssa import (
    TssaParams,
    attention_from_membership,
    estimate_membership,
    per_token_update,
    tssa_attention,
    token_update,
)

BOUND_TOL = 1e-8
STRICT_GAP = 1e-6
STRICT_OFFDIAG = 1e-3
GRAD_TOL = 1e-5
FD_STEP = 1e-5
IDENTITY_TOL = 1e-10
PERM_TOL = 1e-12
DESCENT_MARGIN = 1e-12
DESCENT_MIN_GRAD = 1e-9


@dataclass
class SuiteResult:
    name: str
    rows: list[dict]
    summary: dict
    passed: bool


def _need_trials(trials: int) -> None:
    if trials < 1:
        raise SpecError("trials must be at least 1")


def random_membership(rng: np.random.Generator, n: int, K: int, hard: bool = False) -> np.ndarray:
    if hard:
        return np.eye(K)[rng.integers(0, K, size=n)]
    return softmax(rng.normal(scale=2.0, size=(n, K)), axis=1)


def random_bank(rng: np.random.Generator, K: int, d: int, p: int, orthonormal: bool = True) -> ProjectionBank:
    if orthonormal:
        return ProjectionBank(np.stack([haar_orthonormal(rng, d, p) for _ in range(K)]))
    return ProjectionBank(rng.standard_normal((K, d, p)))


def _span_bank(rng, span: np.ndarray, K: int, p: int) -> ProjectionBank:
    """Orthonormal ``d x p`` bases whose span contains ``span`` (``d x r``, orthonormal)."""
    d, r = span.shape
    mats = []
    for _ in range(K):
        extra = haar_orthonormal(rng, d, d)
        extra -= span @ (span.T @ extra)
        comp, _ = np.linalg.qr(extra)
        Q = np.hstack([span, comp[:, : p - r]])
        mats.append(Q @ haar_orthonormal(rng, p, p))
    return ProjectionBank(np.stack(mats))


# -- variational bound ----------------------------------------------------


def bound_suite(trials: int = 1000, seed: int = 0, max_d: int = 12, max_n: int = 20, max_K: int = 4) -> SuiteResult:
    """Upper-bound and tightness trials.

    Even trials use full-rank tokens with a random ``d x d`` orthogonal bank
    and the full oracle bank. Odd trials use rank-``r`` tokens with a
    ``d x p`` bank (``r <= p <= d``) containing their span, and the rank-``r``
    oracle bank.
    """
    _need_trials(trials)
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        d = int(rng.integers(1, max_d + 1))
        n = int(rng.integers(1, max_n + 1))
        K = int(rng.integers(1, max_K + 1))
        f = SpectralFn.from_epsilon(d, float(rng.uniform(0.5, 2.0)))
        Pi = random_membership(rng, n, K, hard=(t % 5 == 4))
        lowrank = t % 2 == 1 and d >= 2
        if lowrank:
            r = int(rng.integers(1, d))
            span = haar_orthonormal(rng, d, r)
            Z = span @ rng.standard_normal((r, n))
        else:
            r = d
            Z = rng.standard_normal((d, n))
        exact = general_compression(Z, Pi, f)

        def record(kind, bank, oracle):
            resid = image_residual(Z, Pi, bank)
            if resid > IMAGE_TOL:
                raise PreconditionError(f"trial {t} ({kind}): image condition violated ({resid:.2e})")
            gap = variational_compression(Z, Pi, bank, f) - exact
            bad = abs(gap) > BOUND_TOL if oracle else gap < -BOUND_TOL
            rows.append(dict(trial=t, bank=kind, d=d, n=n, K=K, p=bank.p, rank=r, gap=gap, violation=bad))

        if lowrank:
            p = int(rng.integers(r, d + 1))
            record("span", _span_bank(rng, span, K, p), False)
            record("oracle", oracle_bases(Z, Pi, r), True)
        else:
            record("random", random_bank(rng, K, d, d), False)
            record("oracle", oracle_bases(Z, Pi, d), True)

    bound_gaps = [r["gap"] for r in rows if r["bank"] != "oracle"]
    oracle_gaps = [abs(r["gap"]) for r in rows if r["bank"] == "oracle"]
    violations = sum(r["violation"] for r in rows)
    summary = dict(
        trials=trials,
        seed=seed,
        min_gap=min(bound_gaps),
        max_abs_oracle_gap=max(oracle_gaps),
        violations=violations,
    )
    return SuiteResult("bound", rows, summary, violations == 0)


def strict_gap_suite(trials: int = 100, seed: int = 0, max_d: int = 12, max_n: int = 20, max_K: int = 4) -> SuiteResult:
    """Non-diagonalizing banks leave a positive gap for the strictly concave log rate.

    Each trial starts from the full oracle bank and rotates, for one group,
    the eigenvectors of its largest and smallest eigenvalues by an angle in
    ``[pi/8, pi/4]``. Trials whose rotated covariance has an off-diagonal
    entry below ``1e-3`` are redrawn.
    """
    _need_trials(trials)
    rng = np.random.default_rng(seed)
    rows = []
    while len(rows) < trials:
        d = int(rng.integers(2, max_d + 1))
        n = int(rng.integers(2, max_n + 1))
        K = int(rng.integers(1, max_K + 1))
        f = SpectralFn.from_epsilon(d, float(rng.uniform(0.5, 2.0)))
        Z = rng.standard_normal((d, n))
        Pi = random_membership(rng, n, K)
        bases = oracle_bases(Z, Pi, d).bases.copy()
        k = int(rng.integers(0, K))
        theta = float(rng.uniform(np.pi / 8, np.pi / 4))
        c, s = np.cos(theta), np.sin(theta)
        u0, u1 = bases[k][:, 0].copy(), bases[k][:, -1].copy()
        bases[k][:, 0] = c * u0 - s * u1
        bases[k][:, -1] = s * u0 + c * u1
        bank = ProjectionBank(bases)
        C = bank[k].T @ group_covariance(Z, Pi[:, k]) @ bank[k]
        offdiag = float(np.max(np.abs(C - np.diag(np.diag(C)))))
        if offdiag < STRICT_OFFDIAG:
            continue
        gap = variational_compression(Z, Pi, bank, f) - general_compression(Z, Pi, f)
        rows.append(dict(trial=len(rows), d=d, n=n, K=K, group=k, offdiag=offdiag, gap=gap, violation=gap <= STRICT_GAP))
    violations = sum(r["violation"] for r in rows)
    summary = dict(trials=trials, seed=seed, min_gap=min(r["gap"] for r in rows), violations=violations)
    return SuiteResult("strict_gap", rows, summary, violations == 0)


# -- gradient -------------------------------------------------------------


def finite_difference_grad(fn, Z: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``fn`` at every entry of ``Z``."""
    g = np.empty_like(Z)
    for idx in np.ndindex(*Z.shape):
        zp, zm = Z.copy(), Z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (fn(zp) - fn(zm)) / (2.0 * h)
    return g


def relative_error(approx: np.ndarray, reference: np.ndarray) -> float:
    """``max |approx - reference| / max(max |reference|, 1e-12)``."""
    return float(np.max(np.abs(approx - reference)) / max(float(np.max(np.abs(reference))), 1e-12))


def grad_suite(trials: int = 100, seed: int = 0, max_d: int = 8, max_n: int = 10, max_K: int = 4, fault: str | None = None) -> SuiteResult:
    """Analytic gradient of the variational compression vs central differences.

    Every fifth trial is the single-group, identity-bank case. ``fault`` set to
    ``"sign-flip"`` negates the analytic gradient (negative control).
    """
    _need_trials(trials)
    if fault not in (None, "sign-flip"):
        raise SpecError(f"unknown fault {fault!r}")
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        d = int(rng.integers(1, max_d + 1))
        n = int(rng.integers(1, max_n + 1))
        f = SpectralFn.from_epsilon(d, float(rng.uniform(0.5, 2.0)))
        Z = rng.standard_normal((d, n))
        if t % 5 == 0:
            K, p = 1, d
            bank = ProjectionBank(np.eye(d)[None])
            Pi = np.ones((n, 1))
        else:
            K = int(rng.integers(1, max_K + 1))
            p = int(rng.integers(1, d + 1))
            bank = random_bank(rng, K, d, p, orthonormal=bool(t % 2))
            Pi = random_membership(rng, n, K)
        g = grad_variational(Z, Pi, bank, f)
        if fault == "sign-flip":
            g = -g
        fd = finite_difference_grad(lambda X: variational_compression(X, Pi, bank, f), Z)
        err = relative_error(g, fd)
        rows.append(dict(trial=t, d=d, n=n, K=K, p=p, max_abs_err=float(np.max(np.abs(g - fd))), rel_err=err, passed=err <= GRAD_TOL))
    worst = max(r["rel_err"] for r in rows)
    summary = dict(trials=trials, seed=seed, fault=fault or "none", max_rel_err=worst, tolerance=GRAD_TOL)
    return SuiteResult("grad", rows, summary, worst <= GRAD_TOL)


# -- operator identities --------------------------------------------------


def _instance(rng, n=None, max_d=8, max_n=12, max_K=4, w=False, bias=False):
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(1, max_n + 1)) if n is None else n
    K = int(rng.integers(1, max_K + 1))
    p = int(rng.integers(1, d + 1))
    Z = rng.standard_normal((d, n))
    bank = random_bank(rng, K, d, p, orthonormal=bool(rng.integers(0, 2)))
    params = TssaParams(
        tau=float(rng.uniform(0.1, 2.0)),
        eta=float(rng.uniform(0.2, 2.0)),
        normalize_membership=bool(rng.integers(0, 2)),
        W=rng.standard_normal((d, p * K)) if w else None,
    )
    b = rng.standard_normal((n, K)) if bias else None
    return Z, bank, params, b


def _row(name, trials, metric, threshold, passed, **extra):
    return dict(check=name, trials=trials, metric=float(metric), threshold=threshold, passed=bool(passed), **extra)


def check_gradient_identity(rng, trials: int) -> dict:
    worst = 0.0
    for t in range(trials):
        Z, bank, params, _ = _instance(rng, n=1 if t == 0 else None)
        Pi = estimate_membership(Z, bank, params)
        f = params.spectral(Z.shape[0])
        diff = tssa_attention(Z, bank, params) + params.tau * grad_variational(Z, Pi, bank, f)
        worst = max(worst, float(np.max(np.abs(diff))))
    return _row("tssa_equals_neg_tau_grad", trials, worst, IDENTITY_TOL, worst <= IDENTITY_TOL)


def check_per_token_form(rng, trials: int) -> dict:
    worst = 0.0
    for t in range(trials):
        Z, bank, params, _ = _instance(rng, n=1 if t == 0 else None)
        Pi = estimate_membership(Z, bank, params)
        diff = token_update(Z, bank, params) - per_token_update(Z, Pi, bank, params)
        worst = max(worst, float(np.max(np.abs(diff))))
    return _row("per_token_form", trials, worst, IDENTITY_TOL, worst <= IDENTITY_TOL)


def check_causality(rng, trials: int, max_n: int = 32) -> dict:
    mismatches = 0
    for t in range(trials):
        Z, bank, params, b = _instance(rng, n=1 if t == 0 else None, max_n=max_n, w=bool(t % 3 == 1), bias=bool(t % 2))
        cp = CausalParams(params, b)
        ref = causal_tssa_attention(Z, bank, cp)
        ref_pi = causal_membership(Z, bank, cp)
        n = Z.shape[1]
        for j in range(n - 1):
            Zp = Z.copy()
            Zp[:, j + 1 :] = 10.0 * rng.standard_normal((Z.shape[0], n - j - 1))
            out = causal_tssa_attention(Zp, bank, cp)
            pi = causal_membership(Zp, bank, cp)
            if not (np.array_equal(out[:, : j + 1], ref[:, : j + 1]) and np.array_equal(pi[: j + 1], ref_pi[: j + 1])):
                mismatches += 1
    return _row("causality_bitwise", trials, mismatches, 0, mismatches == 0)


def check_causal_prefix(rng, trials: int, max_n: int = 32) -> list[dict]:
    """Causal column ``j`` vs the non-causal operator on the length-``j`` prefix.

    Without membership normalization the whole operator matches. With it,
    the causal rows use their own prefix normalizers, so the reference is the
    non-causal operator evaluated at the causal membership rows.
    """
    worst_plain = worst_frozen = 0.0
    for t in range(trials):
        Z, bank, params, _ = _instance(rng, n=1 if t == 0 else None, max_n=max_n)
        n = Z.shape[1]
        plain = TssaParams(params.tau, params.eta, normalize_membership=False)
        out = causal_tssa_attention(Z, bank, CausalParams(plain))
        for j in range(n):
            ref = tssa_attention(Z[:, : j + 1], bank, plain)[:, j]
            worst_plain = max(worst_plain, float(np.max(np.abs(out[:, j] - ref))))
        normed = TssaParams(params.tau, params.eta, normalize_membership=True)
        cp = CausalParams(normed)
        out = causal_tssa_attention(Z, bank, cp)
        Pi = causal_membership(Z, bank, cp)
        for j in range(n):
            ref = attention_from_membership(Z[:, : j + 1], Pi[: j + 1], bank, normed)[:, j]
            worst_frozen = max(worst_frozen, float(np.max(np.abs(out[:, j] - ref))))
    return [
        _row("causal_prefix_oracle", trials, worst_plain, IDENTITY_TOL, worst_plain <= IDENTITY_TOL),
        _row("causal_prefix_oracle_normalized", trials, worst_frozen, IDENTITY_TOL, worst_frozen <= IDENTITY_TOL),
    ]


def check_streaming(rng, trials: int, max_n: int = 32) -> dict:
    mismatches = 0
    for t in range(trials):
        Z, bank, params, b = _instance(rng, n=1 if t == 0 else None, max_n=max_n, w=bool(t % 3 == 1), bias=bool(t % 2))
        cp = CausalParams(params, b)
        if not np.array_equal(CausalStream(bank, cp).run(Z), causal_tssa_attention(Z, bank, cp)):
            mismatches += 1
    return _row("streaming_bitwise", trials, mismatches, 0, mismatches == 0)


def check_single_token(rng, trials: int) -> dict:
    worst = 0.0
    for _ in range(trials):
        Z, bank, params, _ = _instance(rng, n=1)
        diff = causal_token_update(Z, bank, CausalParams(params)) - token_update(Z, bank, params)
        worst = max(worst, float(np.max(np.abs(diff))))
    return _row("single_token_causal_equals_tssa", trials, worst, IDENTITY_TOL, worst <= IDENTITY_TOL)


def check_permutation(rng, trials: int, n: int = 7) -> dict:
    worst = 0.0
    swaps = 0
    for t in range(trials):
        Z, bank, params, _ = _instance(rng, n=n, w=bool(t % 2))
        out = tssa_attention(Z, bank, params)
        Pi = estimate_membership(Z, bank, params)
        for i, j in combinations(range(n), 2):
            perm = np.arange(n)
            perm[[i, j]] = perm[[j, i]]
            worst = max(
                worst,
                float(np.max(np.abs(tssa_attention(Z[:, perm], bank, params) - out[:, perm]))),
                float(np.max(np.abs(estimate_membership(Z[:, perm], bank, params) - Pi[perm]))),
            )
            swaps += 1
    return _row("permutation_equivariance", trials, worst, PERM_TOL, worst <= PERM_TOL, transpositions=swaps)


def equivalence_suite(trials: int = 100, seed: int = 0, causal_trials: int = 50, max_n: int = 32) -> SuiteResult:
    _need_trials(trials)
    rng = np.random.default_rng(seed)
    rows = [
        check_gradient_identity(rng, trials),
        check_per_token_form(rng, trials),
        check_causality(rng, causal_trials, max_n),
        *check_causal_prefix(rng, causal_trials, max_n),
        check_streaming(rng, causal_trials, max_n),
        check_single_token(rng, 10),
        check_permutation(rng, 10),
    ]
    for r in rows:
        r["seed"] = seed
    passed = all(r["passed"] for r in rows)
    summary = dict(seed=seed, trials=trials, causal_trials=causal_trials, failed=[r["check"] for r in rows if not r["passed"]])
    return SuiteResult("equivalence", rows, summary, passed)


# -- descent --------------------------------------------------------------


def descent_suite(trials: int = 100, seed: int = 0, max_d: int = 8, max_n: int = 12, max_K: int = 4) -> SuiteResult:
    """One residual TSSA step with ``tau = 1e-3 / alpha`` lowers the variational
    compression at the frozen membership."""
    _need_trials(trials)
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        Z, bank, params, _ = _instance(rng, max_d=max_d, max_n=max_n, max_K=max_K)
        f = params.spectral(Z.shape[0])
        params = TssaParams(1e-3 / f.alpha, params.eta, normalize_membership=params.normalize_membership)
        Pi = estimate_membership(Z, bank, params)
        gnorm = float(np.linalg.norm(grad_variational(Z, Pi, bank, f)))
        before = variational_compression(Z, Pi, bank, f)
        after = variational_compression(token_update(Z, bank, params), Pi, bank, f)
        skipped = gnorm < DESCENT_MIN_GRAD
        ok = skipped or before - after > DESCENT_MARGIN
        rows.append(dict(trial=t, grad_norm=gnorm, before=before, after=after, decrease=before - after, skipped=skipped, passed=ok))
    failures = sum(not r["passed"] for r in rows)
    summary = dict(
        trials=trials,
        seed=seed,
        skipped=sum(r["skipped"] for r in rows),
        min_decrease=min(r["decrease"] for r in rows if not r["skipped"]),
        failures=failures,
    )
    return SuiteResult("descent", rows, summary, failures == 0)
