"""``tost`` command line: verification suites and benchmarks.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from threadpoolctl import threadpool_limits

from . import checks, harness
from .errors import TostError
from .reports import FORMATS, bench_document, csv_text, json_text, suite_document, write_text

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "TOST_THREADS"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    d: Optional[int] = None
    p: Optional[int] = None
    K: Optional[int] = None
    n: Optional[int] = None
    L: Optional[int] = None
    h: Optional[int] = None
    tau: Optional[float] = None
    eta: Optional[float] = None
    epsilon: Optional[float] = None
    noise_std: Optional[float] = None
    seed: int = 0
    trials: Optional[int] = None
    output: Optional[str] = None
    format: str = "csv"
    precision: str = "double"
    threads: int = 1
    mode: Optional[str] = None
    tokens_per_group: Optional[int] = None
    inject_fault: Optional[str] = None
    n_grid: Optional[list] = None
    reps: Optional[int] = None
    ops: Optional[list] = None
    assert_slopes: bool = False

    def recorded(self) -> dict:
        """Fields written into reports (the output path is not part of the run)."""
        out = asdict(self)
        out.pop("output")
        return out


# per-command defaults; anything not listed stays None / dataclass default
DEFAULTS = {
    "bound-check": dict(trials=1000, d=12, n=20, K=4),
    "strict-gap": dict(trials=100, d=12, n=20, K=4),
    "grad-check": dict(trials=100, d=8, n=10, K=4),
    "equivalence": dict(trials=100, d=8, n=32, K=4),
    "descent": dict(trials=100, d=8, n=12, K=4),
    "layerwise": dict(d=16, p=4, K=4, L=8, tokens_per_group=12, eta=1e-2, epsilon=1.0, noise_std=0.0, mode="oracle"),
    "bench": dict(d=128, K=8, p=16, reps=5, n_grid=list(harness.DEFAULT_GRID), ops=list(harness.BENCH_OPS)),
}

_POSITIVE = ("d", "p", "K", "n", "h", "trials", "tokens_per_group", "reps", "threads")


def _threads_default() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={raw!r} is not an integer") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tost", description="Verification suites and benchmarks for token-statistics attention.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="<subcommand>")

    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    g.add_argument("--seed", type=int)
    g.add_argument("--output", help="report path (default: tost-<subcommand>.<format>)")
    g.add_argument("--format", choices=FORMATS)
    g.add_argument("--threads", type=int, help=f"BLAS thread count (default: ${THREADS_ENV} or 1)")

    dims = argparse.ArgumentParser(add_help=False)
    g = dims.add_argument_group("dimensions")
    for name in ("d", "p", "K", "n", "L", "h"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--trials", type=int)

    scalars = argparse.ArgumentParser(add_help=False)
    g = scalars.add_argument_group("scalars")
    for name in ("tau", "eta", "epsilon"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--noise-std", dest="noise_std", type=float)

    helps = {
        "bound-check": "variational upper bound and oracle tightness trials",
        "strict-gap": "positive gap for non-diagonalizing banks",
        "grad-check": "analytic gradient vs central finite differences",
        "equivalence": "operator identities, causality, streaming and permutation checks",
        "descent": "one TSSA step lowers the variational compression",
        "layerwise": "per-layer compression trace of an attention-only stack",
        "bench": "time and memory scaling of tssa, causal tssa and the quadratic baseline",
    }
    subs = {}
    for name, text in helps.items():
        subs[name] = sub.add_parser(name, help=text, description=text, parents=[common, dims, scalars])
    subs["grad-check"].add_argument("--inject-fault", dest="inject_fault", choices=["sign-flip"], help="negate the analytic gradient (checker self-test)")
    lw = subs["layerwise"]
    lw.add_argument("--mode", choices=["oracle", "fixed"])
    lw.add_argument("--tokens-per-group", dest="tokens_per_group", type=int)
    b = subs["bench"]
    b.add_argument("--n-grid", dest="n_grid", type=_int_list, help="comma-separated token counts")
    b.add_argument("--reps", type=int)
    b.add_argument("--ops", type=_str_list, help=f"comma-separated subset of {','.join(harness.BENCH_OPS)}")
    b.add_argument("--precision", choices=["double", "single"])
    b.add_argument("--assert", dest="assert_slopes", action="store_true", default=None, help="exit 1 if a slope or memory window is violated")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    values = dict(DEFAULTS[args.command])
    values["threads"] = _threads_default()
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update({k: v for k, v in loaded.items() if k != "command"})
    for k, v in vars(args).items():
        if k not in ("command", "config") and v is not None:
            values[k] = v
    cfg = RunConfig(command=args.command, **values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    for name in _POSITIVE:
        v = getattr(cfg, name)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1, got {v}")
    if cfg.L is not None and cfg.L < 0:
        raise UsageError(f"--L must be >= 0, got {cfg.L}")
    if cfg.seed is None or cfg.seed < 0:
        raise UsageError("a non-negative --seed is required")
    if cfg.format not in FORMATS:
        raise UsageError(f"--format must be one of {FORMATS}")
    for name in ("tau", "eta", "epsilon"):
        v = getattr(cfg, name)
        if v is not None and not v > 0:
            raise UsageError(f"--{name} must be positive")
    if cfg.noise_std is not None and cfg.noise_std < 0:
        raise UsageError("--noise-std must be non-negative")


def _emit(cfg: RunConfig, doc: dict, rows: list[dict], extra: dict) -> Path:
    path = cfg.output or f"tost-{cfg.command}.{cfg.format}"
    text = json_text(doc) if cfg.format == "json" else csv_text(rows, extra=extra)
    return write_text(path, text)


def _finish_suite(cfg: RunConfig, result: checks.SuiteResult) -> int:
    doc = suite_document(cfg.command, cfg.seed, cfg.recorded(), result.passed, result.summary, result.rows)
    path = _emit(cfg, doc, result.rows, {"seed": cfg.seed})
    print(f"{cfg.command} seed={cfg.seed}: {'PASS' if result.passed else 'FAIL'}")
    for k, v in doc["summary"].items():
        print(f"  {k}: {v}")
    print(f"  report: {path}")
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_bound_check(cfg: RunConfig) -> int:
    return _finish_suite(cfg, checks.bound_suite(cfg.trials, cfg.seed, max_d=cfg.d, max_n=cfg.n, max_K=cfg.K))


def cmd_strict_gap(cfg: RunConfig) -> int:
    if cfg.d < 2 or cfg.n < 2:
        raise UsageError("strict-gap needs --d >= 2 and --n >= 2")
    return _finish_suite(cfg, checks.strict_gap_suite(cfg.trials, cfg.seed, max_d=cfg.d, max_n=cfg.n, max_K=cfg.K))


def cmd_grad_check(cfg: RunConfig) -> int:
    return _finish_suite(cfg, checks.grad_suite(cfg.trials, cfg.seed, max_d=cfg.d, max_n=cfg.n, max_K=cfg.K, fault=cfg.inject_fault))


def cmd_equivalence(cfg: RunConfig) -> int:
    result = checks.equivalence_suite(cfg.trials, cfg.seed, causal_trials=max(1, cfg.trials // 2), max_n=cfg.n)
    return _finish_suite(cfg, result)


def cmd_descent(cfg: RunConfig) -> int:
    return _finish_suite(cfg, checks.descent_suite(cfg.trials, cfg.seed, max_d=cfg.d, max_n=cfg.n, max_K=cfg.K))


def cmd_layerwise(cfg: RunConfig) -> int:
    spec = harness.SynthSpec(cfg.d, cfg.p, cfg.K, cfg.tokens_per_group, cfg.noise_std, cfg.seed)
    trace = harness.layerwise_experiment(spec, cfg.L, tau=cfg.tau, mode=cfg.mode, eta=cfg.eta, epsilon=cfg.epsilon)
    values = [s.compression_var for s in trace]
    rows = [s._asdict() for s in trace]
    monotone = harness.is_non_increasing(values)
    passed = monotone if cfg.mode == "oracle" else True
    summary = dict(
        mode=cfg.mode,
        layers=cfg.L,
        first=values[0],
        last=values[-1],
        total_decrease=values[0] - values[-1],
        non_increasing=monotone,
        asserted=cfg.mode == "oracle",
    )
    return _finish_suite(cfg, checks.SuiteResult("layerwise", rows, summary, passed))


def cmd_bench(cfg: RunConfig) -> int:
    report = harness.bench_scaling(
        ops=cfg.ops,
        n_grid=cfg.n_grid,
        d=cfg.d,
        K=cfg.K,
        p=cfg.p,
        reps=cfg.reps,
        seed=cfg.seed,
        precision=cfg.precision,
        threads=cfg.threads,
        progress=lambda line: print(line, flush=True),
    )
    results = harness.check_bench(report)
    ok = all(r[1] for r in results)
    doc = bench_document(report.to_dict(), cfg.recorded(), ok, results)
    rows = [dict(c.__dict__, slope=report.slopes[c.op]) for c in report.cells]
    path = _emit(cfg, doc, rows, {"seed": cfg.seed, "threads": cfg.threads, "precision": cfg.precision})
    print(f"bench seed={cfg.seed} threads={cfg.threads} precision={cfg.precision}")
    for op, s in report.slopes.items():
        print(f"  slope[{op}] = {s:.3f}")
    for name, passed, detail in results:
        print(f"  {'ok  ' if passed else 'FAIL'} {name}: {detail}")
    print(f"  report: {path}")
    return EXIT_FAIL if cfg.assert_slopes and not ok else EXIT_OK


COMMANDS = {
    "bound-check": cmd_bound_check,
    "strict-gap": cmd_strict_gap,
    "grad-check": cmd_grad_check,
    "equivalence": cmd_equivalence,
    "descent": cmd_descent,
    "layerwise": cmd_layerwise,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[cfg.command](cfg)
    except (UsageError, TostError, ValueError, TypeError) as exc:
        print(f"tost {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
