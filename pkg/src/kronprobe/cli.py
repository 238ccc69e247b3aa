"""Command-line front end: estimation, bound tables, Fréchet norms, and the
Monte Carlo experiment harness.

Subcommands map onto the library layers: `estimate-trace` / `estimate-norm`
run the probe estimators (optionally wrapped in a confidence certificate),
`bounds` prints the closed-form failure-probability table, `frechet-norm`
runs the two derivative-norm methods, and `experiment` reproduces the failure
curves and over/undershoot tables as CSV.  All output is deterministic in
(argv, seed): byte-identical stdout and CSV across runs.

Exit codes: 0 success, 2 usage error (argparse or precondition), 1 runtime
failure.  `KRONPROBE_THREADS` caps accelerator threads; `KRONPROBE_BACKEND`
selects the kernel backend (see the operators module).
"""

import argparse
import math
import os
import sys

import numpy as np

from . import bounds as bounds_module
from .bounds import BoundKind, BoundParams
from .errors import (
    IncompatibleCertificate,
    MatrixMarketFormatError,
    NonConvergenceError,
    OutOfValidityRegion,
    PsdAssertionError,
    UnreachableConfidence,
)
from .estimators import Target, certify, max_estimator, trace_estimator
from .frechet import EXP, frechet_norm_max_estimator, frechet_norm_power_method
from .harness import (
    ExperimentTable,
    MatrixTag,
    TargetKind,
    TestMatrixSpec,
    estimator_table,
    failure_curve,
    generate_matrix,
    write_csv,
)
from .probes import Distribution

__all__ = ["main"]


class UsageError(Exception):
    """Precondition failure attributable to a flag value."""


_DIST_FLAGS = {
    "gaussian": Distribution.GAUSSIAN,
    "rademacher": Distribution.RADEMACHER,
    "rank1-gaussian": Distribution.RANK_ONE_GAUSSIAN,
    "rank1-rademacher": Distribution.RANK_ONE_RADEMACHER,
}

_SIMPLE_TAGS = {
    tag.value: tag for tag in MatrixTag if tag is not MatrixTag.MATRIX_MARKET
}

_FIGURE1_MATRICES = ("a1", "a2", "a3", "a4", "a5", "a6", "a7")


def _parse_matrix(text):
    """`ones`, `laplace2d`, ..., or `mm:<path>` -> (tag, path)."""
    if text.startswith("mm:"):
        path = text[3:]
        if not path:
            raise UsageError("--matrix mm: needs a file path after the colon")
        return MatrixTag.MATRIX_MARKET, path
    tag = _SIMPLE_TAGS.get(text)
    if tag is None:
        known = ", ".join(sorted(_SIMPLE_TAGS)) + ", mm:<path>"
        raise UsageError(f"--matrix got unknown name {text!r}; known: {known}")
    return tag, None


def _parse_dist(text):
    dist = _DIST_FLAGS.get(text)
    if dist is None:
        raise UsageError(
            f"--dist got unknown name {text!r}; known: " + ", ".join(_DIST_FLAGS)
        )
    return dist


def _parse_dist_list(text):
    return [_parse_dist(part) for part in text.split(",") if part]


def _parse_floats(text, flag):
    try:
        values = [float(part) for part in text.split(",") if part]
    except ValueError:
        raise UsageError(f"{flag} needs comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError(f"{flag} got an empty list")
    return values


def _parse_ints(text, flag):
    try:
        values = [int(part) for part in text.split(",") if part]
    except ValueError:
        raise UsageError(f"{flag} needs comma-separated integers, got {text!r}") from None
    if not values:
        raise UsageError(f"{flag} got an empty list")
    return values


def _build_spec(args, target):
    tag, path = _parse_matrix(args.matrix)
    n = args.n
    if n is None:
        if tag is not MatrixTag.MATRIX_MARKET:
            raise UsageError(f"--matrix {args.matrix} needs --n")
        from .harness import read_matrix_market

        n = read_matrix_market(path).n
    try:
        return TestMatrixSpec(
            tag=tag, n=n, target=target,
            n_hat=args.nhat, n_tilde=args.ntilde, path=path,
        )
    except ValueError as exc:
        raise UsageError(f"--matrix/--target: {exc}") from None


def _fmt_value(value):
    """Integer-exact values print as integers; the rest at 10 significant
    digits so reruns are byte-comparable."""
    if value == math.floor(value) and abs(value) < 2**53:
        return str(int(value))
    return f"{value:.10g}"


def _print_certificate(report):
    cert = report.certified
    line = f"certified at {_fmt_value(cert.confidence)}:"
    if cert.upper_factor is not None:
        line += (
            f" upper factor {cert.upper_factor:.6g}"
            f" (bound {report.value * cert.upper_factor:.6g})"
        )
    if cert.lower_factor is not None:
        line += (
            f", lower factor {cert.lower_factor:.6g}"
            f" (bound {report.value / cert.lower_factor:.6g})"
        )
    print(line)


def _certify_kwargs(args, op):
    kwargs = {"n": op.n}
    if getattr(op, "n_hat", None) is not None:
        kwargs["n_hat"] = op.n_hat
        kwargs["n_tilde"] = op.n_tilde
    if getattr(args, "rho", None) is not None:
        kwargs["rho"] = args.rho
    return kwargs


def _cmd_estimate_trace(args):
    target = {
        "trace": TargetKind.TRACE_OF_A,
        "trace-inv": TargetKind.TRACE_OF_INV_A,
        "frob-sq-inv": TargetKind.FROB_SQ_OF_INV_A,
    }[args.target]
    if args.k < 1:
        raise UsageError(f"--k must be positive, got {args.k}")
    spec = _build_spec(args, target)
    op = generate_matrix(spec, args.seed)
    dist = _parse_dist(args.dist)
    report = trace_estimator(op, args.k, dist, args.seed)
    print(f"Est_{args.k} = {_fmt_value(report.value)}")
    if args.confidence is not None:
        report = certify(report, args.confidence, **_certify_kwargs(args, op))
        _print_certificate(report)
    return 0


def _cmd_estimate_norm(args):
    target = (
        Target.SPECTRAL_NORM if args.target == "spectral" else Target.FROBENIUS_NORM
    )
    if args.k < 1:
        raise UsageError(f"--k must be positive, got {args.k}")
    kind = (
        TargetKind.SPECTRAL_NORM if args.target == "spectral"
        else TargetKind.FROBENIUS_NORM
    )
    spec = _build_spec(args, kind)
    op = generate_matrix(spec, args.seed)
    dist = _parse_dist(args.dist)
    report = max_estimator(op, args.k, dist, args.seed, target=target)
    print(f"Max_{args.k} = {_fmt_value(report.value)}")
    if args.confidence is not None:
        report = certify(report, args.confidence, **_certify_kwargs(args, op))
        _print_certificate(report)
    return 0


def _cmd_bounds(args):
    thetas = _parse_floats(args.theta, "--theta")
    if any(t <= 1.0 for t in thetas):
        raise UsageError("--theta values must exceed 1 for the norm bounds")
    print("theta  gaussian  rank1-gaussian")
    for theta in thetas:
        gauss = bounds_module.failure_probability(
            BoundKind.GAUSS_NORM_UPPER, BoundParams(theta=theta)
        )
        rank_one = bounds_module.failure_probability(
            BoundKind.RANK_ONE_GAUSS_NORM_UPPER, BoundParams(theta=theta)
        )
        print(f"{_fmt_value(theta)}  {gauss:.6f}  {rank_one:.6f}")
    return 0


def _cmd_frechet_norm(args):
    spec = _build_spec(args, TargetKind.SPECTRAL_NORM)
    op = generate_matrix(spec, args.seed)
    if args.method == "power":
        if args.iters < 1:
            raise UsageError(f"--iters must be positive, got {args.iters}")
        value = frechet_norm_power_method(EXP, op, args.iters, args.seed)
        print(f"frechet-norm(exp) = {value:.10g}  [power, {args.iters} iterations]")
    else:
        if args.k < 1:
            raise UsageError(f"--k must be positive, got {args.k}")
        if args.theta_scalar <= 1.0:
            raise UsageError(f"--theta must exceed 1, got {args.theta_scalar}")
        value, depth = frechet_norm_max_estimator(
            EXP, op, args.k, args.theta_scalar, args.seed
        )
        print(
            f"frechet-norm(exp) <= {value:.10g}  "
            f"[max estimator, k={args.k}, theta={_fmt_value(args.theta_scalar)}, "
            f"krylov depth {depth}]"
        )
    return 0


def _cmd_experiment_figure1(args):
    if args.matrix == "all":
        names = _FIGURE1_MATRICES
    else:
        names = [part for part in args.matrix.split(",") if part]
    taus = (
        np.logspace(0.0, 2.0, 20).tolist()
        if args.taus is None
        else _parse_floats(args.taus, "--taus")
    )
    kind = (
        TargetKind.SPECTRAL_NORM if args.target == "spectral"
        else TargetKind.FROBENIUS_NORM
    )
    dists = _parse_dist_list(args.dists)
    rows = []
    for name in names:
        tag, path = _parse_matrix(name)
        try:
            spec = TestMatrixSpec(
                tag=tag, n=args.n, target=kind,
                n_hat=args.nhat, n_tilde=args.ntilde, path=path,
            )
        except ValueError as exc:
            raise UsageError(f"--matrix {name}: {exc}") from None
        table = failure_curve(spec, kind, dists, taus, trials=args.trials, seed=args.seed)
        rows.extend(table.rows)
    write_csv(ExperimentTable(tuple(rows)), args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_experiment_tables(args):
    target = {
        "trace": TargetKind.TRACE_OF_A,
        "trace-inv": TargetKind.TRACE_OF_INV_A,
        "frob-sq-inv": TargetKind.FROB_SQ_OF_INV_A,
    }[args.target]
    ks = _parse_ints(args.k, "--k")
    thetas = _parse_floats(args.theta, "--theta")
    spec = _build_spec(args, target)
    dists = _parse_dist_list(args.dists)
    table = estimator_table(
        spec, dists, ks, thetas, trials=args.trials, seed=args.seed
    )
    write_csv(table, args.out)
    print(f"wrote {len(table.rows)} rows to {args.out}")
    return 0


def _add_matrix_flags(parser, n_required=False):
    parser.add_argument("--matrix", required=True, help="matrix name or mm:<path>")
    parser.add_argument("--n", type=int, default=None, required=n_required)
    parser.add_argument("--nhat", type=int, default=None)
    parser.add_argument("--ntilde", type=int, default=None)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="kronprobe",
        description="Randomized norm/trace estimation with rank-one probes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-trace", help="k-sample trace estimate")
    _add_matrix_flags(p)
    p.add_argument("--target", choices=["trace", "trace-inv", "frob-sq-inv"],
                   default="trace")
    p.add_argument("--dist", default="gaussian")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--confidence", type=float, default=None)
    p.add_argument("--rho", type=float, default=None,
                   help="stable rank, enables the Gaussian lower certificate")
    p.set_defaults(func=_cmd_estimate_trace)

    p = sub.add_parser("estimate-norm", help="max-of-k norm estimate")
    _add_matrix_flags(p)
    p.add_argument("--target", choices=["spectral", "frobenius"], default="spectral")
    p.add_argument("--dist", default="rank1-gaussian")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--confidence", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.set_defaults(func=_cmd_estimate_norm)

    p = sub.add_parser("bounds", help="closed-form norm-bound table")
    p.add_argument("--theta", required=True, help="comma-separated theta values")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("frechet-norm", help="matrix-exponential derivative norm")
    _add_matrix_flags(p)
    p.add_argument("--method", choices=["power", "max"], default="power")
    p.add_argument("--iters", type=int, default=7)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--theta", dest="theta_scalar", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_frechet_norm)

    p = sub.add_parser("experiment", help="Monte Carlo experiment CSV")
    esub = p.add_subparsers(dest="experiment_kind", required=True)

    f = esub.add_parser("figure1", help="norm-inequality failure curves")
    f.add_argument("--matrix", default="all",
                   help="comma-separated names, or 'all' for the a1..a7 family")
    f.add_argument("--n", type=int, default=16)
    f.add_argument("--nhat", type=int, default=None)
    f.add_argument("--ntilde", type=int, default=None)
    f.add_argument("--target", choices=["spectral", "frobenius"], default="spectral")
    f.add_argument("--dists", default="rank1-gaussian")
    f.add_argument("--taus", default=None,
                   help="comma-separated taus; default 20 log-spaced in [1, 100]")
    f.add_argument("--trials", type=int, default=100_000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=_cmd_experiment_figure1)

    t = esub.add_parser("tables", help="over/undershoot tables")
    _add_matrix_flags(t)
    t.add_argument("--target", choices=["trace", "trace-inv", "frob-sq-inv"],
                   default="trace")
    t.add_argument("--dists",
                   default="gaussian,rank1-gaussian,rademacher,rank1-rademacher")
    t.add_argument("--k", default="1,5,10", help="comma-separated sample counts")
    t.add_argument("--theta", default="1.2,2,4,8,30")
    t.add_argument("--trials", type=int, default=10_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_cmd_experiment_tables)

    return parser


def _apply_thread_cap():
    raw = os.environ.get("KRONPROBE_THREADS")
    if not raw:
        return
    try:
        count = int(raw)
    except ValueError:
        return
    if count < 1:
        return
    try:
        import numba

        numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))
    except Exception:
        pass  # backend without a thread pool; the cap is a no-op


def main(argv=None):
    _apply_thread_cap()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return 0 if stop.code in (0, None) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        OutOfValidityRegion,
        IncompatibleCertificate,
        UnreachableConfidence,
        PsdAssertionError,
        NonConvergenceError,
        MatrixMarketFormatError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
