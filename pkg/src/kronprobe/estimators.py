"""Norm and trace estimators with optional certified error factors.

Three estimators: a one-sample norm ||A x||, the max of k norm samples, and
the k-sample trace mean for PSD operators.  ``certify`` attaches multiplicative
bracket factors valid at a requested confidence by inverting the tail bounds
in :mod:`kronprobe.bounds`.

Sample values are evaluated in windows aligned to the absolute sample index
(see ``operators.batch_window``), so extending k reuses and exactly reproduces
the earlier samples.  That makes Max_k nondecreasing in k under a common seed
and lets the experiment harness take prefix means of one shared sample stream.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import bounds as _bounds
from .bounds import BoundKind, BoundParams
from .errors import IncompatibleCertificate, PsdAssertionError, UnreachableConfidence
from .operators import batch_window
from .probes import Distribution, RankOneProbe, draw_probe_batch

__all__ = [
    "Estimator",
    "Target",
    "Certificate",
    "EstimateReport",
    "norm_sample",
    "norm_samples",
    "quadratic_form_samples",
    "max_estimator",
    "trace_estimator",
    "certify",
]


class Estimator(Enum):
    ONE_SAMPLE_NORM = "one-sample-norm"
    MAX_K = "max-k"
    TRACE_EST_K = "trace-est-k"


class Target(Enum):
    SPECTRAL_NORM = "spectral-norm"
    FROBENIUS_NORM = "frobenius-norm"
    TRACE = "trace"


@dataclass(frozen=True)
class Certificate:
    """Multiplicative bracket at a confidence level.

    With probability at least ``confidence`` the target quantity lies in
    [value / lower_factor, upper_factor * value]; a side is None when no
    bound of the matching kind applies.
    """

    confidence: float
    upper_factor: float | None
    lower_factor: float | None
    kinds: tuple[BoundKind, ...]

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")
        for factor in (self.upper_factor, self.lower_factor):
            if factor is not None and not factor > 1.0:
                raise ValueError(f"certified factors must exceed 1, got {factor}")


@dataclass(frozen=True)
class EstimateReport:
    value: float
    estimator: Estimator
    k: int
    distribution: Distribution
    seed: int
    target: Target
    certified: Certificate | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if not self.value >= 0.0:
            raise ValueError(f"estimate must be nonnegative, got {self.value}")


def _check_k(k):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")


def _batch_values(op, dist, seed, first_index, count, want_qf, stream):
    """Per-sample norm-squared or quadratic-form values at absolute indices.

    Every window passed to the operator has exactly batch_window(n) rows,
    zero-padded at the edges, so the arithmetic a sample sees is independent
    of first_index and count.
    """
    n = op.n
    window = batch_window(n)
    out = np.empty(count)
    lo, hi = first_index, first_index + count
    for w in range(lo // window, (hi - 1) // window + 1):
        a = max(lo, w * window)
        b = min(hi, (w + 1) * window)
        if dist.is_rank_one:
            xt = np.zeros((window, op.n_tilde))
            xh = np.zeros((window, op.n_hat))
            part_t, part_h = draw_probe_batch(
                dist, n, op.n_hat, op.n_tilde, seed,
                first_index=a, count=b - a, stream=stream,
            )
            xt[a - w * window : b - w * window] = part_t
            xh[a - w * window : b - w * window] = part_h
            if want_qf:
                vals = op.qf_rank_one_batch(xt, xh)
            else:
                vals = op.norm_sq_rank_one_batch(xt, xh)
        else:
            xs = np.zeros((window, n))
            xs[a - w * window : b - w * window] = draw_probe_batch(
                dist, n, seed=seed, first_index=a, count=b - a, stream=stream
            )
            vals = op.qf_batch(xs) if want_qf else op.norm_sq_batch(xs)
        out[a - lo : b - lo] = vals[a - w * window : b - w * window]
    return out


def norm_samples(op, dist, seed=0, first_index=0, count=1, stream=0):
    """||op x_i||_2 for the ``count`` probes starting at ``first_index``."""
    _check_k(count)
    return np.sqrt(
        _batch_values(op, dist, seed, first_index, count, want_qf=False, stream=stream)
    )


def quadratic_form_samples(op, dist, seed=0, first_index=0, count=1, stream=0):
    """x_i^T op x_i for consecutive probes; requires the PSD flag."""
    _check_k(count)
    if not op.psd:
        raise PsdAssertionError(
            "quadratic-form sampling needs an operator constructed with psd=True"
        )
    return _batch_values(op, dist, seed, first_index, count, want_qf=True, stream=stream)


def norm_sample(op, probe):
    """One norm sample ||op x||_2 for an explicit probe.

    Rank-one probes go through apply_rank_one and never form the Kronecker
    product when the operator has a structured path.
    """
    if isinstance(probe, RankOneProbe):
        image = op.apply_rank_one(probe.x_tilde, probe.x_hat)
    else:
        image = op.apply(np.asarray(probe, dtype=float))
    return float(np.linalg.norm(image))


def max_estimator(op, k, dist, seed, *, target=Target.SPECTRAL_NORM):
    """Max of k independent norm samples (sample indices 0..k-1)."""
    _check_k(k)
    if target not in (Target.SPECTRAL_NORM, Target.FROBENIUS_NORM):
        raise ValueError(f"max estimator targets a norm, got {target}")
    samples = norm_samples(op, dist, seed, first_index=0, count=k)
    return EstimateReport(
        value=float(samples.max()),
        estimator=Estimator.MAX_K,
        k=int(k),
        distribution=dist,
        seed=int(seed),
        target=target,
    )


def trace_estimator(op_psd, k, dist, seed):
    """Mean of k quadratic-form samples of a PSD operator.

    Deterministic in (seed, dist, k); probes are sample indices 0..k-1 of the
    seed's stream, so a larger k extends rather than replaces the samples.
    """
    _check_k(k)
    samples = quadratic_form_samples(op_psd, dist, seed, first_index=0, count=k)
    return EstimateReport(
        value=float(samples.sum() / k),
        estimator=Estimator.TRACE_EST_K,
        k=int(k),
        distribution=dist,
        seed=int(seed),
        target=Target.TRACE,
    )


def _invert(bounds_module, kind, params, target_failure):
    return bounds_module.invert_for_theta(kind, params, target_failure)


def _certify_norm(report, delta, bm, rho, n_tilde, n_hat):
    dist = report.distribution
    if report.target is Target.TRACE:
        raise IncompatibleCertificate("norm estimators do not certify the trace")
    if not dist.is_gaussian:
        raise IncompatibleCertificate(
            "sign probes admit no norm certificate: a single +-1 probe can sit "
            "in the kernel of A with fixed probability, so no distribution-only "
            "tail bound exists"
        )
    if not dist.is_rank_one:
        if report.target is not Target.SPECTRAL_NORM:
            raise IncompatibleCertificate(
                "dense Gaussian probes certify the spectral norm only"
            )
        if report.k != 1:
            raise IncompatibleCertificate(
                "only the single-sample spectral certificate is wired for dense "
                "Gaussian probes; use the rank-one distribution for Max_k"
            )
        theta = _invert(bm, BoundKind.GAUSS_NORM_UPPER, BoundParams(), delta)
        return theta, None, (BoundKind.GAUSS_NORM_UPPER,)

    if report.target is Target.SPECTRAL_NORM:
        theta = _invert(
            bm, BoundKind.MAX_ESTIMATOR_UPPER, BoundParams(k=report.k), delta
        )
        kinds = [BoundKind.MAX_ESTIMATOR_UPPER]
        lower = None
        if n_tilde is not None:
            # Max_k overshoots only if some sample does: union bound over k.
            lower = _invert(
                bm,
                BoundKind.RANK_ONE_GAUSS_NORM_LOWER,
                BoundParams(n_tilde=n_tilde, n_hat=n_hat),
                delta / report.k,
            )
            kinds.append(BoundKind.RANK_ONE_GAUSS_NORM_LOWER)
        return theta, lower, tuple(kinds)

    # Frobenius target: the upper guarantee is theta * sqrt(rho) per sample.
    if rho is None:
        raise IncompatibleCertificate(
            "a Frobenius-norm certificate needs the stable rank rho; pass rho="
        )
    if not rho >= 1.0:
        raise ValueError(f"stable rank must be at least 1, got {rho}")
    theta = _invert(bm, BoundKind.MAX_ESTIMATOR_UPPER, BoundParams(k=report.k), delta)
    lower = _invert(
        bm, BoundKind.RANK_ONE_GAUSS_FROB_LOWER, BoundParams(), delta / report.k
    )
    kinds = (
        BoundKind.RANK_ONE_GAUSS_FROB_UPPER,
        BoundKind.MAX_ESTIMATOR_UPPER,
        BoundKind.RANK_ONE_GAUSS_FROB_LOWER,
    )
    return theta * math.sqrt(rho), lower, kinds


def _certify_trace(report, delta, bm, rho, n, n_hat):
    dist = report.distribution
    if not dist.is_rank_one:
        raise IncompatibleCertificate(
            "trace certificates are wired for the rank-one distributions only"
        )
    k = report.k
    log_inv = math.log(1.0 / delta)
    eps_up = math.sqrt(18.0 * log_inv / k)
    if eps_up >= 1.0:
        raise UnreachableConfidence(
            f"confidence {1 - delta} needs k > {18.0 * log_inv:.1f} samples "
            f"for the trace upper bracket, got k = {k}"
        )
    upper = 1.0 / (1.0 - eps_up)
    kinds = [BoundKind.TRACE_UPPER]
    lower = None
    if dist is Distribution.RANK_ONE_RADEMACHER and n is not None:
        eps = max((n - 1) * log_inv / k, 48.0 / (n - 1))
        lower = 1.0 + eps
        kinds.append(BoundKind.TRACE_LOWER_RADEMACHER_BERNSTEIN)
    elif dist is Distribution.RANK_ONE_GAUSSIAN and rho is not None and n_hat is not None:
        # Budget the escape-mass term first, then solve the exponential part.
        residual = delta - k * 5.0 ** (-0.5 * n_hat)
        if residual <= 0.0:
            raise UnreachableConfidence(
                f"confidence {1 - delta} is unreachable at n_hat = {n_hat}: the "
                "small-factor escape term alone exceeds the failure budget"
            )
        eps = math.sqrt(50.0 * n_hat * math.log(1.0 / residual) / (k * rho))
        if eps >= 25.0 / 16.0:
            raise UnreachableConfidence(
                f"trace lower bracket needs eps < 25/16, solved eps = {eps:.3f}; "
                "increase k or the confidence gap"
            )
        lower = 1.0 + eps
        kinds.append(BoundKind.TRACE_LOWER_GAUSS)
    return upper, lower, tuple(kinds)


def certify(
    report,
    confidence,
    bounds_module=None,
    *,
    rho=None,
    n=None,
    n_hat=None,
    n_tilde=None,
):
    """Attach the smallest certified bracket factors at ``confidence``.

    Upper factors invert the relevant tail bound by bisection; lower-side
    factors use the matching lower-deviation bound where one exists and the
    needed shape parameters (rho, n, n_hat, n_tilde) were supplied.  Raises
    IncompatibleCertificate when no sound bound exists for the estimator /
    distribution / target combination, and UnreachableConfidence when the
    bound's validity region cannot reach the requested confidence at this k.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    bm = _bounds if bounds_module is None else bounds_module
    delta = 1.0 - confidence
    if report.estimator in (Estimator.MAX_K, Estimator.ONE_SAMPLE_NORM):
        upper, lower, kinds = _certify_norm(report, delta, bm, rho, n_tilde, n_hat)
    elif report.estimator is Estimator.TRACE_EST_K:
        upper, lower, kinds = _certify_trace(report, delta, bm, rho, n, n_hat)
    else:
        raise IncompatibleCertificate(f"unknown estimator {report.estimator}")
    cert = Certificate(
        confidence=confidence, upper_factor=upper, lower_factor=lower, kinds=kinds
    )
    return replace(report, certified=cert)
