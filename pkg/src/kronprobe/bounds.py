"""Closed-form failure-probability bounds and chaos moment formulas.

Each bound kind is a pure function of a small parameter set (theta, eps, k,
dimensions, stable rank rho) returning the probability that the associated
estimation inequality fails.  Parameters outside a kind's validity region
raise OutOfValidityRegion: clamping there would silently return a
meaningless number.  Inside the region, values are clamped to [0, 1] and
evaluated in log space where needed so sample counts up to about 1e6 stay
representable.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import OutOfValidityRegion, UnreachableConfidence
from .linalg import small_svd

__all__ = [
    "BoundKind",
    "BoundParams",
    "failure_probability",
    "invert_for_theta",
    "chaos_moments",
    "chaos_even_moment_bound",
    "chaos_mgf_bound",
]


class BoundKind(Enum):
    # Single-sample norm events, dense Gaussian probe.
    GAUSS_NORM_UPPER = "gauss-norm-upper"
    # Trace concentration for dense probes (prior art baselines).
    GRATTON_TRACE_UPPER = "gratton-trace-upper"
    GRATTON_TRACE_LOWER = "gratton-trace-lower"
    ROOSTA_TRACE = "roosta-trace"
    CORTINOVIS_JOINT = "cortinovis-joint"
    # Single-sample norm events, rank-one Gaussian probe.
    RANK_ONE_GAUSS_NORM_UPPER = "rank1-gauss-norm-upper"
    RANK_ONE_GAUSS_NORM_LOWER = "rank1-gauss-norm-lower"
    RANK_ONE_GAUSS_FROB_UPPER = "rank1-gauss-frob-upper"
    RANK_ONE_GAUSS_FROB_LOWER_STABLE_RANK = "rank1-gauss-frob-lower-stable-rank"
    RANK_ONE_GAUSS_FROB_LOWER = "rank1-gauss-frob-lower"
    # k-sample max estimator, rank-one Gaussian.
    MAX_ESTIMATOR_UPPER = "max-estimator-upper"
    # Trace estimator with rank-one probes.
    TRACE_UPPER = "trace-upper"
    TRACE_LOWER_RADEMACHER_BERNSTEIN = "trace-lower-rademacher-bernstein"
    TRACE_LOWER_GAUSS = "trace-lower-gauss"
    TRACE_LOWER_RADEMACHER_CHAOS = "trace-lower-rademacher-chaos"
    # Analytic helper quantities.
    CHI_SQUARE_TAIL = "chi-square-tail"
    CHAOS_MGF_BOUND = "chaos-mgf-bound"


@dataclass(frozen=True)
class BoundParams:
    """Parameter bag; each kind reads the subset it declares."""

    theta: float = None
    eps: float = None
    k: int = None
    n: int = None
    n_hat: int = None
    n_tilde: int = None
    rho: float = None


def _clamp(p):
    return float(min(1.0, max(0.0, p)))


def _need(params, kind, *names):
    vals = []
    for name in names:
        v = getattr(params, name)
        if v is None:
            raise OutOfValidityRegion(f"{kind.value} needs parameter {name!r}")
        vals.append(v)
    return vals


def _check_theta_above(theta, lo, kind):
    if not theta > lo:
        raise OutOfValidityRegion(f"{kind.value} requires theta > {lo}, got {theta}")


def _check_eps_in(eps, hi, kind):
    if not 0.0 < eps < hi:
        raise OutOfValidityRegion(
            f"{kind.value} requires 0 < eps < {hi}, got {eps}"
        )


def _check_k(k, kind):
    if not k >= 1:
        raise OutOfValidityRegion(f"{kind.value} requires k >= 1, got {k}")


def _check_rho(rho, kind):
    if not rho > 0:
        raise OutOfValidityRegion(f"{kind.value} requires rho > 0, got {rho}")


def _rank_one_norm_upper_base(theta):
    # (2/pi) * (2 + ln(1 + 2*theta)) / theta
    return (2.0 / math.pi) * (2.0 + math.log1p(2.0 * theta)) / theta


def _rank_one_norm_lower(theta, n_tilde):
    return 2.0 * math.exp(-n_tilde * (theta - math.log(theta) - 1.0) / 2.0)


def failure_probability(kind, params):
    """Failure probability of the bound ``kind`` at ``params``, in [0, 1]."""
    if kind is BoundKind.GAUSS_NORM_UPPER:
        (theta,) = _need(params, kind, "theta")
        _check_theta_above(theta, 1.0, kind)
        return _clamp(math.sqrt(2.0 / math.pi) / theta)

    if kind is BoundKind.GRATTON_TRACE_UPPER:
        k, rho, eps = _need(params, kind, "k", "rho", "eps")
        _check_k(k, kind)
        _check_rho(rho, kind)
        _check_eps_in(eps, 1.0, kind)
        return _clamp(math.exp(-k * rho * eps * eps / 4.0))

    if kind is BoundKind.GRATTON_TRACE_LOWER:
        k, rho, eps = _need(params, kind, "k", "rho", "eps")
        _check_k(k, kind)
        _check_rho(rho, kind)
        if not eps > 0:
            raise OutOfValidityRegion(f"{kind.value} requires eps > 0, got {eps}")
        return _clamp(math.exp(-k * rho * eps * eps / 2.0))

    if kind is BoundKind.ROOSTA_TRACE:
        k, eps = _need(params, kind, "k", "eps")
        _check_k(k, kind)
        _check_eps_in(eps, 1.0, kind)
        return _clamp(math.exp(-k * (eps * eps / 4.0 - eps ** 3 / 6.0)))

    if kind is BoundKind.CORTINOVIS_JOINT:
        k, rho, eps = _need(params, kind, "k", "rho", "eps")
        _check_k(k, kind)
        _check_rho(rho, kind)
        _check_eps_in(eps, 1.0, kind)
        return _clamp(2.0 * math.exp(-k * rho * eps * eps / ((1.0 + eps) * 8.0)))

    if kind in (BoundKind.RANK_ONE_GAUSS_NORM_UPPER, BoundKind.RANK_ONE_GAUSS_FROB_UPPER):
        (theta,) = _need(params, kind, "theta")
        _check_theta_above(theta, 1.0, kind)
        return _clamp(_rank_one_norm_upper_base(theta))

    if kind in (
        BoundKind.RANK_ONE_GAUSS_NORM_LOWER,
        BoundKind.RANK_ONE_GAUSS_FROB_LOWER_STABLE_RANK,
    ):
        theta, n_tilde = _need(params, kind, "theta", "n_tilde")
        _check_theta_above(theta, 1.0, kind)
        if params.n_hat is not None and n_tilde > params.n_hat:
            raise OutOfValidityRegion(
                f"{kind.value} requires n_tilde <= n_hat, got {n_tilde} > {params.n_hat}"
            )
        return _clamp(_rank_one_norm_lower(theta, n_tilde))

    if kind is BoundKind.RANK_ONE_GAUSS_FROB_LOWER:
        (theta,) = _need(params, kind, "theta")
        _check_theta_above(theta, 2.0, kind)
        return _clamp(math.sqrt(2.0 * theta) * math.exp(-theta + 2.0))

    if kind is BoundKind.MAX_ESTIMATOR_UPPER:
        theta, k = _need(params, kind, "theta", "k")
        _check_theta_above(theta, 1.0, kind)
        _check_k(k, kind)
        base = _rank_one_norm_upper_base(theta)
        if base >= 1.0:
            return 1.0
        return _clamp(math.exp(k * math.log(base)))

    if kind is BoundKind.TRACE_UPPER:
        k, eps = _need(params, kind, "k", "eps")
        _check_k(k, kind)
        _check_eps_in(eps, 1.0, kind)
        return _clamp(math.exp(-k * eps * eps / 18.0))

    if kind is BoundKind.TRACE_LOWER_RADEMACHER_BERNSTEIN:
        k, eps, n = _need(params, kind, "k", "eps", "n")
        _check_k(k, kind)
        if not eps > 0:
            raise OutOfValidityRegion(f"{kind.value} requires eps > 0, got {eps}")
        if n - 1 < 48.0 / eps:
            raise OutOfValidityRegion(
                f"{kind.value} requires n - 1 >= 48/eps = {48.0 / eps:.6g}, got n - 1 = {n - 1}"
            )
        return _clamp(math.exp(-k * eps / (n - 1)))

    if kind is BoundKind.TRACE_LOWER_GAUSS:
        k, eps, rho, n_hat = _need(params, kind, "k", "eps", "rho", "n_hat")
        _check_k(k, kind)
        _check_rho(rho, kind)
        _check_eps_in(eps, 25.0 / 16.0, kind)
        if params.n_tilde is not None and params.n_tilde > n_hat:
            raise OutOfValidityRegion(
                f"{kind.value} requires n_tilde <= n_hat, got {params.n_tilde} > {n_hat}"
            )
        tail = math.exp(-k * rho * eps * eps / (50.0 * n_hat))
        escape = k * math.exp(-0.5 * n_hat * math.log(5.0))
        return _clamp(tail + escape)

    if kind is BoundKind.TRACE_LOWER_RADEMACHER_CHAOS:
        k, eps, rho, n_hat = _need(params, kind, "k", "eps", "rho", "n_hat")
        _check_k(k, kind)
        _check_rho(rho, kind)
        _check_eps_in(eps, 13.0 / 4.0, kind)
        return _clamp(math.exp(-k * rho * eps * eps / (52.0 * n_hat)))

    if kind is BoundKind.CHI_SQUARE_TAIL:
        theta, k = _need(params, kind, "theta", "k")
        _check_theta_above(theta, 1.0, kind)
        _check_k(k, kind)
        return _clamp(math.exp(0.5 * k * (math.log(theta) + 1.0 - theta)))

    if kind is BoundKind.CHAOS_MGF_BOUND:
        raise OutOfValidityRegion(
            "chaos-mgf-bound is a moment generating function bound, not a "
            "failure probability; evaluate chaos_mgf_bound(t) instead"
        )

    raise ValueError(f"unknown bound kind: {kind!r}")


_THETA_LOWER_EDGE = {
    BoundKind.RANK_ONE_GAUSS_FROB_LOWER: 2.0,
}


def invert_for_theta(kind, params, target_failure, tol=1e-9):
    """Smallest theta in the validity region with failure <= target_failure.

    Bisection on the monotone-decreasing failure probability; ``params``
    carries every parameter except theta.
    """
    if not 0.0 < target_failure < 1.0:
        raise ValueError(f"target failure must be in (0, 1), got {target_failure}")
    lo = _THETA_LOWER_EDGE.get(kind, 1.0)

    def evaluate(theta):
        probe = BoundParams(
            theta=theta, eps=params.eps, k=params.k, n=params.n,
            n_hat=params.n_hat, n_tilde=params.n_tilde, rho=params.rho,
        )
        return failure_probability(kind, probe)

    hi = lo + 1.0
    for _ in range(200):
        if evaluate(hi) <= target_failure:
            break
        hi = 2.0 * hi
    else:
        raise UnreachableConfidence(
            f"{kind.value}: failure {target_failure:g} unreachable for any theta"
        )
    lo_open = lo
    while hi - lo_open > tol:
        mid = 0.5 * (lo_open + hi)
        if evaluate(mid) > target_failure:
            lo_open = mid
        else:
            hi = mid
    return hi


def chaos_moments(q):
    """(E Z^2, E Z^4) for the decoupled bilinear form Z of a fixed matrix.

    Z = x_hat^T Q x_tilde with independent standard Gaussian factors:
    E Z^2 = ||Q||_F^2 and E Z^4 = 3 (2 ||Q||_S4^4 + ||Q||_F^4), which is at
    most 9 (E Z^2)^2.
    """
    q = np.asarray(q, dtype=np.float64)
    m2 = float(np.sum(q * q))
    s = small_svd(q)
    schatten4_4 = float((s ** 4).sum())
    m4 = 3.0 * (2.0 * schatten4_4 + m2 * m2)
    return m2, m4


def chaos_even_moment_bound(q, k):
    """Upper bound ((k-1)!!)^2 ||Q||_F^k on E Z^k for even k <= 20; odd k give 0."""
    if not 1 <= k <= 20:
        raise ValueError(f"moment order must be in [1, 20], got {k}")
    if k % 2 == 1:
        return 0.0
    q = np.asarray(q, dtype=np.float64)
    frob = math.sqrt(float(np.sum(q * q)))
    double_fact = math.prod(range(k - 1, 0, -2))
    return float(double_fact ** 2 * frob ** k)


def chaos_mgf_bound(t):
    """Bound 1/sqrt(1 - t^2) on E exp(t Z) for unit-Frobenius Q; needs |t| < 1."""
    if not abs(t) < 1.0:
        raise OutOfValidityRegion(f"chaos MGF bound requires |t| < 1, got {t}")
    return 1.0 / math.sqrt(1.0 - t * t)
