"""Derivatives of matrix functions in rank-one directions.

Dense evaluation goes through the block trick: the top-right block of
f([[A, X], [0, A]]) is the derivative of f at A in direction X.  For large A
and rank-one direction c d^T, a two-sided Krylov method projects A onto
K_l(A, c) and A^T onto K_l(A^T, d) and evaluates f on the small block matrix,
yielding an implicit rank-l representation U X V^T without ever forming an
n x n dense matrix.  A power-method baseline and a probe-based upper bound
for the derivative operator norm sit on top.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonConvergenceError
from .linalg import expm
from .probes import Distribution, draw_probe, draw_probe_batch

__all__ = [
    "MatrixFunction",
    "EXP",
    "KrylovState",
    "ArnoldiResult",
    "frechet_apply_dense",
    "arnoldi_frechet_rank_one",
    "frechet_norm_power_method",
    "frechet_norm_max_estimator",
]

# 2n x 2n dense evaluation stays cheap up to this order.
_DENSE_GUARD = 200

_DEFAULT_TOL = 1e-8

# Subdiagonal entries below this fraction of the operator scale end a side.
_BREAKDOWN_RTOL = 1e-12


@dataclass(frozen=True)
class MatrixFunction:
    tag: str
    evaluate: Callable[[np.ndarray], np.ndarray]


EXP = MatrixFunction("exp", expm)


@dataclass(frozen=True)
class KrylovState:
    """Snapshot of one Arnoldi side.

    basis columns are orthonormal and hess is the square projection
    basis^T A basis.  tail and tail_coeff extend the Arnoldi relation
    A basis = basis @ hess + tail_coeff * tail e_l^T; tail is None after a
    breakdown, where the relation is exact.
    """

    basis: np.ndarray
    hess: np.ndarray
    start_norm: float
    tail: np.ndarray | None
    tail_coeff: float

    @property
    def ell(self):
        return self.basis.shape[1]

    @property
    def projected_start(self):
        out = np.zeros(self.ell)
        out[0] = self.start_norm
        return out


@dataclass(frozen=True)
class ArnoldiResult:
    """Implicit representation u @ x @ v.T of the derivative in a rank-one direction."""

    u: np.ndarray
    x: np.ndarray
    v: np.ndarray
    converged: bool
    c_state: KrylovState
    d_state: KrylovState

    @property
    def ell(self):
        return max(self.u.shape[1], self.v.shape[1])

    def norm(self):
        # u and v have orthonormal columns, so the small block carries the norm
        return float(np.linalg.norm(self.x))

    def dense(self):
        return self.u @ self.x @ self.v.T


def frechet_apply_dense(f, a, x):
    """Derivative of f at a in direction x via one 2n x 2n evaluation."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if x.shape != a.shape:
        raise ValueError(f"direction shape {x.shape} does not match {a.shape}")
    n = a.shape[0]
    if n > _DENSE_GUARD:
        raise ValueError(f"dense evaluation is limited to n <= {_DENSE_GUARD}, got {n}")
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = a
    block[:n, n:] = x
    block[n:, n:] = a
    return f.evaluate(block)[:n, n:]


class _Side:
    """One growing Arnoldi factorization.

    ``ell`` counts completed Hessenberg columns, so hess[:ell, :ell] is the
    full projection of the operator onto the first ell basis vectors.  A side
    freezes on lucky breakdown (projection exact from then on) or when it
    reaches max_ell.
    """

    def __init__(self, apply_fn, start, max_ell):
        self.apply_fn = apply_fn
        norm = float(np.linalg.norm(start))
        if norm == 0.0:
            raise ValueError("Krylov start vector is zero")
        self.start_norm = norm
        self.max_ell = max_ell
        self.basis = np.zeros((start.shape[0], max_ell + 1))
        self.basis[:, 0] = start / norm
        self.hess = np.zeros((max_ell + 1, max_ell))
        self.ell = 0
        self.exact = False
        self.frozen = False

    def grow(self, breakdown_threshold):
        """Complete one more Hessenberg column; False once the side is frozen."""
        if self.frozen:
            return False
        j = self.ell
        existing = self.basis[:, : j + 1]
        w = self.apply_fn(np.ascontiguousarray(self.basis[:, j]))
        coeffs = existing.T @ w
        w = w - existing @ coeffs
        # one full reorthogonalization pass keeps the basis orthonormal deep in
        second = existing.T @ w
        w = w - existing @ second
        coeffs = coeffs + second
        h = float(np.linalg.norm(w))
        self.hess[: j + 1, j] = coeffs
        self.hess[j + 1, j] = h
        self.ell = j + 1
        if h <= breakdown_threshold:
            self.exact = True
            self.frozen = True
        else:
            self.basis[:, j + 1] = w / h
            if self.ell >= self.max_ell:
                self.frozen = True
        return True

    def state(self):
        j = self.ell
        if self.exact:
            tail, coeff = None, 0.0
        else:
            tail, coeff = self.basis[:, j].copy(), float(self.hess[j, j - 1])
        return KrylovState(
            basis=self.basis[:, :j].copy(),
            hess=self.hess[:j, :j].copy(),
            start_norm=self.start_norm,
            tail=tail,
            tail_coeff=coeff,
        )


def _small_block(c_side, d_side, f):
    """f on the projected block matrix; returns (full, top-right block)."""
    lc, ld = c_side.ell, d_side.ell
    block = np.zeros((lc + ld, lc + ld))
    block[:lc, :lc] = c_side.hess[:lc, :lc]
    block[lc:, lc:] = d_side.hess[:ld, :ld].T
    block[0, lc] = c_side.start_norm * d_side.start_norm
    full = f.evaluate(block)
    return full, full[:lc, lc:]


def _block_gap(x, prev):
    """Frobenius distance between consecutive derivative blocks.

    The bases are nested, so padding the smaller block with zeros makes this
    exactly ||U x V^T - U' x' V'^T||_F, the change of the returned
    approximant.  The diagonal blocks of the f-evaluation are excluded on
    purpose: their entries near the active boundary keep moving at O(1) even
    after the derivative block has converged.
    """
    embedded = np.zeros_like(x)
    embedded[: prev.shape[0], : prev.shape[1]] = prev
    return float(np.linalg.norm(x - embedded))


def _operator_scale(a_op, c_side, d_side):
    upper = a_op.norm1_upper()
    if upper is not None and upper > 0.0:
        return upper
    probe = a_op.apply(np.ascontiguousarray(c_side.basis[:, 0]))
    probe_t = a_op.apply_transpose(np.ascontiguousarray(d_side.basis[:, 0]))
    return max(float(np.linalg.norm(probe)), float(np.linalg.norm(probe_t)), 1.0)


def arnoldi_frechet_rank_one(f, a_op, c, d, tol=_DEFAULT_TOL, max_ell=None):
    """Two-sided Krylov approximation of the derivative in direction c d^T.

    Grows bases for (A, c) and (A^T, d) in lockstep, evaluates f on the
    projected block matrix each sweep, and stops once consecutive derivative
    blocks agree to tol in Frobenius norm (with nested bases that equals the
    Frobenius change of the returned approximant).  A lucky breakdown freezes
    its side (the projection is then exact there) while the other may
    continue, so the small block can end up rectangular.  Without convergence
    by max_ell the best iterate is returned with converged=False.
    """
    if tol <= 0.0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    if a_op.m != a_op.n:
        raise ValueError(f"operator must be square, got ({a_op.m}, {a_op.n})")
    n = a_op.n
    c = np.asarray(c, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    if c.shape[0] != n or d.shape[0] != n:
        raise ValueError(
            f"start vectors must have length {n}, got {c.shape[0]} and {d.shape[0]}"
        )
    if max_ell is None:
        max_ell = min(n, 80)
    max_ell = max(1, min(max_ell, n))

    c_side = _Side(a_op.apply, c, max_ell)
    d_side = _Side(a_op.apply_transpose, d, max_ell)
    threshold = _BREAKDOWN_RTOL * _operator_scale(a_op, c_side, d_side)

    converged = False
    prev = None
    x = None
    while True:
        grew_c = c_side.grow(threshold)
        grew_d = d_side.grow(threshold)
        if not grew_c and not grew_d:
            converged = c_side.exact and d_side.exact
            break
        _, x = _small_block(c_side, d_side, f)
        if prev is not None and _block_gap(x, prev) < tol:
            converged = True
            break
        prev = x

    lc, ld = c_side.ell, d_side.ell
    return ArnoldiResult(
        u=c_side.basis[:, :lc].copy(),
        x=x,
        v=d_side.basis[:, :ld].copy(),
        converged=converged,
        c_state=c_side.state(),
        d_state=d_side.state(),
    )


def frechet_norm_power_method(f, a_op, iters, seed):
    """Power-method estimate of the derivative operator norm at A.

    Alternates the derivative at A and at A^T on a seeded Gaussian direction,
    normalizing between sweeps; returns the final pre-normalization norm.
    """
    if iters < 1:
        raise ValueError(f"need at least one iteration, got {iters}")
    if a_op.n > _DENSE_GUARD:
        raise ValueError(
            f"power method materializes the matrix; limited to n <= {_DENSE_GUARD}"
        )
    a = a_op.to_dense()
    n = a.shape[0]
    x = draw_probe(Distribution.GAUSSIAN, n * n, seed=seed).reshape(n, n)
    y = None
    for _ in range(iters):
        x = x / np.linalg.norm(x)
        y = frechet_apply_dense(f, a, x)
        x = frechet_apply_dense(f, a.T, y)
    return float(np.linalg.norm(y))


def frechet_norm_max_estimator(f, a_op, k, theta, seed, tol=_DEFAULT_TOL, max_ell=None):
    """Probabilistic upper bound theta * Max_k for the derivative norm.

    Each sample runs the two-sided Krylov method in a rank-one Gaussian
    direction x_hat x_tilde^T and takes the Frobenius norm of the small
    block.  Returns (upper bound, largest Krylov dimension used).  A sample
    that fails to converge raises NonConvergenceError carrying the bound
    over the samples seen so far as best_estimate.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not theta > 1.0:
        raise ValueError(f"theta must exceed 1, got {theta}")
    if a_op.m != a_op.n:
        raise ValueError(f"operator must be square, got ({a_op.m}, {a_op.n})")
    n = a_op.n
    xt, xh = draw_probe_batch(
        Distribution.RANK_ONE_GAUSSIAN, n * n, n_hat=n, n_tilde=n, seed=seed, count=k
    )
    best = 0.0
    deepest = 0
    for j in range(k):
        result = arnoldi_frechet_rank_one(
            f, a_op, c=xh[j], d=xt[j], tol=tol, max_ell=max_ell
        )
        deepest = max(deepest, result.ell)
        best = max(best, result.norm())
        if not result.converged:
            raise NonConvergenceError(
                f"sample {j} did not converge by max_ell = {result.ell}",
                best_estimate=theta * best,
            )
    return theta * best, deepest
