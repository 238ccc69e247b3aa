"""Dense linear algebra kernels at desk scale.

Vectors are 1-D float64 arrays, matrices 2-D row-major float64 arrays.
Everything here is pure and safe for concurrent read-only use.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonConvergenceError

__all__ = [
    "mat_vec",
    "LuFactorization",
    "lu_factor",
    "lu_solve",
    "expm",
    "small_svd",
    "SpectralNormEstimate",
    "spectral_norm",
    "reshape_vec_to_mat",
    "reshape_mat_to_vec",
]

_SVD_GUARD = 512


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _as_vector(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def mat_vec(a, v):
    a = _as_matrix(a)
    v = _as_vector(v)
    if a.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ ({v.shape[0]},)")
    return a @ v


@dataclass(frozen=True)
class LuFactorization:
    """Packed LU factors with partial pivoting of a square matrix."""

    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self):
        return self.lu.shape[0]


def lu_factor(a):
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"LU needs a square matrix, got {a.shape}")
    with warnings.catch_warnings():
        # The exact-singularity warning duplicates the error raised below.
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= a.shape[0] * np.finfo(np.float64).eps * max(diag.max(), 1.0):
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    return LuFactorization(lu, piv)


def lu_solve(f, b, transpose=False):
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.n:
        raise ValueError(f"dimension mismatch: factor is {f.n}x{f.n}, rhs has {b.shape}")
    return scipy.linalg.lu_solve((f.lu, f.piv), b, trans=1 if transpose else 0)


# Degree-13 Pade coefficients for the matrix exponential.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
    33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)


def expm(m):
    """Matrix exponential by scaling and squaring with a degree-13 Pade step."""
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expm needs a square matrix, got {m.shape}")
    n = m.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    b = _PADE13
    norm1 = np.abs(m).sum(axis=0).max() if n else 0.0
    # theta_13: largest norm at which the (13,13) approximant alone meets
    # double precision.
    squarings = 0
    if norm1 > 5.371920351148152:
        squarings = int(np.ceil(np.log2(norm1 / 5.371920351148152)))
    a = m / (2.0 ** squarings)
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    )
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


def small_svd(q):
    """Singular values of a desk-scale matrix, nonincreasing."""
    q = _as_matrix(q)
    if min(q.shape) > _SVD_GUARD:
        raise ValueError(
            f"small_svd is limited to min(rows, cols) <= {_SVD_GUARD}, got {q.shape}"
        )
    return np.linalg.svd(q, compute_uv=False)


@dataclass(frozen=True)
class SpectralNormEstimate:
    value: float
    iterations: int
    converged: bool
    seed: int


class _DenseAsOperator:
    def __init__(self, a):
        self.a = a
        self.m, self.n = a.shape

    def apply(self, v):
        return self.a @ v

    def apply_transpose(self, v):
        return self.a.T @ v


def spectral_norm(op, tol=1e-8, max_iters=500, seed=0):
    """Largest singular value via power iteration on op^T op.

    ``op`` is a 2-D array or any object with ``m``, ``n``, ``apply`` and
    ``apply_transpose``.  Returns a SpectralNormEstimate; ``converged`` is
    False when the relative change never fell below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(op, np.ndarray):
        op = _DenseAsOperator(_as_matrix(op))
    gen = np.random.Generator(np.random.Philox(key=seed))
    v = gen.standard_normal(op.n)
    nv = np.linalg.norm(v)
    v /= nv
    sigma = 0.0
    for it in range(1, max_iters + 1):
        av = op.apply(v)
        new_sigma = np.linalg.norm(av)
        if new_sigma == 0.0:
            return SpectralNormEstimate(0.0, it, True, seed)
        w = op.apply_transpose(av)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return SpectralNormEstimate(new_sigma, it, True, seed)
        v = w / nw
        if it > 1 and abs(new_sigma - sigma) <= tol * new_sigma:
            return SpectralNormEstimate(new_sigma, it, True, seed)
        sigma = new_sigma
    return SpectralNormEstimate(sigma, max_iters, False, seed)


def reshape_vec_to_mat(v, n_hat, n_tilde):
    """Column-major reshape so that vec(x_hat x_tilde^T) = x_tilde (x) x_hat."""
    v = _as_vector(v)
    if v.shape[0] != n_hat * n_tilde:
        raise ValueError(
            f"dimension mismatch: len {v.shape[0]} != {n_hat}*{n_tilde}"
        )
    return v.reshape((n_hat, n_tilde), order="F")


def reshape_mat_to_vec(m):
    m = _as_matrix(m)
    return m.reshape(-1, order="F")
