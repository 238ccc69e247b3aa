"""Matrix-free linear operators with a rank-one probe fast path.

Variants: Dense, SparseCsrOp, KroneckerSum (C1 (x) I + I (x) C2),
FactorizedInverse (A^-1 behind a precomputed factorization), Gram (A^T A),
and Transpose.  Every operator carries a factorization n = n_hat * n_tilde
of its input dimension, normalized so n_tilde <= n_hat, which fixes the
shapes of rank-one probes x = x_tilde (x) x_hat.

Operators are immutable after construction; applying them from several
threads is safe.  ``to_dense`` is the only way any full n x n array is
formed, and it counts invocations in ``densify_count`` so tests can assert
that structured fast paths never materialize.
"""

import numpy as np
import scipy.sparse

from . import _accel
from .errors import PsdAssertionError, NonConvergenceError
from .linalg import lu_factor, lu_solve, small_svd, spectral_norm

__all__ = [
    "LinearOperator",
    "Dense",
    "SparseCsrOp",
    "KroneckerSum",
    "FactorizedInverse",
    "Gram",
    "Transpose",
    "stable_rank",
    "batch_window",
]

# Batch fast paths expand probes in chunks of at most this many doubles.
_CHUNK_WORDS = 1 << 22

_DENSE_FACTOR_GUARD = 4096


def batch_window(n):
    """Row count for batched probe evaluation at dimension n.

    A deterministic function of n alone: callers that evaluate samples in
    windows of exactly this many rows present every BLAS call with the same
    shapes no matter how a request was split, so a sample's value never
    depends on its neighbours in the batch.
    """
    return max(1, min(4096, _CHUNK_WORDS // max(n, 1)))


class LinearOperator:
    variant = "abstract"

    def __init__(self, m, n, n_hat=None, n_tilde=None, psd=False):
        if m <= 0 or n <= 0:
            raise ValueError(f"dimensions must be positive, got ({m}, {n})")
        if n_hat is None and n_tilde is None:
            n_hat, n_tilde = n, 1
        elif n_hat is None:
            if n % n_tilde:
                raise ValueError(f"n_tilde = {n_tilde} does not divide n = {n}")
            n_hat = n // n_tilde
        elif n_tilde is None:
            if n % n_hat:
                raise ValueError(f"n_hat = {n_hat} does not divide n = {n}")
            n_tilde = n // n_hat
        if n_hat * n_tilde != n:
            raise ValueError(
                f"factorization {n_hat} * {n_tilde} != n = {n}"
            )
        if n_tilde > n_hat:
            # Swap probe roles so the shorter factor is x_tilde.
            n_hat, n_tilde = n_tilde, n_hat
        self.m = m
        self.n = n
        self.n_hat = n_hat
        self.n_tilde = n_tilde
        self.psd = bool(psd)
        self.densify_count = 0

    # -- mandatory variant hooks ------------------------------------------

    def _apply(self, v):
        raise NotImplementedError

    def _apply_transpose(self, v):
        raise NotImplementedError

    def _materialize(self):
        raise NotImplementedError

    # -- public interface -------------------------------------------------

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"dimension mismatch: operator takes ({self.n},), got {v.shape}")
        return self._apply(v)

    def apply_transpose(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.m,):
            raise ValueError(f"dimension mismatch: transpose takes ({self.m},), got {v.shape}")
        return self._apply_transpose(v)

    def apply_rank_one(self, x_tilde, x_hat):
        x_tilde, x_hat = self._check_factors(x_tilde, x_hat)
        return self._apply_rank_one(x_tilde, x_hat)

    def _apply_rank_one(self, x_tilde, x_hat):
        # Generic path: materializes the length-n vector, never the matrix.
        return self._apply(np.kron(x_tilde, x_hat))

    def quadratic_form_rank_one(self, x_tilde, x_hat):
        """x^T (self) x for x = x_tilde (x) x_hat; requires the PSD assertion."""
        if not self.psd:
            raise PsdAssertionError(
                f"{self.variant} operator not asserted PSD; quadratic forms of "
                "indefinite operators have no estimation guarantee"
            )
        x_tilde, x_hat = self._check_factors(x_tilde, x_hat)
        return float(self.qf_rank_one_batch(x_tilde[None, :], x_hat[None, :])[0])

    def apply_batch(self, vs):
        vs = self._check_batch(vs, self.n)
        return self._apply_batch(vs)

    def _apply_batch(self, vs):
        return np.stack([self._apply(vs[i]) for i in range(vs.shape[0])])

    def norm_sq_batch(self, vs):
        """Row-wise ||A v||_2^2."""
        vs = self._check_batch(vs, self.n)
        return _accel.row_norms_sq(self._apply_batch(vs))

    def qf_batch(self, vs):
        """Row-wise v^T A v (caller is responsible for symmetry semantics)."""
        vs = self._check_batch(vs, self.n)
        return np.einsum("ij,ij->i", vs, self._apply_batch(vs))

    def norm_sq_rank_one_batch(self, xt, xh):
        xt, xh = self._check_factor_batch(xt, xh)
        return self._expand_chunked(xt, xh, self.norm_sq_batch)

    def qf_rank_one_batch(self, xt, xh):
        xt, xh = self._check_factor_batch(xt, xh)
        return self._expand_chunked(xt, xh, self.qf_batch)

    def trace(self):
        if self.m != self.n:
            raise ValueError("trace needs a square operator")
        return self._trace()

    def _trace(self):
        raise NotImplementedError

    def frobenius_sq(self):
        raise NotImplementedError

    def norm1_upper(self):
        """An upper estimate of the induced 1-norm, or None when unavailable."""
        return None

    def to_dense(self):
        """Materialize the full matrix (counted in ``densify_count``)."""
        self.densify_count += 1
        return self._materialize()

    # -- helpers ----------------------------------------------------------

    def _check_factors(self, x_tilde, x_hat):
        x_tilde = np.asarray(x_tilde, dtype=np.float64)
        x_hat = np.asarray(x_hat, dtype=np.float64)
        if x_tilde.shape != (self.n_tilde,) or x_hat.shape != (self.n_hat,):
            raise ValueError(
                f"dimension mismatch: factors must be ({self.n_tilde},), "
                f"({self.n_hat},); got {x_tilde.shape}, {x_hat.shape}"
            )
        return x_tilde, x_hat

    def _check_factor_batch(self, xt, xh):
        xt = np.asarray(xt, dtype=np.float64)
        xh = np.asarray(xh, dtype=np.float64)
        if xt.ndim != 2 or xh.ndim != 2 or xt.shape[0] != xh.shape[0]:
            raise ValueError("factor batches must be 2-D with equal row counts")
        if xt.shape[1] != self.n_tilde or xh.shape[1] != self.n_hat:
            raise ValueError(
                f"dimension mismatch: factor batches must be (*, {self.n_tilde}) "
                f"and (*, {self.n_hat}); got {xt.shape}, {xh.shape}"
            )
        return xt, xh

    @staticmethod
    def _check_batch(vs, width):
        vs = np.asarray(vs, dtype=np.float64)
        if vs.ndim != 2 or vs.shape[1] != width:
            raise ValueError(f"batch must be (*, {width}), got {vs.shape}")
        return vs

    def _expand_chunked(self, xt, xh, consume):
        count = xt.shape[0]
        out = np.empty(count)
        step = batch_window(self.n)
        for lo in range(0, count, step):
            hi = min(lo + step, count)
            probes = _accel.rank_one_expand(
                np.ascontiguousarray(xt[lo:hi]), np.ascontiguousarray(xh[lo:hi])
            )
            out[lo:hi] = consume(probes)
        return out


class Dense(LinearOperator):
    variant = "dense"

    def __init__(self, a, n_hat=None, n_tilde=None, psd=False):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"dense payload must be 2-D, got shape {a.shape}")
        super().__init__(a.shape[0], a.shape[1], n_hat, n_tilde, psd)
        self.a = a

    def _apply(self, v):
        return self.a @ v

    def _apply_transpose(self, v):
        return self.a.T @ v

    def _apply_batch(self, vs):
        return vs @ self.a.T

    def _materialize(self):
        return self.a.copy()

    def _trace(self):
        return float(np.trace(self.a))

    def frobenius_sq(self):
        return float(np.sum(self.a * self.a))

    def norm1_upper(self):
        return float(np.abs(self.a).sum(axis=0).max())

    def norm_inf_upper(self):
        return float(np.abs(self.a).sum(axis=1).max())


class SparseCsrOp(LinearOperator):
    variant = "sparse-csr"

    def __init__(self, csr, n_hat=None, n_tilde=None, psd=False):
        if not scipy.sparse.issparse(csr):
            raise ValueError("payload must be a scipy sparse matrix")
        csr = csr.tocsr().astype(np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        super().__init__(csr.shape[0], csr.shape[1], n_hat, n_tilde, psd)
        self.csr = csr

    def _apply(self, v):
        return self.csr @ v

    def _apply_transpose(self, v):
        return self.csr.T @ v

    def _apply_batch(self, vs):
        return (self.csr @ vs.T).T

    def _materialize(self):
        return self.csr.toarray()

    def _trace(self):
        return float(self.csr.diagonal().sum())

    def frobenius_sq(self):
        return float((self.csr.data ** 2).sum())

    def norm1_upper(self):
        if self.csr.nnz == 0:
            return 0.0
        return float(np.abs(self.csr).sum(axis=0).max())

    def norm_inf_upper(self):
        if self.csr.nnz == 0:
            return 0.0
        return float(np.abs(self.csr).sum(axis=1).max())


class KroneckerSum(LinearOperator):
    """C1 (x) I_{n_hat} + I_{n_tilde} (x) C2 on column-major vec ordering.

    Applying to v reshaped as X (n_hat x n_tilde) is vec(C2 X + X C1^T),
    which all code paths use; no n x n array is ever formed outside
    ``to_dense``.
    """

    variant = "kronecker-sum"

    def __init__(self, c1, c2, psd=False):
        c1 = np.asarray(c1, dtype=np.float64)
        c2 = np.asarray(c2, dtype=np.float64)
        if c1.ndim != 2 or c1.shape[0] != c1.shape[1]:
            raise ValueError(f"C1 must be square, got {c1.shape}")
        if c2.ndim != 2 or c2.shape[0] != c2.shape[1]:
            raise ValueError(f"C2 must be square, got {c2.shape}")
        if c1.shape[0] > c2.shape[0]:
            raise ValueError(
                "C1 must not be larger than C2 (probe normalization needs "
                f"n_tilde <= n_hat); got {c1.shape[0]} > {c2.shape[0]}"
            )
        n = c1.shape[0] * c2.shape[0]
        super().__init__(n, n, n_hat=c2.shape[0], n_tilde=c1.shape[0], psd=psd)
        self.c1 = c1
        self.c2 = c2

    # v[j*n_hat + i] corresponds to X[i, j]; row-major reshape to
    # (n_tilde, n_hat) therefore holds W = X^T, and A v maps to
    # W C2^T + C1 W in that layout.
    def _apply(self, v):
        w = v.reshape(self.n_tilde, self.n_hat)
        return (w @ self.c2.T + self.c1 @ w).reshape(-1)

    def _apply_transpose(self, v):
        w = v.reshape(self.n_tilde, self.n_hat)
        return (w @ self.c2 + self.c1.T @ w).reshape(-1)

    def _apply_batch(self, vs):
        w = vs.reshape(-1, self.n_tilde, self.n_hat)
        out = w @ self.c2.T + np.matmul(self.c1, w)
        return out.reshape(vs.shape)

    def _apply_rank_one(self, x_tilde, x_hat):
        return np.kron(x_tilde, self.c2 @ x_hat) + np.kron(self.c1 @ x_tilde, x_hat)

    def norm_sq_rank_one_batch(self, xt, xh):
        # || u v^T + w z^T ||_F^2 for u = C2 x_hat, v = x_tilde, w = x_hat,
        # z = C1 x_tilde.
        xt, xh = self._check_factor_batch(xt, xh)
        u = xh @ self.c2.T
        z = xt @ self.c1.T
        u_sq = _accel.row_norms_sq(u)
        z_sq = _accel.row_norms_sq(z)
        xh_sq = _accel.row_norms_sq(xh)
        xt_sq = _accel.row_norms_sq(xt)
        cross = np.einsum("ij,ij->i", u, xh) * np.einsum("ij,ij->i", xt, z)
        return u_sq * xt_sq + 2.0 * cross + xh_sq * z_sq

    def qf_rank_one_batch(self, xt, xh):
        xt, xh = self._check_factor_batch(xt, xh)
        qf1 = np.einsum("ij,ij->i", xt @ self.c1.T, xt)
        qf2 = np.einsum("ij,ij->i", xh @ self.c2.T, xh)
        return qf1 * _accel.row_norms_sq(xh) + _accel.row_norms_sq(xt) * qf2

    def _materialize(self):
        return np.kron(self.c1, np.eye(self.n_hat)) + np.kron(
            np.eye(self.n_tilde), self.c2
        )

    def _trace(self):
        return float(self.n_hat * np.trace(self.c1) + self.n_tilde * np.trace(self.c2))

    def frobenius_sq(self):
        return float(
            self.n_hat * np.sum(self.c1 * self.c1)
            + self.n_tilde * np.sum(self.c2 * self.c2)
            + 2.0 * np.trace(self.c1) * np.trace(self.c2)
        )

    def norm1_upper(self):
        return float(np.abs(self.c1).sum(axis=0).max() + np.abs(self.c2).sum(axis=0).max())

    def norm_inf_upper(self):
        return float(np.abs(self.c1).sum(axis=1).max() + np.abs(self.c2).sum(axis=1).max())


class FactorizedInverse(LinearOperator):
    """A^-1 behind a factorization computed once at construction.

    The general path densifies the base operator and takes an LU
    factorization.  For a KroneckerSum with symmetric blocks,
    ``sylvester_eigen=True`` switches to an eigendecomposition of the two
    blocks, which solves the underlying Sylvester equation per apply and
    additionally yields exact trace / Frobenius values of the inverse.
    """

    variant = "factorized-inverse"

    def __init__(self, base, sylvester_eigen=False, psd=None):
        if base.m != base.n:
            raise ValueError("can only invert a square operator")
        self._eigen = None
        self._lu = None
        if sylvester_eigen:
            if not isinstance(base, KroneckerSum):
                raise ValueError("sylvester_eigen requires a KroneckerSum base")
            if not np.allclose(base.c1, base.c1.T, atol=1e-12) or not np.allclose(
                base.c2, base.c2.T, atol=1e-12
            ):
                raise ValueError("sylvester_eigen requires symmetric blocks")
            lam_t, q_t = np.linalg.eigh(base.c1)
            lam_h, q_h = np.linalg.eigh(base.c2)
            denom = lam_h[:, None] + lam_t[None, :]
            if np.min(np.abs(denom)) <= 1e-12 * np.max(np.abs(denom)):
                raise np.linalg.LinAlgError("Kronecker sum is singular to working precision")
            self._eigen = (lam_t, q_t, lam_h, q_h, denom)
            if psd is None:
                psd = bool(np.min(denom) > 0.0)
        else:
            if base.n > _DENSE_FACTOR_GUARD:
                raise ValueError(
                    f"dense factorization path is limited to n <= {_DENSE_FACTOR_GUARD}; "
                    "use sylvester_eigen for symmetric Kronecker sums"
                )
            self._lu = lu_factor(base.to_dense())
        super().__init__(base.n, base.n, base.n_hat, base.n_tilde, bool(psd))
        self.base = base

    def _solve_eigen(self, w):
        # w has shape (..., n_tilde, n_hat) holding X^T slices.
        lam_t, q_t, lam_h, q_h, denom = self._eigen
        core = np.swapaxes(q_h.T @ np.swapaxes(w, -1, -2) @ q_t, -1, -2)
        core = core / denom.T
        return np.swapaxes(q_h @ np.swapaxes(core, -1, -2) @ q_t.T, -1, -2)

    def _apply(self, v):
        if self._eigen is not None:
            w = v.reshape(self.n_tilde, self.n_hat)
            return self._solve_eigen(w).reshape(-1)
        return lu_solve(self._lu, v)

    def _apply_transpose(self, v):
        if self._eigen is not None:
            return self._apply(v)
        return lu_solve(self._lu, v, transpose=True)

    def _apply_batch(self, vs):
        if self._eigen is not None:
            w = vs.reshape(-1, self.n_tilde, self.n_hat)
            return self._solve_eigen(w).reshape(vs.shape)
        return lu_solve(self._lu, vs.T).T

    def qf_rank_one_batch(self, xt, xh):
        if self._eigen is None:
            return super().qf_rank_one_batch(xt, xh)
        xt, xh = self._check_factor_batch(xt, xh)
        lam_t, q_t, lam_h, q_h, denom = self._eigen
        u = (xh @ q_h) ** 2
        v = (xt @ q_t) ** 2
        return _accel.bilinear_form_batch(u, 1.0 / denom, v)

    def _materialize(self):
        if self._eigen is not None:
            lam_t, q_t, lam_h, q_h, denom = self._eigen
            inv = np.zeros((self.n, self.n))
            for j in range(self.n_tilde):
                for i in range(self.n_hat):
                    vec = np.kron(q_t[:, j], q_h[:, i])
                    inv += np.outer(vec, vec) / denom[i, j]
            return inv
        eye = np.eye(self.n)
        return lu_solve(self._lu, eye)

    def _trace(self):
        if self._eigen is not None:
            return float((1.0 / self._eigen[4]).sum())
        return float(np.trace(lu_solve(self._lu, np.eye(self.n))))

    def frobenius_sq(self):
        if self._eigen is not None:
            return float((1.0 / self._eigen[4] ** 2).sum())
        sol = lu_solve(self._lu, np.eye(self.n))
        return float(np.sum(sol * sol))


class Gram(LinearOperator):
    """A^T A for an inner operator A; PSD by construction.

    Quadratic forms are computed as ||A x||_2^2 — one inner apply, no
    transpose apply.
    """

    variant = "gram"

    def __init__(self, inner, n_hat=None, n_tilde=None):
        super().__init__(
            inner.n,
            inner.n,
            n_hat if n_hat is not None else inner.n_hat,
            n_tilde if n_tilde is not None else inner.n_tilde,
            psd=True,
        )
        self.inner = inner

    def _apply(self, v):
        return self.inner._apply_transpose(self.inner._apply(v))

    def _apply_transpose(self, v):
        return self._apply(v)

    def _apply_batch(self, vs):
        applied = self.inner._apply_batch(vs)
        if isinstance(self.inner, Dense):
            return applied @ self.inner.a
        if isinstance(self.inner, SparseCsrOp):
            return (self.inner.csr.T @ applied.T).T
        return np.stack(
            [self.inner._apply_transpose(applied[i]) for i in range(applied.shape[0])]
        )

    def _apply_rank_one(self, x_tilde, x_hat):
        return self.inner._apply_transpose(self.inner._apply_rank_one(x_tilde, x_hat))

    def qf_batch(self, vs):
        vs = self._check_batch(vs, self.n)
        return self.inner.norm_sq_batch(vs)

    def qf_rank_one_batch(self, xt, xh):
        xt, xh = self._check_factor_batch(xt, xh)
        if (self.n_hat, self.n_tilde) != (self.inner.n_hat, self.inner.n_tilde):
            return self._expand_chunked(xt, xh, self.qf_batch)
        return self.inner.norm_sq_rank_one_batch(xt, xh)

    def _materialize(self):
        a = self.inner.to_dense()
        return a.T @ a

    def _trace(self):
        return self.inner.frobenius_sq()

    def frobenius_sq(self):
        # ||A^T A||_F^2 = sum sigma_i(A)^4.
        if isinstance(self.inner, Dense) and min(self.inner.a.shape) <= 512:
            s = small_svd(self.inner.a)
            return float((s ** 4).sum())
        raise NotImplementedError(
            "Frobenius norm of a Gram operator is only available for desk-scale "
            "dense inner operators"
        )

    def norm1_upper(self):
        n1 = self.inner.norm1_upper()
        ninf = getattr(self.inner, "norm_inf_upper", lambda: None)()
        if n1 is None or ninf is None:
            return None
        return n1 * ninf


class Transpose(LinearOperator):
    variant = "transpose"

    def __init__(self, base, n_hat=None, n_tilde=None, psd=None):
        super().__init__(
            base.n, base.m, n_hat, n_tilde, base.psd if psd is None else psd
        )
        self.base = base

    def _apply(self, v):
        return self.base._apply_transpose(v)

    def _apply_transpose(self, v):
        return self.base._apply(v)

    def _materialize(self):
        return self.base.to_dense().T

    def _trace(self):
        return self.base.trace()

    def frobenius_sq(self):
        return self.base.frobenius_sq()

    def norm1_upper(self):
        return getattr(self.base, "norm_inf_upper", lambda: None)()


def stable_rank(op, kind="frobenius_sq", tol=1e-8, max_iters=500, seed=0):
    """Effective-rank ratio of an operator.

    ``kind="frobenius_sq"`` gives ||A||_F^2 / ||A||_2^2; ``"trace_over_norm"``
    gives trace(A) / ||A||_2 (square operators).  Both lie in [1, n] up to
    the tolerance of the embedded power iteration.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if kind not in ("frobenius_sq", "trace_over_norm"):
        raise ValueError(f"unknown stable-rank kind {kind!r}")
    est = spectral_norm(op, tol=tol, max_iters=max_iters, seed=seed)
    if not est.converged:
        raise NonConvergenceError(
            f"spectral norm power iteration did not converge in {max_iters} iterations",
            best_estimate=est.value,
        )
    if est.value == 0.0:
        raise ZeroDivisionError("stable rank of the zero operator is undefined")
    if kind == "frobenius_sq":
        return op.frobenius_sq() / est.value ** 2
    return op.trace() / est.value
