"""Backend-selectable compute kernels.

The hot inner loops of the package live here in two interchangeable
implementations: a pure-NumPy one and a numba ``@njit`` one.  The active
backend is chosen once at import time from the ``KRONPROBE_BACKEND``
environment variable (``"numba"`` or ``"numpy"``); the default is numba
whenever it imports, falling back to NumPy otherwise.

Each backend is fully deterministic on its own.  Across backends,
``gauss_from_uniform`` is bitwise-identical on the central branch
(|u - 0.5| <= 0.425) and agrees to a few ulps on the tail branch, where
numpy's vectorized log and libm's scalar log can disagree in the last bit.
Sign probes are comparison-based and therefore backend-independent
exactly.  Kernels that reduce (sums, norms) may also differ across
backends in the last bits due to summation order.

``KRONPROBE_THREADS`` caps the numba thread pool when set; all kernels here
are serial, so this only matters for downstream code that opts into
parallel numba regions.
"""

import os
import warnings

import numpy as np

_BACKEND_ENV = "KRONPROBE_BACKEND"
_THREADS_ENV = "KRONPROBE_THREADS"


def _choose_backend():
    choice = os.environ.get(_BACKEND_ENV, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        warnings.warn(
            f"{_BACKEND_ENV}={choice!r} not recognized; expected 'numba' or "
            "'numpy'. Using the default.",
            RuntimeWarning,
        )
        choice = ""
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            warnings.warn(
                "numba backend requested but numba is not importable; "
                "falling back to numpy.",
                RuntimeWarning,
            )
        return "numpy"
    return "numba"


# Wichura's PPND16 rational approximations for the standard normal quantile
# function (absolute CDF accuracy far below the 1e-9 contract).
_A0 = 3.3871328727963666080e0
_A1 = 1.3314166789178437745e2
_A2 = 1.9715909503065514427e3
_A3 = 1.3731693765509461125e4
_A4 = 4.5921953931549871457e4
_A5 = 6.7265770927008700853e4
_A6 = 3.3430575583588128105e4
_A7 = 2.5090809287301226727e3
_B1 = 4.2313330701600911252e1
_B2 = 6.8718700749205790830e2
_B3 = 5.3941960214247511077e3
_B4 = 2.1213794301586595867e4
_B5 = 3.9307895800092710610e4
_B6 = 2.8729085735721942674e4
_B7 = 5.2264952788528545610e3
_C0 = 1.42343711074968357734e0
_C1 = 4.63033784615654529590e0
_C2 = 5.76949722146069140550e0
_C3 = 3.64784832476320460504e0
_C4 = 1.27045825245236838258e0
_C5 = 2.41780725177450611770e-1
_C6 = 2.27238449892691845833e-2
_C7 = 7.74545014278341407640e-4
_D1 = 2.05319162663775882187e0
_D2 = 1.67638483018380384940e0
_D3 = 6.89767334985100004550e-1
_D4 = 1.48103976427480074590e-1
_D5 = 1.51986665636164571966e-2
_D6 = 5.47593808499534494600e-4
_D7 = 1.05075007164441684324e-9
_E0 = 6.65790464350110377720e0
_E1 = 5.46378491116411436990e0
_E2 = 1.78482653991729133580e0
_E3 = 2.96560571828504891230e-1
_E4 = 2.65321895265761230930e-2
_E5 = 1.24266094738807843860e-3
_E6 = 2.71155556874348757815e-5
_E7 = 2.01033439929228813265e-7
_F1 = 5.99832206555887937690e-1
_F2 = 1.36929880922735805310e-1
_F3 = 1.48753612908506148525e-2
_F4 = 7.86869131145613259100e-4
_F5 = 1.84631831751005468180e-5
_F6 = 1.42151175831644588870e-7
_F7 = 2.04426310338993978564e-15


def _gauss_from_uniform_numpy(u):
    """Standard normal quantile of each u in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    q = u - 0.5
    out = np.empty_like(u)

    central = np.abs(q) <= 0.425
    r = 0.180625 - q * q
    num = (
        ((((((_A7 * r + _A6) * r + _A5) * r + _A4) * r + _A3) * r + _A2) * r + _A1) * r
        + _A0
    )
    den = (
        ((((((_B7 * r + _B6) * r + _B5) * r + _B4) * r + _B3) * r + _B2) * r + _B1) * r
        + 1.0
    )
    np.copyto(out, q * num / den, where=central)

    tail = ~central
    if np.any(tail):
        p = u[tail]
        qt = q[tail]
        rt = np.where(qt < 0.0, p, 1.0 - p)
        rt = np.sqrt(-np.log(rt))
        near = rt <= 5.0

        r1 = rt - 1.6
        num1 = (
            ((((((_C7 * r1 + _C6) * r1 + _C5) * r1 + _C4) * r1 + _C3) * r1 + _C2) * r1 + _C1)
            * r1
            + _C0
        )
        den1 = (
            ((((((_D7 * r1 + _D6) * r1 + _D5) * r1 + _D4) * r1 + _D3) * r1 + _D2) * r1 + _D1)
            * r1
            + 1.0
        )
        r2 = rt - 5.0
        num2 = (
            ((((((_E7 * r2 + _E6) * r2 + _E5) * r2 + _E4) * r2 + _E3) * r2 + _E2) * r2 + _E1)
            * r2
            + _E0
        )
        den2 = (
            ((((((_F7 * r2 + _F6) * r2 + _F5) * r2 + _F4) * r2 + _F3) * r2 + _F2) * r2 + _F1)
            * r2
            + 1.0
        )
        val = np.where(near, num1 / den1, num2 / den2)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def _rank_one_expand_numpy(xt, xh):
    """Rows of the Kronecker products: out[b, j*nh + i] = xt[b, j] * xh[b, i]."""
    b = xt.shape[0]
    return (xt[:, :, None] * xh[:, None, :]).reshape(b, -1)


def _bilinear_form_batch_numpy(left, mid, right):
    """out[b] = left[b, :] @ mid @ right[b, :]."""
    return ((left @ mid) * right).sum(axis=1)


def _row_norms_sq_numpy(y):
    return np.einsum("ij,ij->i", y, y)


def _quad_form_batch_numpy(mat, x):
    """out[b] = x[b, :] @ mat @ x[b, :]."""
    return ((x @ mat) * x).sum(axis=1)


def _build_numba_kernels():
    import numba

    threads = os.environ.get(_THREADS_ENV)
    if threads:
        try:
            numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
        except (ValueError, TypeError):
            warnings.warn(f"ignoring non-integer {_THREADS_ENV}={threads!r}", RuntimeWarning)

    @numba.njit(cache=True)
    def gauss_from_uniform(u):
        out = np.empty_like(u)
        for idx in range(u.shape[0]):
            p = u[idx]
            q = p - 0.5
            if abs(q) <= 0.425:
                r = 0.180625 - q * q
                num = (
                    ((((((_A7 * r + _A6) * r + _A5) * r + _A4) * r + _A3) * r + _A2) * r + _A1)
                    * r
                    + _A0
                )
                den = (
                    ((((((_B7 * r + _B6) * r + _B5) * r + _B4) * r + _B3) * r + _B2) * r + _B1)
                    * r
                    + 1.0
                )
                out[idx] = q * num / den
            else:
                if q < 0.0:
                    rt = p
                else:
                    rt = 1.0 - p
                rt = np.sqrt(-np.log(rt))
                if rt <= 5.0:
                    r1 = rt - 1.6
                    num = (
                        ((((((_C7 * r1 + _C6) * r1 + _C5) * r1 + _C4) * r1 + _C3) * r1 + _C2) * r1 + _C1)
                        * r1
                        + _C0
                    )
                    den = (
                        ((((((_D7 * r1 + _D6) * r1 + _D5) * r1 + _D4) * r1 + _D3) * r1 + _D2) * r1 + _D1)
                        * r1
                        + 1.0
                    )
                else:
                    r2 = rt - 5.0
                    num = (
                        ((((((_E7 * r2 + _E6) * r2 + _E5) * r2 + _E4) * r2 + _E3) * r2 + _E2) * r2 + _E1)
                        * r2
                        + _E0
                    )
                    den = (
                        ((((((_F7 * r2 + _F6) * r2 + _F5) * r2 + _F4) * r2 + _F3) * r2 + _F2) * r2 + _F1)
                        * r2
                        + 1.0
                    )
                val = num / den
                if q < 0.0:
                    val = -val
                out[idx] = val
        return out

    @numba.njit(cache=True)
    def rank_one_expand(xt, xh):
        b, nt = xt.shape
        nh = xh.shape[1]
        out = np.empty((b, nt * nh))
        for row in range(b):
            for j in range(nt):
                base = j * nh
                tj = xt[row, j]
                for i in range(nh):
                    out[row, base + i] = tj * xh[row, i]
        return out

    @numba.njit(cache=True)
    def bilinear_form_batch(left, mid, right):
        b, m = left.shape
        p = right.shape[1]
        out = np.empty(b)
        for row in range(b):
            acc = 0.0
            for i in range(m):
                li = left[row, i]
                if li != 0.0:
                    inner = 0.0
                    for j in range(p):
                        inner += mid[i, j] * right[row, j]
                    acc += li * inner
            out[row] = acc
        return out

    @numba.njit(cache=True)
    def row_norms_sq(y):
        b, n = y.shape
        out = np.empty(b)
        for row in range(b):
            acc = 0.0
            for j in range(n):
                acc += y[row, j] * y[row, j]
            out[row] = acc
        return out

    @numba.njit(cache=True)
    def quad_form_batch(mat, x):
        b, n = x.shape
        out = np.empty(b)
        for row in range(b):
            acc = 0.0
            for i in range(n):
                inner = 0.0
                for j in range(n):
                    inner += mat[i, j] * x[row, j]
                acc += x[row, i] * inner
            out[row] = acc
        return out

    return {
        "gauss_from_uniform": gauss_from_uniform,
        "rank_one_expand": rank_one_expand,
        "bilinear_form_batch": bilinear_form_batch,
        "row_norms_sq": row_norms_sq,
        "quad_form_batch": quad_form_batch,
    }


NUMPY_KERNELS = {
    "gauss_from_uniform": _gauss_from_uniform_numpy,
    "rank_one_expand": _rank_one_expand_numpy,
    "bilinear_form_batch": _bilinear_form_batch_numpy,
    "row_norms_sq": _row_norms_sq_numpy,
    "quad_form_batch": _quad_form_batch_numpy,
}

BACKEND = _choose_backend()
NUMBA_KERNELS = _build_numba_kernels() if BACKEND == "numba" else None
_ACTIVE = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS

gauss_from_uniform = _ACTIVE["gauss_from_uniform"]
rank_one_expand = _ACTIVE["rank_one_expand"]
bilinear_form_batch = _ACTIVE["bilinear_form_batch"]
row_norms_sq = _ACTIVE["row_norms_sq"]
quad_form_batch = _ACTIVE["quad_form_batch"]


def active_backend():
    return BACKEND
