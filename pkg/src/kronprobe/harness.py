"""Experiment harness: named test matrices, failure curves, estimator tables.

The matrix family covers low-rank constructions over Haar-orthogonal factors,
decaying and growing diagonal spectra, a rank-one trace target built from
vec(I), the all-ones matrix, 2-D grid Kronecker sums, and Matrix Market files.
On top sit the two Monte Carlo experiments: empirical failure frequencies of
the norm inequalities over a tau grid, and over/under-shoot tables for the
k-sample trace estimator, both deterministic in (spec, seed, trials) and
persisted as RFC-4180 CSV.
"""

import csv
import math
import os
import tempfile
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse

from .errors import MatrixMarketFormatError
from .estimators import norm_samples, quadratic_form_samples
from .linalg import small_svd
from .operators import (
    Dense,
    FactorizedInverse,
    Gram,
    KroneckerSum,
    SparseCsrOp,
)
from .probes import Distribution, draw_probe_batch

__all__ = [
    "MatrixTag",
    "TargetKind",
    "TestMatrixSpec",
    "ExperimentRow",
    "ExperimentTable",
    "ReferenceValue",
    "generate_matrix",
    "haar_orthogonal",
    "reference_value",
    "failure_curve",
    "estimator_table",
    "read_matrix_market",
    "write_csv",
]

_HAAR_GUARD = 512

# Probe streams use stream 0; matrix content and reference estimates draw from
# separate streams so they never share samples with the experiment's probes.
_MATRIX_STREAM = 1
_REFERENCE_STREAM = 2

_REFERENCE_SAMPLES = 1000


class MatrixTag(Enum):
    A1 = "a1"
    A2 = "a2"
    A3 = "a3"
    A4 = "a4"
    A5 = "a5"
    A6 = "a6"
    A7 = "a7"
    ONES = "ones"
    RANK_ONE_VEC_IDENTITY = "rank1-vec-identity"
    LAPLACE2D = "laplace2d"
    CONV_DIFF = "convdiff"
    FRECHET_GRID = "frechet-grid"
    MATRIX_MARKET = "mm"

    @property
    def is_dense_family(self):
        return self in (
            MatrixTag.A1, MatrixTag.A2, MatrixTag.A3, MatrixTag.A4,
            MatrixTag.A5, MatrixTag.A6, MatrixTag.A7,
        )


class TargetKind(Enum):
    TRACE_OF_A = "trace"
    TRACE_OF_INV_A = "trace-inv"
    FROB_SQ_OF_INV_A = "frob-sq-inv"
    SPECTRAL_NORM = "spectral-norm"
    FROBENIUS_NORM = "frobenius-norm"

    @property
    def is_trace_family(self):
        return self in (
            TargetKind.TRACE_OF_A,
            TargetKind.TRACE_OF_INV_A,
            TargetKind.FROB_SQ_OF_INV_A,
        )


@dataclass(frozen=True)
class TestMatrixSpec:
    __test__ = False  # keep pytest from collecting the Test- prefix

    tag: MatrixTag
    n: int
    target: TargetKind
    n_hat: int | None = None
    n_tilde: int | None = None
    path: str | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"matrix size must be positive, got {self.n}")
        if self.tag is MatrixTag.MATRIX_MARKET and self.path is None:
            raise ValueError("matrix-market specs need a file path")
        if self.target.is_trace_family and self.tag.is_dense_family:
            raise ValueError(
                f"{self.tag.value} is not sign-definite; trace targets need a PSD matrix"
            )


@dataclass(frozen=True)
class ExperimentRow:
    matrix: str
    distribution: str
    k: int
    theta: float
    upper_fail: float
    lower_fail: float
    trials: int
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.upper_fail <= 1.0 and 0.0 <= self.lower_fail <= 1.0):
            raise ValueError("failure ratios must lie in [0, 1]")
        if self.trials <= 0:
            raise ValueError("trials must be positive")

    @property
    def sort_key(self):
        return (self.matrix, self.distribution, self.k, self.theta)


@dataclass(frozen=True)
class ExperimentTable:
    rows: tuple

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: r.sort_key)


@dataclass(frozen=True)
class ReferenceValue:
    matrix: str
    target: TargetKind
    value: float
    provenance: str  # "exact" | "est-1000"
    samples: int | None = None


def haar_orthogonal(n, seed):
    """Uniformly distributed orthogonal matrix: QR of a Gaussian with the
    R-diagonal sign folded into Q."""
    if n < 1 or n > _HAAR_GUARD:
        raise ValueError(f"need 1 <= n <= {_HAAR_GUARD}, got {n}")
    flat = draw_probe_batch(
        Distribution.GAUSSIAN, n * n, seed=seed, count=1, stream=_MATRIX_STREAM
    )
    q, r = np.linalg.qr(flat[0].reshape(n, n))
    signs = np.where(np.diagonal(r) < 0.0, -1.0, 1.0)
    return q * signs


def _gaussian_matrix(n, seed):
    flat = draw_probe_batch(
        Distribution.GAUSSIAN, n * n, seed=seed, count=1, stream=_MATRIX_STREAM
    )
    return flat[0].reshape(n, n)


def _second_difference(points, scale):
    t = (
        np.diag(np.full(points, 2.0))
        - np.diag(np.ones(points - 1), 1)
        - np.diag(np.ones(points - 1), -1)
    )
    return scale * t

def _first_difference(points, scale):
    d = np.diag(np.ones(points - 1), 1) - np.diag(np.ones(points - 1), -1)
    return scale * d


def _square_side(n, tag):
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"{tag.value} needs a square size, got n = {n}")
    return side


def _factor_pair(spec):
    if spec.n_hat is not None or spec.n_tilde is not None:
        return spec.n_hat, spec.n_tilde
    side = math.isqrt(spec.n)
    if side * side == spec.n:
        return side, side
    return None, None


def _dense_family_matrix(tag, n, seed):
    base = 1000003 * seed + 7919 * "a1 a2 a3 a4 a5 a6 a7".split().index(tag.value)
    if tag is MatrixTag.A1:
        u = haar_orthogonal(n, base)
        return np.outer(u[:, 0], np.eye(n)[:, 0])
    if tag is MatrixTag.A2:
        u = haar_orthogonal(n, base)
        v = haar_orthogonal(n, base + 1)
        return np.outer(u[:, 0], v[:, 0])
    if tag in (MatrixTag.A3, MatrixTag.A4):
        d = np.exp(-0.5 * np.arange(1, n + 1))
        u = haar_orthogonal(n, base)
        if tag is MatrixTag.A3:
            return u * d
        v = haar_orthogonal(n, base + 1)
        return (u * d) @ v.T
    if tag is MatrixTag.A5:
        d = np.arange(1, n + 1, dtype=float) ** 2
        return haar_orthogonal(n, base) * d
    if tag is MatrixTag.A6:
        return haar_orthogonal(n, base)
    return _gaussian_matrix(n, base)


def _grid_blocks(spec, seed):
    tag, n = spec.tag, spec.n
    side = _square_side(n, tag)
    if tag is MatrixTag.LAPLACE2D:
        t = _second_difference(side, float((side + 1) ** 2))
        return t, t, True
    if tag is MatrixTag.CONV_DIFF:
        # diffusion plus a strong centered-difference convection term
        t = _second_difference(side, float((side + 1) ** 2))
        c = t + 10.0 * _first_difference(side, (side + 1) / 2.0)
        return c, c, False
    # frechet grid: scaled-down negative 1-D second difference on [0, 1]
    t = _second_difference(side, float((side - 1) ** 2))
    return -0.01 * t, -0.01 * t, False


def generate_matrix(spec, seed=0):
    """Build the operator whose target quantity the experiments estimate."""
    tag, n = spec.tag, spec.n
    n_hat, n_tilde = _factor_pair(spec)
    if tag.is_dense_family:
        a = _dense_family_matrix(tag, n, seed)
        return Dense(a, n_hat=n_hat, n_tilde=n_tilde)
    if tag is MatrixTag.ONES:
        row = np.ones((1, n))
        return Gram(Dense(row, n_hat=n_hat, n_tilde=n_tilde))
    if tag is MatrixTag.RANK_ONE_VEC_IDENTITY:
        side = _square_side(n, tag)
        v = np.eye(side).reshape(-1)
        return Gram(Dense(v[None, :], n_hat=n_hat or side, n_tilde=n_tilde or side))
    if tag in (MatrixTag.LAPLACE2D, MatrixTag.CONV_DIFF, MatrixTag.FRECHET_GRID):
        c1, c2, symmetric_pd = _grid_blocks(spec, seed)
        base = KroneckerSum(c1, c2, psd=symmetric_pd or tag is MatrixTag.CONV_DIFF)
        if spec.target is TargetKind.TRACE_OF_INV_A:
            return FactorizedInverse(base, sylvester_eigen=symmetric_pd, psd=True)
        if spec.target is TargetKind.FROB_SQ_OF_INV_A:
            return Gram(FactorizedInverse(base, sylvester_eigen=symmetric_pd))
        return base
    if tag is MatrixTag.MATRIX_MARKET:
        op = read_matrix_market(spec.path)
        if op.n != n:
            raise ValueError(f"file has size {op.n}, spec says {n}")
        if n_hat is not None:
            op = SparseCsrOp(op.csr, n_hat=n_hat, n_tilde=n_tilde, psd=op.psd)
        if spec.target is TargetKind.TRACE_OF_INV_A:
            return FactorizedInverse(op, psd=True)
        if spec.target is TargetKind.FROB_SQ_OF_INV_A:
            return Gram(FactorizedInverse(op))
        if spec.target.is_trace_family:
            return SparseCsrOp(op.csr, n_hat=op.n_hat, n_tilde=op.n_tilde, psd=True)
        return op
    raise ValueError(f"unhandled matrix tag {tag}")


def _est_reference(op, seed):
    qf = quadratic_form_samples(
        op,
        Distribution.GAUSSIAN,
        seed=seed,
        count=_REFERENCE_SAMPLES,
        stream=_REFERENCE_STREAM,
    )
    return float(qf.sum() / _REFERENCE_SAMPLES)


def reference_value(spec, op, seed=0, force_estimate=False):
    """The Exact column: closed-form value when the operator has one, else a
    high-sample Gaussian estimate from a dedicated probe stream."""
    if spec.target.is_trace_family:
        if not force_estimate:
            try:
                return ReferenceValue(
                    spec.tag.value, spec.target, float(op.trace()), "exact"
                )
            except NotImplementedError:
                pass
        return ReferenceValue(
            spec.tag.value,
            spec.target,
            _est_reference(op, seed),
            "est-1000",
            samples=_REFERENCE_SAMPLES,
        )
    value = _norm_reference(op, spec.target)
    return ReferenceValue(spec.tag.value, spec.target, value, "exact")


def _norm_reference(op, target):
    if target is TargetKind.FROBENIUS_NORM:
        try:
            return math.sqrt(op.frobenius_sq())
        except NotImplementedError:
            return float(np.linalg.norm(op.to_dense()))
    singular = small_svd(op.to_dense())
    return float(singular[0])


def failure_curve(spec, norm_kind, dists, tau_grid, trials=100_000, seed=0):
    """Empirical failure frequencies of the two norm inequalities per tau.

    One norm sample per trial, shared across the whole tau grid; the upper
    event norm <= tau * sample fails when the sample undershoots norm / tau,
    the lower event norm >= sample / tau fails when it overshoots tau * norm.
    """
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    taus = [float(t) for t in tau_grid]
    if any(t < 1.0 for t in taus):
        raise ValueError("tau values must be at least 1")
    if norm_kind not in (TargetKind.SPECTRAL_NORM, TargetKind.FROBENIUS_NORM):
        raise ValueError(f"norm_kind must be a norm target, got {norm_kind}")
    op = generate_matrix(spec, seed)
    exact = _norm_reference(op, norm_kind)
    rows = []
    for dist in dists:
        samples = norm_samples(op, dist, seed=seed, count=trials)
        for tau in taus:
            upper_fail = float(np.count_nonzero(samples * tau < exact)) / trials
            lower_fail = float(np.count_nonzero(samples > tau * exact)) / trials
            rows.append(
                ExperimentRow(
                    matrix=spec.tag.value,
                    distribution=dist.value,
                    k=1,
                    theta=tau,
                    upper_fail=upper_fail,
                    lower_fail=lower_fail,
                    trials=trials,
                    seed=seed,
                )
            )
    return ExperimentTable(tuple(rows))


def estimator_table(spec, dists, k_list, theta_list, trials=10_000, seed=0):
    """Over/undershoot frequencies of the k-sample trace estimate.

    Trial t consumes sample indices [t * max(k), (t+1) * max(k)), so every k in
    k_list is a prefix mean of the same stream and cells are comparable across
    k.  A cell's upper failure is the fraction of trials where the estimate
    overshoots theta times the reference; lower, where it undershoots the
    reference over theta.  Note this differs from failure_curve, whose columns
    count failures of the certificates wrapped around the estimate.
    """
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    ks = sorted(set(int(k) for k in k_list))
    if not ks or ks[0] < 1:
        raise ValueError(f"k values must be positive, got {k_list}")
    thetas = [float(t) for t in theta_list]
    if any(t <= 1.0 for t in thetas):
        raise ValueError("theta values must exceed 1")
    if not spec.target.is_trace_family:
        raise ValueError("estimator tables need a trace-family target")
    op = generate_matrix(spec, seed)
    reference = reference_value(spec, op, seed)
    exact = reference.value
    k_max = ks[-1]
    rows = []
    for dist in dists:
        qf = quadratic_form_samples(op, dist, seed=seed, count=trials * k_max)
        prefix_sums = np.cumsum(qf.reshape(trials, k_max), axis=1)
        for k in ks:
            est = prefix_sums[:, k - 1] / k
            for theta in thetas:
                upper_fail = float(np.count_nonzero(est > theta * exact)) / trials
                lower_fail = float(np.count_nonzero(est < exact / theta)) / trials
                rows.append(
                    ExperimentRow(
                        matrix=spec.tag.value,
                        distribution=dist.value,
                        k=k,
                        theta=theta,
                        upper_fail=upper_fail,
                        lower_fail=lower_fail,
                        trials=trials,
                        seed=seed,
                    )
                )
    return ExperimentTable(tuple(rows))


def _parse_mm_header(line):
    parts = line.strip().split()
    if len(parts) < 5 or parts[0].lower() != "%%matrixmarket":
        raise MatrixMarketFormatError(
            "expected a %%MatrixMarket header", line=1
        )
    obj, fmt, field, symmetry = (p.lower() for p in parts[1:5])
    if obj != "matrix":
        raise MatrixMarketFormatError(f"unsupported object {obj!r}", line=1)
    if fmt != "coordinate":
        raise MatrixMarketFormatError(
            f"only coordinate format is supported, got {fmt!r}", line=1
        )
    if field not in ("real", "integer"):
        raise MatrixMarketFormatError(
            f"only real-valued matrices are supported, got field {field!r}", line=1
        )
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketFormatError(
            f"only general or symmetric matrices are supported, got {symmetry!r}",
            line=1,
        )
    return symmetry == "symmetric"


def read_matrix_market(path):
    """Parse a coordinate-format Matrix Market file into a CSR operator.

    Symmetric files store one triangle; the mirrored entries are added here.
    Malformed input raises MatrixMarketFormatError naming the offending line.
    """
    with open(path, "r", encoding="ascii", errors="replace") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise MatrixMarketFormatError("empty file", line=1)
    symmetric = _parse_mm_header(lines[0])
    shape = None
    declared_nnz = 0
    seen = 0
    rows, cols, vals = [], [], []
    for number, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if shape is None:
            if len(parts) != 3:
                raise MatrixMarketFormatError(
                    "size line must be 'rows cols nnz'", line=number
                )
            try:
                n_rows, n_cols, declared_nnz = (int(p) for p in parts)
            except ValueError:
                raise MatrixMarketFormatError(
                    "size line must hold three integers", line=number
                ) from None
            if n_rows < 1 or n_cols < 1 or declared_nnz < 0:
                raise MatrixMarketFormatError("sizes must be positive", line=number)
            shape = (n_rows, n_cols)
            continue
        if len(parts) != 3:
            raise MatrixMarketFormatError(
                "entry line must be 'row col value'", line=number
            )
        try:
            i, j = int(parts[0]), int(parts[1])
            value = float(parts[2])
        except ValueError:
            raise MatrixMarketFormatError(
                f"could not parse entry {text!r}", line=number
            ) from None
        if not (1 <= i <= shape[0] and 1 <= j <= shape[1]):
            raise MatrixMarketFormatError(
                f"index ({i}, {j}) outside {shape[0]} x {shape[1]}", line=number
            )
        seen += 1
        if seen > declared_nnz:
            raise MatrixMarketFormatError(
                f"more than the declared {declared_nnz} entries", line=number
            )
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(value)
        if symmetric and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(value)
    if shape is None:
        raise MatrixMarketFormatError("missing size line", line=len(lines))
    if seen != declared_nnz:
        raise MatrixMarketFormatError(
            f"declared {declared_nnz} entries but found {seen}", line=len(lines)
        )
    coo = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=shape)
    return SparseCsrOp(coo.tocsr())


def _format_float(value):
    return f"{value:.6g}"


def write_csv(table, path):
    """Persist a table as RFC-4180 CSV: CRLF rows, sorted keys, 6-significant-
    digit floats, written to a temp file and renamed so readers never see a
    partial file."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    descriptor, temp_path = tempfile.mkstemp(
        prefix=".csv-", dir=directory, text=False
    )
    try:
        with os.fdopen(descriptor, "w", newline="", encoding="ascii") as handle:
            writer = csv.writer(handle, lineterminator="\r\n")
            writer.writerow(
                [
                    "matrix", "distribution", "k", "theta",
                    "upper_fail", "lower_fail", "trials", "seed",
                ]
            )
            for row in table.sorted_rows():
                writer.writerow(
                    [
                        row.matrix,
                        row.distribution,
                        str(row.k),
                        _format_float(row.theta),
                        _format_float(row.upper_fail),
                        _format_float(row.lower_fail),
                        str(row.trials),
                        str(row.seed),
                    ]
                )
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
