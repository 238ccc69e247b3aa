"""Linear algebra kernels against independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kronprobe.linalg import (
    expm,
    lu_factor,
    lu_solve,
    mat_vec,
    reshape_mat_to_vec,
    reshape_vec_to_mat,
    small_svd,
    spectral_norm,
)


def _taylor_expm(m, terms=30):
    # Independent oracle: plain Taylor series, adequate for small norms.
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for j in range(1, terms + 1):
        term = term @ m / j
        out = out + term
    return out


class TestMatVec:
    def test_identity_and_zero(self):
        assert np.array_equal(mat_vec(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
        assert np.array_equal(mat_vec(np.zeros((2, 2)), [5.0, 7.0]), [0.0, 0.0])

    def test_hand_value(self):
        assert np.array_equal(mat_vec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])

    def test_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            mat_vec(np.eye(3), [1.0, 2.0])


class TestLu:
    def test_identity_and_diagonal(self):
        f = lu_factor(np.eye(2))
        assert np.allclose(lu_solve(f, [4.0, 5.0]), [4.0, 5.0])
        f = lu_factor(np.diag([2.0, 4.0]))
        assert np.allclose(lu_solve(f, [2.0, 4.0]), [1.0, 1.0])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((8, 8)) + 8 * np.eye(8)
        b = rng.standard_normal(8)
        y = lu_solve(lu_factor(a), b)
        assert np.linalg.norm(a @ y - b) <= 1e-10 * np.linalg.norm(b)

    def test_transpose_solve(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((6, 6)) + 6 * np.eye(6)
        b = rng.standard_normal(6)
        y = lu_solve(lu_factor(a), b, transpose=True)
        assert np.allclose(a.T @ y, b)

    def test_singular_rejected(self):
        with pytest.raises(np.linalg.LinAlgError, match="singular"):
            lu_factor(np.ones((3, 3)))

    def test_matrix_rhs(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
        b = rng.standard_normal((5, 3))
        assert np.allclose(a @ lu_solve(lu_factor(a), b), b)


class TestExpm:
    def test_zero_and_diagonal(self):
        assert np.allclose(expm(np.zeros((4, 4))), np.eye(4), atol=1e-14)
        got = expm(np.diag([1.0, 2.0]))
        assert np.allclose(got, np.diag([np.e, np.e ** 2]), rtol=1e-13)

    def test_taylor_oracle_small_norm(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((6, 6))
        m *= 1.0 / np.linalg.norm(m, 2)
        got = expm(m)
        ref = _taylor_expm(m)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-10

    def test_large_norm_squaring_path(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((5, 5)) * 4.0
        got = expm(m)
        # Semigroup oracle through the half matrix.
        half = expm(m / 2.0)
        assert np.linalg.norm(got - half @ half) / np.linalg.norm(got) < 1e-9

    def test_semigroup_commuting(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((4, 4))
        m *= 1.0 / np.linalg.norm(m, 2)
        lhs = expm(m) @ expm(m)
        rhs = expm(2.0 * m)
        assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-8

    def test_non_square_rejected(self):
        with pytest.raises(ValueError, match="square"):
            expm(np.zeros((2, 3)))


class TestSmallSvd:
    def test_scaled_identity(self):
        np.testing.assert_allclose(
            small_svd(np.eye(2) / np.sqrt(2.0)), [2 ** -0.5, 2 ** -0.5]
        )

    def test_rank_one(self):
        q = np.zeros((4, 4))
        q[0, 0] = 1.0
        np.testing.assert_allclose(small_svd(q), [1.0, 0.0, 0.0, 0.0], atol=1e-15)

    def test_frobenius_identity(self):
        rng = np.random.default_rng(6)
        q = rng.standard_normal((5, 3))
        s = small_svd(q)
        assert np.all(np.diff(s) <= 0)
        assert abs((s ** 2).sum() - (q ** 2).sum()) <= 1e-10 * (q ** 2).sum()

    def test_guard(self):
        with pytest.raises(ValueError, match="512"):
            small_svd(np.zeros((600, 600)))


class TestSpectralNorm:
    def test_diagonal(self):
        est = spectral_norm(np.diag([1.0, 2.0, 3.0]))
        assert est.converged and abs(est.value - 3.0) < 1e-8

    def test_zero(self):
        est = spectral_norm(np.zeros((4, 4)))
        assert est.converged and est.value == 0.0

    def test_svd_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((10, 10))
        est = spectral_norm(a, tol=1e-12, max_iters=5000)
        assert est.converged
        assert abs(est.value - small_svd(a)[0]) < 1e-6 * small_svd(a)[0]

    def test_below_frobenius_and_rank_one_equality(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((7, 7))
        est = spectral_norm(a, tol=1e-12, max_iters=5000)
        assert est.value <= np.linalg.norm(a) * (1 + 1e-12)
        u, v = rng.standard_normal(7), rng.standard_normal(5)
        r1 = np.outer(u, v)
        est1 = spectral_norm(r1, tol=1e-12, max_iters=5000)
        assert abs(est1.value - np.linalg.norm(u) * np.linalg.norm(v)) < 1e-8

    def test_nonconvergence_flagged(self):
        est = spectral_norm(np.diag([1.0, 0.999]), tol=1e-15, max_iters=2)
        assert not est.converged
        assert 0.9 < est.value <= 1.0 + 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((6, 6))
        e1 = spectral_norm(a, seed=3)
        e2 = spectral_norm(a, seed=3)
        assert e1.value == e2.value and e1.seed == 3


class TestReshape:
    def test_kron_identity_example(self):
        xt, xh = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        m = reshape_vec_to_mat(np.kron(xt, xh), 2, 2)
        assert np.array_equal(m, np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert np.array_equal(m, np.outer(xh, xt))

    @given(
        nh=st.integers(min_value=1, max_value=6),
        nt=st.integers(min_value=1, max_value=6),
        seed=st.integers(min_value=0, max_value=1000),
    )
    @settings(max_examples=40, deadline=None)
    def test_vec_kron_compatibility(self, nh, nt, seed):
        rng = np.random.default_rng(seed)
        xt, xh = rng.standard_normal(nt), rng.standard_normal(nh)
        m = reshape_vec_to_mat(np.kron(xt, xh), nh, nt)
        assert np.array_equal(m, np.outer(xh, xt))

    def test_round_trip_and_norm(self):
        rng = np.random.default_rng(10)
        v = rng.standard_normal(12)
        m = reshape_vec_to_mat(v, 3, 4)
        assert np.array_equal(reshape_mat_to_vec(m), v)
        assert abs(np.linalg.norm(m) - np.linalg.norm(v)) < 1e-12

    def test_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            reshape_vec_to_mat(np.zeros(5), 2, 3)

    def test_norm_multiplicativity(self):
        rng = np.random.default_rng(11)
        xt, xh = rng.standard_normal(4), rng.standard_normal(5)
        x = np.kron(xt, xh)
        lhs = np.linalg.norm(x)
        rhs = np.linalg.norm(xt) * np.linalg.norm(xh)
        assert abs(lhs - rhs) <= 1e-12 * rhs
