import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kronfac.factors import FactorSet, all_moments, exact_record
from kronfac.kron import (DampingWarning, SingularSystemError, as_dense, blockdiag_apply,
                          blockdiag_build, compute_pi, damp_factors, damped_khatri_rao,
                          dense_blockdiag, exact_tikhonov_apply, exact_tikhonov_build, kron_mv,
                          spd_inverse, stein_solve, stein_solve_scaled, tridiag_apply,
                          tridiag_build)

from conftest import random_problem, random_spd, rel_err


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5),
       st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_kron_mv(p, q, r, s, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((p, q)), rng.standard_normal((r, s))
    v = rng.standard_normal(q * s)
    np.testing.assert_allclose(kron_mv(A, B, v), np.kron(A, B) @ v, atol=1e-12)


def test_kron_mv_shape_check():
    with pytest.raises(ValueError):
        kron_mv(np.eye(2), np.eye(2), np.zeros(3))


def test_compute_pi():
    A, G = 4 * np.eye(3), np.eye(2)
    assert compute_pi(A, G) == pytest.approx(2.0)
    with pytest.warns(DampingWarning):
        assert compute_pi(np.zeros((2, 2)), G) == 1.0


def test_damping_adds_balanced_terms():
    fs = FactorSet([9 * np.eye(2)], [np.eye(3)])
    d = damp_factors(fs, 0.5)
    assert d.pi == [pytest.approx(3.0)]
    np.testing.assert_allclose(d.A[0], 10.5 * np.eye(2))
    np.testing.assert_allclose(d.G[0], (1 + 0.5 / 3) * np.eye(3))
    with pytest.raises(ValueError):
        damp_factors(fs, -1.0)


def test_spd_inverse(rng):
    M = random_spd(rng, 6, 1e4)
    np.testing.assert_allclose(spd_inverse(M) @ M, np.eye(6), atol=1e-9)


def random_factors(rng, dims, mode="diag"):
    n = len(dims) - 1
    A = [random_spd(rng, dims[i] + 1) for i in range(n)]
    G = [random_spd(rng, dims[i + 1]) for i in range(n)]
    fs = FactorSet(A, G, mode=mode)
    if mode == "tridiag":
        fs.A_off = [0.3 * rng.standard_normal((dims[i] + 1, dims[i + 1] + 1)) for i in range(n - 1)]
        fs.G_off = [0.3 * rng.standard_normal((dims[i + 1], dims[i + 2])) for i in range(n - 1)]
    return fs


@pytest.mark.parametrize("seed", range(6))
def test_blockdiag_matches_dense_inverse(seed):
    rng = np.random.default_rng(seed)
    dims = list(rng.integers(1, 6, size=rng.integers(2, 5)))
    fs = random_factors(rng, dims)
    gamma = float(rng.uniform(0.01, 1.0))
    cache = blockdiag_build(fs, gamma)
    d = damp_factors(fs, gamma)
    dense = dense_blockdiag(d.A, d.G)
    v = rng.standard_normal(dense.shape[0])
    assert rel_err(blockdiag_apply(cache, v), np.linalg.solve(dense, v)) < 1e-10


@pytest.mark.parametrize("sign", ["+", "-"])
@pytest.mark.parametrize("seed", range(5))
def test_stein_matches_dense(sign, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.integers(1, 6, size=2)
    A, B = random_spd(rng, p), random_spd(rng, q)
    C, D = 0.3 * random_spd(rng, p, 3), 0.3 * random_spd(rng, q, 3)
    s = 1 if sign == "+" else -1
    M = np.kron(A, B) + s * np.kron(C, D)
    v = rng.standard_normal(p * q)
    assert rel_err(stein_solve(A, B, C, D, sign, v), np.linalg.solve(M, v)) < 1e-10
    xi = 2.0
    M = xi * np.eye(p * q) + s * np.kron(C, D)
    assert rel_err(stein_solve_scaled(xi, C, D, sign, v), np.linalg.solve(M, v)) < 1e-10


def test_stein_singular_raises():
    I = np.eye(2)
    with pytest.raises(SingularSystemError):
        stein_solve(I, I, I, I, "-", np.ones(4))
    with pytest.raises(SingularSystemError):
        stein_solve(-I, I, I, I, "+", np.ones(4))
    with pytest.raises(ValueError):
        stein_solve(I, I, I, I, "*", np.ones(4))


def test_exact_tikhonov(rng):
    fs = random_factors(rng, [3, 2, 4])
    cache = exact_tikhonov_build(fs, 0.7)
    dense = dense_blockdiag(fs.A, fs.G)
    dense += 0.7 * np.eye(dense.shape[0])
    v = rng.standard_normal(dense.shape[0])
    assert rel_err(exact_tikhonov_apply(cache, v), np.linalg.solve(dense, v)) < 1e-10


def tridiag_blocks_of_inverse(cache, shapes):
    n = sum(r * c for r, c in shapes)
    return np.linalg.inv(as_dense(lambda v: tridiag_apply(cache, v), n))


@pytest.mark.parametrize("seed", range(5))
def test_tridiag_reproduces_tridiagonal_blocks(seed):
    # the defining property: F_hat agrees with damped F_tilde on the
    # diagonal and first off-diagonal blocks
    net, theta, X, _ = random_problem(seed + 10, "softmax_cross_entropy", m=40, min_layers=2)
    A_all, G_all = all_moments(exact_record(net, theta, X))
    L = len(A_all)
    fs = FactorSet([A_all[i][i] for i in range(L)], [G_all[i][i] for i in range(L)],
                   [A_all[i][i + 1] for i in range(L - 1)], [G_all[i][i + 1] for i in range(L - 1)],
                   mode="tridiag")
    gamma = 0.3
    F_hat = tridiag_blocks_of_inverse(tridiag_build(fs, gamma), net.arch.shapes)
    F_t = damped_khatri_rao(A_all, G_all, gamma)
    edges = np.cumsum([0] + [r * c for r, c in net.arch.shapes])
    for i in range(L):
        for j in range(max(0, i - 1), min(L, i + 2)):
            bi, bj = slice(edges[i], edges[i + 1]), slice(edges[j], edges[j + 1])
            assert rel_err(F_hat[bi, bj], F_t[bi, bj]) < 1e-8


def test_tridiag_single_layer_equals_blockdiag(rng):
    fs = random_factors(rng, [3, 4], "tridiag")
    v = rng.standard_normal(16)
    np.testing.assert_allclose(tridiag_apply(tridiag_build(fs, 0.2), v),
                               blockdiag_apply(blockdiag_build(fs, 0.2), v), rtol=1e-10)


def test_tridiag_needs_cross_factors(rng):
    with pytest.raises(ValueError):
        tridiag_build(random_factors(rng, [2, 2, 2]), 0.1)


def test_tridiag_inverse_is_symmetric_pd(rng):
    fs = random_factors(rng, [2, 3, 3, 2], "tridiag")
    n = sum(r * c for r, c in fs.shapes)
    M = as_dense(lambda v: tridiag_apply(tridiag_build(fs, 0.5), v), n)
    np.testing.assert_allclose(M, M.T, atol=1e-10)
    assert np.linalg.eigvalsh(0.5 * (M + M.T)).min() > 0
