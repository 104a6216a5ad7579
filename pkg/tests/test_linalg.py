import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, special

from portbench.linalg import (
    QuadraticProgram,
    SingularMatrixError,
    incomplete_beta,
    log_incomplete_beta,
    regularized_incomplete_beta,
    ridge_regression,
    solve_qp,
    solve_spd,
)

from conftest import random_spd


def gauss_solve(A, b):
    """Plain Gaussian elimination with partial pivoting (oracle)."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]], b[[k, p]] = A[[p, k]], b[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1 :] @ x[i + 1 :]) / A[i, i]
    return x


def test_solve_spd_identity_and_diagonal():
    x, jit = solve_spd(np.eye(3), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])
    assert jit == 0.0
    x, _ = solve_spd(np.diag([4.0, 9.0]), np.array([4.0, 9.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=0, atol=1e-15)


def test_solve_spd_matches_elimination(rng):
    S = random_spd(rng, 10)
    b = rng.normal(size=10)
    x, _ = solve_spd(S, b)
    assert np.max(np.abs(S @ x - b)) <= 1e-10 * np.max(np.abs(b))
    np.testing.assert_allclose(x, gauss_solve(S, b), rtol=1e-9)


def test_solve_spd_jitter_and_singular():
    # rank-deficient PSD: jitter rescues it and is reported
    S = np.array([[1.0, 1.0], [1.0, 1.0]])
    x, jit = solve_spd(S, np.array([1.0, 1.0]))
    assert jit > 0
    with pytest.raises(SingularMatrixError, match="condition"):
        solve_spd(np.zeros((2, 2)), np.ones(2))


def test_qp_symmetric_simplex():
    rep = solve_qp(QuadraticProgram.portfolio(np.eye(2), np.zeros(2), nonneg=True))
    assert rep.status == "optimal"
    np.testing.assert_allclose(rep.solution, [0.5, 0.5], atol=1e-12)


def test_qp_inverse_variance():
    rep = solve_qp(QuadraticProgram.portfolio(np.diag([1.0, 4.0]), np.zeros(2), nonneg=True))
    np.testing.assert_allclose(rep.solution, [0.8, 0.2], atol=1e-12)


def test_qp_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        QuadraticProgram.portfolio(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))


def simplex_grid(step=1e-3):
    k = int(round(1 / step))
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    i, j = i[keep], j[keep]
    return np.column_stack([i, j, k - i - j]) / k


def grid_min(P, q, grid):
    return float(np.min(0.5 * np.einsum("ij,jk,ik->i", grid, P, grid) + grid @ q))


def test_qp_matches_grid_on_simplex(rng):
    grid = simplex_grid()
    for _ in range(5):
        P = random_spd(rng, 3, cond=20) * 1e3
        q = rng.normal(size=3)
        rep = solve_qp(QuadraticProgram.portfolio(P, q, nonneg=True))
        w = rep.solution
        assert rep.status == "optimal"
        assert 0.5 * w @ P @ w + q @ w <= grid_min(P, q, grid) + 1e-6


def test_qp_l1_ball():
    rng = np.random.default_rng(7)
    P = random_spd(rng, 4) * 100
    anchor = np.array([0.4, 0.3, 0.2, 0.1])
    rep = solve_qp(QuadraticProgram.portfolio(P, np.zeros(4), anchor=anchor, radius=0.0))
    np.testing.assert_array_equal(rep.solution, anchor)
    rep = solve_qp(QuadraticProgram.portfolio(P, np.zeros(4), anchor=anchor, radius=0.05))
    assert np.abs(rep.solution - anchor).sum() <= 0.05 + 1e-10
    assert abs(rep.solution.sum() - 1) < 1e-10
    x = np.linalg.solve(P, np.ones(4))
    rep = solve_qp(QuadraticProgram.portfolio(P, np.zeros(4), anchor=anchor, radius=1e6))
    np.testing.assert_allclose(rep.solution, x / x.sum(), atol=1e-8)


def test_qp_infeasible():
    qp = QuadraticProgram(np.eye(2), np.zeros(2), equality=[(np.ones(2), -1.0)], lower=np.zeros(2))
    assert solve_qp(qp).status == "infeasible"


def test_qp_kkt_report(rng):
    P = random_spd(rng, 6) * 1e3
    rep = solve_qp(QuadraticProgram.portfolio(P, rng.normal(size=6), nonneg=True))
    assert rep.status == "optimal"
    assert rep.kkt_residual <= 1e-6
    assert rep.solution.min() >= -1e-10


def test_ridge_exact_and_limits(rng):
    X = rng.normal(size=(30, 1))
    a, B = ridge_regression(X, 2 * X, alpha=0.0)
    np.testing.assert_allclose(B, [[2.0]], atol=1e-12)
    np.testing.assert_allclose(a, [0.0], atol=1e-12)
    Y = rng.normal(size=(30, 2)) + 5
    a, B = ridge_regression(X, Y, alpha=1e12)
    np.testing.assert_allclose(B, 0.0, atol=1e-6)
    np.testing.assert_allclose(a, Y.mean(axis=0), atol=1e-6)


def test_ridge_normal_equations_oracle(rng):
    X = rng.normal(size=(50, 3))
    Y = rng.normal(size=(50, 2))
    a, B = ridge_regression(X, Y, alpha=1.0)
    Xc, Yc = X - X.mean(0), Y - Y.mean(0)
    B_ref = gauss_solve(Xc.T @ Xc + np.eye(3), Xc.T @ Yc[:, 0])
    np.testing.assert_allclose(B[:, 0], B_ref, atol=1e-8)
    np.testing.assert_allclose(a, Y.mean(0) - X.mean(0) @ B, atol=1e-12)
    # alpha=0 is OLS with intercept
    a0, B0 = ridge_regression(X, Y, alpha=0.0)
    Z = np.column_stack([np.ones(50), X])
    coef = np.linalg.solve(Z.T @ Z, Z.T @ Y)
    np.testing.assert_allclose(a0, coef[0], atol=1e-8)
    np.testing.assert_allclose(B0, coef[1:], atol=1e-8)


def test_ridge_errors():
    with pytest.raises(ValueError):
        ridge_regression(np.zeros((0, 2)), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        ridge_regression(np.array([[np.nan], [1.0]]), np.ones((2, 1)))


def test_incomplete_beta_exact_values():
    for z in (0.0, 0.3, 1.0):
        assert incomplete_beta(z, 1, 1) == pytest.approx(z, abs=1e-15)
    exact = Fraction(1, 8) - Fraction(2, 24) + Fraction(1, 64)  # y^2/2 - 2y^3/3 + y^4/4 at 1/2
    assert exact == Fraction(11, 192)
    assert incomplete_beta(0.5, 2, 3) == pytest.approx(float(exact), abs=1e-15)
    full = math.gamma(2.5) * math.gamma(4.5) / math.gamma(7.0)
    assert incomplete_beta(1.0, 2.5, 4.5) == pytest.approx(full, rel=1e-13)


def test_incomplete_beta_matches_quadrature(rng):
    for _ in range(50):
        a, b = rng.uniform(0.5, 50, 2)
        z = rng.uniform()
        # weight='alg' supplies y^(a-1); (1-y)^(b-1) stays in the integrand
        ref, _ = integrate.quad(lambda y: (1 - y) ** (b - 1), 0, z, weight="alg", wvar=(a - 1, 0), epsabs=1e-15, epsrel=1e-12, limit=200)
        assert incomplete_beta(z, a, b) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_incomplete_beta_large_arguments():
    for z, a, b in [(0.02, 4.5, 115.5), (0.3, 300, 250), (0.9, 0.5, 200)]:
        ref = special.betainc(a, b, z)
        assert regularized_incomplete_beta(z, a, b) == pytest.approx(ref, rel=1e-12, abs=1e-300)
        assert log_incomplete_beta(z, a, b) == pytest.approx(math.log(ref) + special.betaln(a, b), rel=1e-12)


def test_incomplete_beta_monotone_and_domain():
    zs = np.linspace(0, 1, 41)
    vals = [incomplete_beta(z, 3.5, 7.0) for z in zs]
    assert vals[0] == 0.0
    assert all(np.diff(vals) >= 0)
    for bad in [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2)]:
        with pytest.raises(ValueError):
            incomplete_beta(*bad)
