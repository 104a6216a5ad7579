"""Estimation-window statistics consumed by the strategies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import SPDFactor, log_incomplete_beta, ridge_regression

PSI_FLOOR = 1e-12


class WindowTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class MomentEstimates:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    M: int
    window_end: object = None

    @property
    def N(self) -> int:
        return self.mu_hat.shape[0]

    @cached_property
    def factor(self) -> SPDFactor:
        return SPDFactor(self.sigma_hat)

    def inv(self, b) -> np.ndarray:
        """Σ̂⁻¹ b through the cached factorization."""
        return self.factor.solve(b)

    @cached_property
    def inv_ones(self) -> np.ndarray:
        return self.inv(np.ones(self.N))

    @cached_property
    def inv_mu(self) -> np.ndarray:
        return self.inv(self.mu_hat)


def sample_moments(window, window_end=None) -> MomentEstimates:
    """Column means and the unbiased (M-1 divisor) sample covariance."""
    X = np.asarray(window, dtype=float)
    if X.ndim != 2:
        raise ValueError("window must be an M x N matrix")
    M = X.shape[0]
    if M < 2:
        raise WindowTooShortError("need at least 2 observations")
    if not np.all(np.isfinite(X)):
        raise ValueError("window contains non-finite returns")
    mu = X.mean(axis=0)
    D = X - mu
    S = D.T @ D / (M - 1)
    S = 0.5 * (S + S.T)
    return MomentEstimates(mu, S, M, window_end)


def min_variance_weights(est: MomentEstimates) -> np.ndarray:
    x = est.inv_ones
    return x / x.sum()


def bayes_stein_mean(est: MomentEstimates, w_min: np.ndarray | None = None):
    """Shrink the sample mean toward the minimum-variance portfolio's mean.

    Returns ``(mu_bs, phi)`` with phi the shrinkage intensity in [0, 1].
    """
    if w_min is None:
        w_min = min_variance_weights(est)
    w_min = np.asarray(w_min, dtype=float)
    if abs(w_min.sum() - 1.0) > 1e-8:
        raise ValueError("w_min must sum to one")
    N, M = est.N, est.M
    mu_min = float(est.mu_hat @ w_min)
    d = est.mu_hat - mu_min
    dist = float(d @ est.inv(d))
    phi = (N + 2) / ((N + 2) + M * dist)
    phi = min(max(phi, 0.0), 1.0)
    return (1.0 - phi) * est.mu_hat + phi * mu_min, phi


@dataclass(frozen=True)
class KanZhouStats:
    psi2: float
    psi2_a: float
    theta2: float
    theta2_a: float
    mu_g: float
    c_kz: float
    h1: float
    xi: float
    floored: tuple[str, ...] = ()


def _adjusted_square(stat2: float, M: int, k: int, coef: int, a: float, b: float) -> float:
    """Unbiased-type adjustment shared by ψ_a² and θ_a².

    ((M-coef)·s - k)/M + 2 s^a (1+s)^(-(M-2)/2) / (M · B_{s/(1+s)}(a, b))
    """
    head = ((M - coef) * stat2 - k) / M
    if stat2 <= 0.0 or a <= 0.0:
        # Limit as s -> 0: the ratio s^a / B_s(a, b) tends to a.
        return head + (2.0 * a / M if a > 0 else 0.0)
    z = stat2 / (1.0 + stat2)
    log_tail = (
        math.log(2.0)
        + a * math.log(stat2)
        - 0.5 * (M - 2) * math.log1p(stat2)
        - math.log(M)
        - log_incomplete_beta(z, a, b)
    )
    return head + math.exp(log_tail)


def kan_zhou_stats(est: MomentEstimates) -> KanZhouStats:
    N, M = est.N, est.M
    if M <= N + 4:
        raise WindowTooShortError(f"Kan-Zhou statistics need M > N + 4 (M={M}, N={N})")
    inv1 = est.inv_ones
    mu = est.mu_hat
    mu_g = float(mu @ inv1 / inv1.sum())
    d = mu - mu_g
    psi2 = max(float(d @ est.inv(d)), 0.0)
    theta2 = max(float(mu @ est.inv_mu), 0.0)
    if N == 1:
        psi2 = 0.0
    psi2_a = _adjusted_square(psi2, M, N - 1, N + 1, (N - 1) / 2, (M - N + 1) / 2)
    theta2_a = _adjusted_square(theta2, M, N, N + 2, N / 2, (M - N) / 2)
    floored = []
    if psi2_a < PSI_FLOOR:
        psi2_a = PSI_FLOOR
        floored.append("psi2_a")
    if theta2_a < PSI_FLOOR:
        theta2_a = PSI_FLOOR
        floored.append("theta2_a")
    c_kz = (M - N - 1) * (M - N - 4) / (M * (M - 2))
    h1 = (M - 2) * (M - N - 2) / ((M - N - 1) * (M - N - 4))
    xi = N / (M * psi2_a + N)
    return KanZhouStats(psi2, psi2_a, theta2, theta2_a, mu_g, c_kz, h1, xi, tuple(floored))


def mv_min_expected_return(est: MomentEstimates, kz: KanZhouStats) -> np.ndarray:
    return (1.0 - kz.xi) * est.mu_hat + kz.xi * kz.mu_g


def var1_forecast(window, alpha: float = 1.0) -> np.ndarray:
    """One-step forecast from a ridge-estimated VAR(1) fitted on the window."""
    X = np.asarray(window, dtype=float)
    if X.shape[0] < 3:
        raise WindowTooShortError("VAR(1) forecast needs M >= 3")
    A, B = ridge_regression(X[:-1], X[1:], alpha)
    return A + X[-1] @ B


@dataclass(frozen=True)
class FactorLoadings:
    betas: np.ndarray  # N x K
    beta_bar_plus: np.ndarray  # N


def factor_betas(asset_window, factor_window) -> FactorLoadings:
    """Per-asset OLS of returns on factor returns (with intercept)."""
    Y = np.asarray(asset_window, dtype=float)
    F = np.asarray(factor_window, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if Y.shape[0] != F.shape[0]:
        raise ValueError("asset and factor windows differ in length")
    if F.shape[1] < 1:
        raise ValueError("need at least one factor")
    X = np.column_stack([np.ones(F.shape[0]), F])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("factor design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    betas = coef[1:].T
    return FactorLoadings(betas, np.maximum(betas.mean(axis=1), 0.0))
