"""Portfolio weight rules.

Every rule maps one estimation window to relative weights over the active
risky assets (weights sum to one). Identifiers follow the usual
abbreviations: ew, mv, bs, mv-var, min, rrt, the robust ac-* family, the
Kan-Zhou / Tu-Zhou combination rules, short-sale constrained variants and
the norm-constrained min-norm / bs-norm.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .linalg import QuadraticProgram, solve_qp
from .moments import (
    FactorLoadings,
    KanZhouStats,
    MomentEstimates,
    bayes_stein_mean,
    factor_betas,
    kan_zhou_stats,
    min_variance_weights,
    mv_min_expected_return,
    sample_moments,
    var1_forecast,
)

log = logging.getLogger(__name__)

NORMALIZER_EPS = 1e-10
DELTA_PRESETS = (0.025, 0.05, 0.10)
OMEGA_PRESETS = (1, 2)
TAU_PRESET = 4.0


class StrategyError(RuntimeError):
    """A rule cannot produce weights for this window (degenerate inputs,
    infeasible program). The backtester carries the previous weights."""


@dataclass(frozen=True)
class StrategyParams:
    gamma: float = 1.0
    delta: float = 0.05
    omega: int = 2
    tau: float = TAU_PRESET
    inner: str | None = None
    constrained: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.omega not in OMEGA_PRESETS:
            raise ValueError("omega must be 1 or 2")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")


@dataclass
class WeightVector:
    weights: np.ndarray
    strategy_id: str
    params: StrategyParams = field(default_factory=StrategyParams)
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)):
            raise StrategyError(f"{self.strategy_id}: non-finite weights")
        self.weights = w


def _jitter(est: MomentEstimates) -> dict[str, float]:
    return {"jitter": est.factor.jitter}


def _normalize_abs(x: np.ndarray, sid: str) -> tuple[np.ndarray, float]:
    s = float(x.sum())
    if abs(s) < NORMALIZER_EPS:
        raise StrategyError(f"{sid}: near-zero normalizer 1'x = {s:.3g}")
    return x / abs(s), math.copysign(1.0, s)


# ---------------------------------------------------------------------------
# Closed-form rules
# ---------------------------------------------------------------------------

def weights_ew(N: int) -> WeightVector:
    if N < 1:
        raise ValueError("N must be >= 1")
    return WeightVector(np.full(N, 1.0 / N), "ew")


def weights_mv(est: MomentEstimates, mu=None, sid: str = "mv") -> WeightVector:
    """Tangency weights Σ̂⁻¹μ / 1'Σ̂⁻¹μ; ``mu`` defaults to the sample mean."""
    x = est.inv_mu if mu is None else est.inv(np.asarray(mu, dtype=float))
    s = float(x.sum())
    if abs(s) < NORMALIZER_EPS:
        raise StrategyError(f"{sid}: near-zero normalizer 1'Σ⁻¹μ = {s:.3g}")
    return WeightVector(x / s, sid, diagnostics={"sign": math.copysign(1.0, s), **_jitter(est)})


def weights_min(est: MomentEstimates) -> WeightVector:
    return WeightVector(min_variance_weights(est), "min", diagnostics=_jitter(est))


def weights_bs(est: MomentEstimates) -> WeightVector:
    mu_bs, phi = bayes_stein_mean(est, min_variance_weights(est))
    wv = weights_mv(est, mu_bs, sid="bs")
    wv.diagnostics["phi"] = phi
    return wv


def weights_mv_insample(full_panel_moments: MomentEstimates) -> WeightVector:
    wv = weights_mv(full_panel_moments)
    wv.strategy_id = "mv-insample"
    return wv


def budget_markowitz(est: MomentEstimates, mu, kappa: float) -> np.ndarray:
    """argmin -w'μ + (κ/2) w'Σ̂w subject to 1'w = 1 (closed form)."""
    w_min = min_variance_weights(est)
    x = est.inv(np.asarray(mu, dtype=float))
    return w_min + (x - x.sum() * w_min) / kappa


def weights_rrt(est: MomentEstimates, loadings: FactorLoadings, omega: int = 2) -> WeightVector:
    if not np.any(loadings.beta_bar_plus > 0):
        raise StrategyError("rrt: no asset with positive average beta")
    v = est.inv(loadings.beta_bar_plus)
    clamped = int(np.sum(v < 0))
    if clamped:
        log.debug("rrt: clamped %d negative timing scores to zero", clamped)
    v = np.maximum(v, 0.0)
    vp = v**omega
    s = vp.sum()
    if s <= 0:
        raise StrategyError("rrt: all timing scores are zero after clamping")
    return WeightVector(
        vp / s,
        "rrt",
        StrategyParams(omega=omega),
        {"clamped": float(clamped), **_jitter(est)},
    )


# ---------------------------------------------------------------------------
# Kan-Zhou / Tu-Zhou combination rules
# ---------------------------------------------------------------------------

def _mv_min_x(est: MomentEstimates, kz: KanZhouStats, gamma: float) -> np.ndarray:
    NM = est.N / est.M
    a = kz.psi2_a / (kz.psi2_a + NM)
    b = NM / (kz.psi2_a + NM)
    return (kz.c_kz / gamma) * (a * est.inv_mu + b * kz.mu_g * est.inv_ones)


def weights_mv_min(est: MomentEstimates, kz: KanZhouStats, gamma: float = 1.0) -> WeightVector:
    w, sign = _normalize_abs(_mv_min_x(est, kz, gamma), "mv-min")
    return WeightVector(
        w, "mv-min", StrategyParams(gamma=gamma),
        {"psi2_a": kz.psi2_a, "sign": sign, **_jitter(est)},
    )


def weights_ew_min(est: MomentEstimates, kz: KanZhouStats) -> WeightVector:
    N = est.N
    NM = N / est.M
    a = kz.psi2_a / (kz.psi2_a + NM)
    b = NM / (kz.psi2_a + NM)
    x = kz.c_kz * (a * np.full(N, 1.0 / N) + b * kz.mu_g * est.inv_ones)
    w, sign = _normalize_abs(x, "ew-min")
    return WeightVector(w, "ew-min", diagnostics={"psi2_a": kz.psi2_a, "sign": sign, **_jitter(est)})


def ew_mv_lambda(est: MomentEstimates, kz: KanZhouStats, gamma: float) -> float:
    N, M = est.N, est.M
    w_ew = np.full(N, 1.0 / N)
    pi1 = (
        w_ew @ est.sigma_hat @ w_ew
        - (2.0 / gamma) * (w_ew @ est.mu_hat)
        + kz.theta2_a / gamma**2
    )
    pi2 = (kz.h1 - 1.0) * kz.theta2_a / gamma**2 + kz.h1 * N / (gamma**2 * M)
    if pi1 + pi2 <= 0:
        raise StrategyError(f"ew-mv: degenerate combination (pi1 + pi2 = {pi1 + pi2:.3g})")
    return float(pi1 / (pi1 + pi2))


def weights_ew_mv(
    est: MomentEstimates, kz: KanZhouStats, gamma: float = 1.0, lam: float | None = None
) -> WeightVector:
    """Mixture of 1/N and the sample mean-variance rule. ``lam`` pins λ."""
    raw = ew_mv_lambda(est, kz, gamma) if lam is None else float(lam)
    lam_c = min(max(raw, 0.0), 1.0)
    N = est.N
    x = (1.0 - lam_c) * np.full(N, 1.0 / N) + lam_c * est.inv_mu / gamma
    w, sign = _normalize_abs(x, "ew-mv")
    return WeightVector(
        w, "ew-mv", StrategyParams(gamma=gamma),
        {"lambda": lam_c, "lambda_raw": raw, "sign": sign, **_jitter(est)},
    )


def ew_mv_min_lambda(est: MomentEstimates, kz: KanZhouStats, gamma: float) -> float:
    N, M = est.N, est.M
    w_ew = np.full(N, 1.0 / N)
    mu = est.mu_hat
    g = gamma
    ew_mu = float(w_ew @ mu)
    pi1 = w_ew @ est.sigma_hat @ w_ew - (2.0 / g) * ew_mu + kz.theta2_a / g**2
    pa = kz.psi2_a
    pi13 = (
        kz.theta2_a / g**2
        - ew_mu / g
        + (1.0 / (g * kz.h1))
        * (
            (pa * ew_mu + (1.0 - pa) * kz.mu_g * w_ew.sum())
            - (1.0 / g) * (pa * float(mu @ est.inv_mu) + (1.0 - pa) * kz.mu_g * float(mu @ est.inv_ones))
        )
    )
    pi3 = kz.theta2_a / g**2 - (kz.theta2_a - (N / M) * pa) / (g**2 * kz.h1)
    den = pi1 - 2.0 * pi13 + pi3
    if abs(den) < NORMALIZER_EPS * max(1.0, abs(pi1)):
        raise StrategyError(f"ew-mv-min: zero denominator in mixing weight ({den:.3g})")
    return float((pi1 - pi13) / den)


def weights_ew_mv_min(
    est: MomentEstimates, kz: KanZhouStats, gamma: float = 1.0, lam: float | None = None
) -> WeightVector:
    raw = ew_mv_min_lambda(est, kz, gamma) if lam is None else float(lam)
    lam_c = min(max(raw, 0.0), 1.0)
    N = est.N
    x = (1.0 - lam_c) * np.full(N, 1.0 / N) + lam_c * _mv_min_x(est, kz, gamma)
    w, sign = _normalize_abs(x, "ew-mv-min")
    return WeightVector(
        w, "ew-mv-min", StrategyParams(gamma=gamma),
        {"lambda": lam_c, "lambda_raw": raw, "psi2_a": kz.psi2_a, "sign": sign, **_jitter(est)},
    )


# ---------------------------------------------------------------------------
# QP-based rules
# ---------------------------------------------------------------------------

def _solve(qp: QuadraticProgram, sid: str, warm=None):
    rep = solve_qp(qp, warm_start=warm)
    if rep.status == "infeasible":
        raise StrategyError(f"{sid}: infeasible constraint set")
    if rep.status != "optimal":
        raise StrategyError(f"{sid}: QP stopped with status {rep.status}")
    return rep


def min_c_weights(est: MomentEstimates) -> np.ndarray:
    """Short-sale constrained minimum-variance weights (the L1 anchor)."""
    N = est.N
    rep = _solve(QuadraticProgram.portfolio(est.sigma_hat, np.zeros(N), nonneg=True), "min-c")
    return _clean_simplex(rep.solution)


def _clean_simplex(w: np.ndarray) -> np.ndarray:
    # Active-set iterates satisfy the bounds to ~1e-12; drop the residue.
    w = np.maximum(w, 0.0)
    return w / w.sum()


def weights_mv_var(window, est: MomentEstimates, params: StrategyParams = StrategyParams()) -> WeightVector:
    """Norm-constrained conditional mean-variance rule with a ridge VAR(1)
    forecast of next month's returns."""
    forecast = var1_forecast(window, alpha=1.0)
    anchor = min_c_weights(est)
    qp = QuadraticProgram.portfolio(
        2.0 * est.sigma_hat, -forecast / params.gamma, anchor=anchor, radius=params.delta
    )
    rep = _solve(qp, "mv-var")
    w = rep.solution / rep.solution.sum()
    return WeightVector(w, "mv-var", params, {"l1_distance": float(np.abs(w - anchor).sum()), **_jitter(est)})


def _markowitz_qp(est, mu, kappa, nonneg, warm=None, sid="qp"):
    # Objective scaled by 1/κ: ½ w'Σ̂w - (1/κ) μ'w.
    qp = QuadraticProgram.portfolio(est.sigma_hat, -np.asarray(mu) / kappa, nonneg=nonneg)
    return _solve(qp, sid, warm)


def _inner_mean(est: MomentEstimates, inner: str) -> tuple[np.ndarray, dict]:
    if inner == "mv":
        return est.mu_hat, {}
    if inner == "bs":
        mu, phi = bayes_stein_mean(est, min_variance_weights(est))
        return mu, {"phi": phi}
    if inner == "mv-min":
        kz = kan_zhou_stats(est)
        return mv_min_expected_return(est, kz), {"xi": kz.xi}
    raise ValueError(f"unknown inner rule {inner!r}")


def weights_robust(
    est: MomentEstimates, inner: str, params: StrategyParams = StrategyParams(), nonneg: bool = False
) -> WeightVector:
    """Robust mean-variance weights under model-uncertainty aversion τ.

    For fixed q the optimum is a budget-constrained Markowitz portfolio with
    effective risk aversion κ(q) = γ/q + τ/q²; q is then pinned down by
    bisection on the consistency condition q = 1 - γτ w'Σ̂w.
    """
    sid = f"ac-{inner}" + ("-c" if nonneg else "")
    mu, diag = _inner_mean(est, inner)
    g, tau = params.gamma, params.tau
    S = est.sigma_hat
    state = {"warm": None}

    def markowitz(kappa):
        if not nonneg:
            return budget_markowitz(est, mu, kappa)
        rep = _markowitz_qp(est, mu, kappa, True, state["warm"], sid)
        state["warm"] = rep.active_set
        return _clean_simplex(rep.solution)

    diag.update(_jitter(est))
    if tau == 0:
        w = markowitz(g)
        return WeightVector(w, sid, params, {"q": 1.0, **diag})

    w_floor = min_c_weights(est) if nonneg else min_variance_weights(est)
    s_min = float(w_floor @ S @ w_floor)
    if g * tau * s_min >= 1.0:
        raise StrategyError(f"{sid}: empty feasible region (γτ·min variance = {g * tau * s_min:.3g})")

    def residual(q):
        w = markowitz(g / q + tau / q**2)
        return q - 1.0 + g * tau * float(w @ S @ w), w

    lo, hi = 1e-12, 1.0
    r_lo, _ = residual(lo)
    r_hi, w_hi = residual(hi)
    if r_lo < 0.0 <= r_hi:
        q, w, r = hi, w_hi, r_hi
        it = 0
        while abs(r) > 1e-10 and it < 200 and hi - lo > 1e-16:
            it += 1
            mid = 0.5 * (lo + hi)
            r_mid, w_mid = residual(mid)
            if r_mid < 0:
                lo = mid
            else:
                hi = mid
            q, w, r = mid, w_mid, r_mid
        diag.update(q=q, q_residual=r, bisection_iters=float(it))
        return WeightVector(w, sid, params, diag)

    w = _robust_direct(est, mu, params, nonneg, w_floor)
    q = 1.0 - g * tau * float(w @ S @ w)
    log.debug("%s: no consistent q bracket; used direct minimization", sid)
    diag.update(q=q, fallback=1.0)
    return WeightVector(w, sid, params, diag)


def _robust_direct(est, mu, params, nonneg, w0):
    g, tau = params.gamma, params.tau
    S = est.sigma_hat

    def objective(w):
        s = w @ S @ w
        q = 1.0 - g * tau * s
        if q <= 1e-12:
            return 1e6 * (1.0 + (1e-12 - q))  # penalty outside the region q > 0
        return -w @ mu - math.log(q) / (2 * tau) + tau * s / (2 * q)

    res = minimize(
        objective,
        w0,
        method="SLSQP",
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0}],
        bounds=[(0.0, None)] * est.N if nonneg else None,
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    if not res.success:
        raise StrategyError(f"robust fallback failed: {res.message}")
    return res.x / res.x.sum()


def weights_constrained(base: str, est: MomentEstimates, params: StrategyParams = StrategyParams()) -> WeightVector:
    """Short-sale constrained version of ``base`` (w ≥ 0, 1'w = 1)."""
    N = est.N
    if base == "min":
        return WeightVector(min_c_weights(est), "min-c", params, _jitter(est))
    if base in ("mv", "bs"):
        diag = _jitter(est)
        mu = est.mu_hat
        if base == "bs":
            mu, phi = bayes_stein_mean(est, min_variance_weights(est))
            diag["phi"] = phi
        rep = _markowitz_qp(est, mu, params.gamma, True, sid=f"{base}-c")
        return WeightVector(_clean_simplex(rep.solution), f"{base}-c", params, diag)
    if base.startswith("ac-"):
        return weights_robust(est, base[3:], params, nonneg=True)
    raise ValueError(f"no constrained variant for {base!r}")


def weights_norm_constrained(base: str, est: MomentEstimates, params: StrategyParams = StrategyParams()) -> WeightVector:
    """``base`` objective plus ‖w - w_min-c‖₁ ≤ δ around the constrained
    minimum-variance anchor."""
    N = est.N
    anchor = min_c_weights(est)
    diag = _jitter(est)
    if base == "min":
        qp = QuadraticProgram.portfolio(est.sigma_hat, np.zeros(N), anchor=anchor, radius=params.delta)
    elif base == "bs":
        mu, phi = bayes_stein_mean(est, min_variance_weights(est))
        diag["phi"] = phi
        qp = QuadraticProgram.portfolio(est.sigma_hat, -mu / params.gamma, anchor=anchor, radius=params.delta)
    else:
        raise ValueError(f"no norm-constrained variant for {base!r}")
    sid = f"{base}-norm"
    rep = _solve(qp, sid)
    w = rep.solution / rep.solution.sum()
    diag["l1_distance"] = float(np.abs(w - anchor).sum())
    return WeightVector(w, sid, params, diag)


# ---------------------------------------------------------------------------
# Catalog and dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategySpec:
    id: str
    name: str
    reference: str
    tunable: tuple[str, ...] = ()
    default: dict = field(default_factory=dict)
    needs_factors: bool = False


# Row order of the reported tables.
CATALOG: tuple[StrategySpec, ...] = (
    StrategySpec("ew", "1/N (benchmark)", ""),
    StrategySpec("mv", "Sample mean-variance", ""),
    StrategySpec("bs", "Bayes-Stein", "Jorion (1986)"),
    StrategySpec("min", "Minimum-variance", ""),
    StrategySpec("mv-var", "Conditional mean-variance with VAR(1) forecasts", "DeMiguel et al. (2014)",
                 ("delta",), {"delta": 0.05}),
    StrategySpec("rrt", "Reward-to-risk timing", "Kirby and Ostdiek (2012); Moreira and Muir (2017)",
                 ("omega",), {"omega": 2}, needs_factors=True),
    StrategySpec("mv-min", "Three-fund model", "Kan and Zhou (2007)"),
    StrategySpec("ew-min", "Mixture of 1/N and minimum-variance", "DeMiguel et al. (2009b)"),
    StrategySpec("ew-mv", "Mixture of 1/N and mean-variance", "Tu and Zhou (2011)"),
    StrategySpec("ew-mv-min", "Mixture of 1/N and three-fund model", "Tu and Zhou (2011)"),
    StrategySpec("ac-mv", "Robust mean-variance", "Anderson and Cheng (2016)", ("tau",), {"tau": 4.0}),
    StrategySpec("ac-bs", "Robust Bayes-Stein", "Anderson and Cheng (2016)", ("tau",), {"tau": 4.0}),
    StrategySpec("ac-mv-min", "Robust three-fund", "Anderson and Cheng (2016)", ("tau",), {"tau": 4.0}),
    StrategySpec("mv-c", "Mean-variance, short-sale constrained", ""),
    StrategySpec("min-c", "Minimum-variance, short-sale constrained", ""),
    StrategySpec("bs-c", "Bayes-Stein, short-sale constrained", ""),
    StrategySpec("ac-mv-c", "Robust mean-variance, short-sale constrained", "", ("tau",), {"tau": 4.0}),
    StrategySpec("ac-bs-c", "Robust Bayes-Stein, short-sale constrained", "", ("tau",), {"tau": 4.0}),
    StrategySpec("ac-mv-min-c", "Robust three-fund, short-sale constrained", "", ("tau",), {"tau": 4.0}),
    StrategySpec("min-norm", "Norm-constrained minimum-variance", "DeMiguel et al. (2009a)",
                 ("delta",), {"delta": 0.10}),
    StrategySpec("bs-norm", "Norm-constrained Bayes-Stein", "DeMiguel et al. (2009a)",
                 ("delta",), {"delta": 0.10}),
)
STRATEGY_IDS = tuple(s.id for s in CATALOG)
_SPECS = {s.id: s for s in CATALOG}
PRESETS = {"delta": DELTA_PRESETS, "omega": OMEGA_PRESETS, "tau": (TAU_PRESET,), "gamma": (1.0,)}


def strategy_spec(sid: str) -> StrategySpec:
    try:
        return _SPECS[sid]
    except KeyError:
        raise ValueError(f"unknown strategy {sid!r}; expected one of {', '.join(STRATEGY_IDS)}") from None


def make_params(sid: str, gamma: float = 1.0, **overrides) -> StrategyParams:
    spec = strategy_spec(sid)
    kw = dict(spec.default)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(kw) - {"delta", "omega", "tau"}
    if unknown:
        raise ValueError(f"{sid}: unsupported parameters {sorted(unknown)}")
    return StrategyParams(gamma=gamma, constrained=sid.endswith("-c"), **kw)


def strategy_label(sid: str, params: StrategyParams) -> str:
    """Stable row label, e.g. ``mv-var(delta=0.05)``."""
    spec = strategy_spec(sid)
    if not spec.tunable or "tau" in spec.tunable and params.tau == TAU_PRESET:
        return sid
    parts = [f"{k}={getattr(params, k):g}" for k in spec.tunable]
    return f"{sid}({','.join(parts)})"


@dataclass
class WindowData:
    """Everything a rule may read for one rebalance date."""

    returns: np.ndarray  # M x N excess returns of the active assets
    factors: np.ndarray | None = None  # M x K
    window_end: object = None
    _est: MomentEstimates | None = None
    _kz: KanZhouStats | None = None

    @property
    def est(self) -> MomentEstimates:
        if self._est is None:
            self._est = sample_moments(self.returns, self.window_end)
        return self._est

    @property
    def kz(self) -> KanZhouStats:
        if self._kz is None:
            self._kz = kan_zhou_stats(self.est)
        return self._kz


def _kz_diag(wv: WeightVector, kz: KanZhouStats) -> WeightVector:
    wv.diagnostics["xi"] = kz.xi
    if kz.floored:
        wv.diagnostics["psi_floored"] = float(len(kz.floored))
    return wv


def _rrt(data: WindowData, p: StrategyParams) -> WeightVector:
    if data.factors is None or data.factors.shape[1] == 0:
        raise StrategyError("rrt needs factor returns")
    wv = weights_rrt(data.est, factor_betas(data.returns, data.factors), p.omega)
    wv.params = p
    return wv


_DISPATCH: dict[str, Callable[[WindowData, StrategyParams], WeightVector]] = {
    "ew": lambda d, p: weights_ew(d.returns.shape[1]),
    "mv": lambda d, p: weights_mv(d.est),
    "bs": lambda d, p: weights_bs(d.est),
    "min": lambda d, p: weights_min(d.est),
    "mv-var": lambda d, p: weights_mv_var(d.returns, d.est, p),
    "rrt": _rrt,
    "mv-min": lambda d, p: _kz_diag(weights_mv_min(d.est, d.kz, p.gamma), d.kz),
    "ew-min": lambda d, p: _kz_diag(weights_ew_min(d.est, d.kz), d.kz),
    "ew-mv": lambda d, p: _kz_diag(weights_ew_mv(d.est, d.kz, p.gamma), d.kz),
    "ew-mv-min": lambda d, p: _kz_diag(weights_ew_mv_min(d.est, d.kz, p.gamma), d.kz),
    "ac-mv": lambda d, p: weights_robust(d.est, "mv", p),
    "ac-bs": lambda d, p: weights_robust(d.est, "bs", p),
    "ac-mv-min": lambda d, p: weights_robust(d.est, "mv-min", p),
    "mv-c": lambda d, p: weights_constrained("mv", d.est, p),
    "min-c": lambda d, p: weights_constrained("min", d.est, p),
    "bs-c": lambda d, p: weights_constrained("bs", d.est, p),
    "ac-mv-c": lambda d, p: weights_constrained("ac-mv", d.est, p),
    "ac-bs-c": lambda d, p: weights_constrained("ac-bs", d.est, p),
    "ac-mv-min-c": lambda d, p: weights_constrained("ac-mv-min", d.est, p),
    "min-norm": lambda d, p: weights_norm_constrained("min", d.est, p),
    "bs-norm": lambda d, p: weights_norm_constrained("bs", d.est, p),
}


def compute_weights(sid: str, data: WindowData, params: StrategyParams | None = None) -> WeightVector:
    """Weights of strategy ``sid`` for one estimation window.

    Numerical failures of the rule surface as :class:`StrategyError`.
    """
    if params is None:
        params = make_params(sid)
    fn = _DISPATCH[strategy_spec(sid).id]
    try:
        wv = fn(data, params)
    except StrategyError:
        raise
    except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        raise StrategyError(f"{sid}: {exc}") from exc
    wv.strategy_id = sid
    wv.params = params
    if abs(wv.weights.sum() - 1.0) > 1e-8:
        raise StrategyError(f"{sid}: weights sum to {wv.weights.sum():.12g}")
    return wv
