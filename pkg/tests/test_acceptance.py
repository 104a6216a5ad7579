"""Acceptance suite: one PASS/FAIL line per criterion.

Lines are collected in ``LINES`` and echoed in the pytest terminal summary
(see conftest.py). Run ``python tests/test_acceptance.py`` for a plain
report without pytest.
"""
from __future__ import annotations

import filecmp
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from portbench import cli, report
from portbench.backtest import BacktestConfig, run_backtest
from portbench.config import parse_config, tomllib
from portbench.data import panel_from_arrays
from portbench.linalg import QuadraticProgram, incomplete_beta, log_incomplete_beta, solve_qp
from portbench.moments import (
    MomentEstimates,
    bayes_stein_mean,
    kan_zhou_stats,
    min_variance_weights,
    mv_min_expected_return,
)
from portbench.stats import LJUNG_BOX_LAGS, ceq_diff_test, ljung_box, sharpe_ratio, sr_diff_test, avg_turnover
from portbench.strategies import (
    STRATEGY_IDS,
    StrategyParams,
    budget_markowitz,
    weights_constrained,
    weights_ew_mv,
    weights_ew_mv_min,
    weights_ew_min,
    weights_mv_min,
    weights_robust,
)

ROOT = Path(__file__).resolve().parents[1]
LINES: list[str] = []


def record(n: int, ok: bool, what: str, detail: str) -> bool:
    LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {what} ({detail})")
    return ok


def spd(rng, n, cond=50.0, scale=1e-3):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    S = (Q * (np.geomspace(1.0, cond, n) * scale)) @ Q.T
    return 0.5 * (S + S.T)


def est_from(mu, S, M=240):
    return MomentEstimates(np.asarray(mu, float), np.asarray(S, float), M, None)


# ---------------------------------------------------------------------------
# 1. closed-form equivalence
# ---------------------------------------------------------------------------

def test_criterion_1_closed_form_min_variance():
    rng = np.random.default_rng(101)
    worst, t0 = 0.0, time.perf_counter()
    for i in range(200):
        n = (2, 5, 10)[i % 3]
        S = spd(rng, n, cond=10 ** rng.uniform(0, 4))
        rep = solve_qp(QuadraticProgram.portfolio(S, np.zeros(n)))
        x = np.linalg.solve(S, np.ones(n))
        worst = max(worst, float(np.abs(rep.solution - x / x.sum()).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 5.0
    assert record(1, ok, "budget-only QP vs closed-form minimum variance, 200 instances",
                  f"max |dw| = {worst:.2e} <= 1e-8, runtime {elapsed:.2f}s < 5s")


# ---------------------------------------------------------------------------
# 2. grid-oracle equivalence
# ---------------------------------------------------------------------------

def simplex_grid(step=1e-3):
    k = int(round(1 / step))
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    i, j = i[keep], j[keep]
    return np.column_stack([i, j, k - i - j]) / k


def test_criterion_2_constrained_vs_grid():
    rng = np.random.default_rng(202)
    grid = simplex_grid()
    worst = 0.0
    for _ in range(50):
        S = spd(rng, 3, cond=10 ** rng.uniform(0, 2), scale=10 ** rng.uniform(-3, -1))
        est = est_from(rng.normal(0.01, 0.03, 3), S)
        means = {"mv": est.mu_hat, "bs": bayes_stein_mean(est, min_variance_weights(est))[0], "min": np.zeros(3)}
        for base, mu in means.items():
            w = weights_constrained(base, est).weights
            obj = 0.5 * w @ S @ w - mu @ w
            g = float(np.min(0.5 * np.einsum("ij,jk,ik->i", grid, S, grid) - grid @ mu))
            worst = max(worst, obj - g)  # positive means the grid beat the solver
    assert record(2, worst <= 1e-6, "mv-c, min-c, bs-c vs 1e-3 simplex grid, 50 instances",
                  f"max objective excess over grid = {worst:.2e} <= 1e-6")


# ---------------------------------------------------------------------------
# 3. incomplete beta vs adaptive quadrature
# ---------------------------------------------------------------------------

def log_beta_quadrature(z, a, b):
    """log of the lower incomplete beta integral by adaptive quadrature.

    The integrand is rescaled by its maximum on [0, z] so peaked cases
    with large a, b do not underflow; a < 1 uses an algebraic weight.
    """
    def logf(y):
        return (a - 1) * math.log(y) + (b - 1) * math.log1p(-y)

    opts = dict(epsabs=0.0, epsrel=1e-13, limit=500)
    if a < 1:
        L = 0.0 if b >= 1 else (b - 1) * math.log1p(-z)
        val, _ = integrate.quad(lambda y: math.exp((b - 1) * math.log1p(-y) - L), 0.0, z,
                                weight="alg", wvar=(a - 1, 0.0), **opts)
        return L + math.log(val)
    mode = (a - 1) / (a + b - 2) if a + b > 2 else -1.0
    interior = 0.0 < mode < z
    L = logf(mode) if interior else max(logf(z), 0.0 if a == 1 else -math.inf)

    def f(y):
        if y <= 0.0:
            return math.exp(-L) if a == 1 else 0.0
        return math.exp(logf(y) - L)

    val, _ = integrate.quad(f, 0.0, z, points=[mode] if interior else None, **opts)
    return L + math.log(val)


def test_criterion_3_incomplete_beta_accuracy():
    rng = np.random.default_rng(303)
    worst, worst_arg = 0.0, None
    for _ in range(1000):
        z = float(rng.uniform(0.0, 1.0))
        a, b = np.exp(rng.uniform(math.log(0.05), math.log(300.0), 2))
        ref = log_beta_quadrature(z, a, b)
        err = abs(log_incomplete_beta(z, a, b) - ref)  # = relative error of B_z
        if math.exp(ref) > 1e-290:
            val = incomplete_beta(z, a, b)
            err = max(err, abs(val - math.exp(ref)) / math.exp(ref))
        if err > worst:
            worst, worst_arg = err, (z, a, b)
    assert record(3, worst <= 1e-10, "incomplete beta vs adaptive quadrature, 1000 triples, a,b <= 300",
                  f"max relative error {worst:.2e} <= 1e-10")


# ---------------------------------------------------------------------------
# 4. combination-rule endpoints and small-tau robust rules
# ---------------------------------------------------------------------------

def _positive_instance(rng, n):
    # positive 1'Σ⁻¹μ and grand mean so the |1'x| normalization keeps the sign
    while True:
        S = spd(rng, n, scale=2e-3)
        mu = rng.normal(0.008, 0.004, n)
        x = np.linalg.solve(S, mu)
        ones = np.linalg.solve(S, np.ones(n))
        if x.sum() > 0.05 * np.abs(x).sum() and mu @ ones > 0:
            return est_from(mu, S), x / x.sum(), ones / ones.sum()


def test_criterion_4_endpoints():
    rng = np.random.default_rng(404)
    worst_end, worst_tau = 0.0, 0.0
    for _ in range(20):
        n = int(rng.integers(2, 9))
        est, w_mv, w_min = _positive_instance(rng, n)
        kz = kan_zhou_stats(est)
        big, small = replace(kz, psi2_a=1e9), replace(kz, psi2_a=1e-12)
        ew = np.full(n, 1.0 / n)
        cases = [
            (weights_mv_min(est, big).weights, w_mv),
            (weights_mv_min(est, small).weights, w_min),
            (weights_ew_min(est, big).weights, ew),
            (weights_ew_min(est, small).weights, w_min),
            (weights_ew_mv(est, kz, lam=0.0).weights, ew),
            (weights_ew_mv(est, kz, lam=1.0).weights, w_mv),
            (weights_ew_mv_min(est, kz, lam=0.0).weights, ew),
            (weights_ew_mv_min(est, big, lam=1.0).weights, w_mv),
            (weights_ew_mv_min(est, small, lam=1.0).weights, w_min),
        ]
        worst_end = max(worst_end, max(float(np.abs(w - ref).max()) for w, ref in cases))

        p = StrategyParams(tau=1e-12)
        means = {
            "mv": est.mu_hat,
            "bs": bayes_stein_mean(est, min_variance_weights(est))[0],
            "mv-min": mv_min_expected_return(est, kz),
        }
        for inner, mu in means.items():
            w = weights_robust(est, inner, p).weights
            worst_tau = max(worst_tau, float(np.abs(w - budget_markowitz(est, mu, 1.0)).max()))
            wc = weights_robust(est, inner, p, nonneg=True).weights
            ref = solve_qp(QuadraticProgram.portfolio(est.sigma_hat, -mu, nonneg=True)).solution
            worst_tau = max(worst_tau, float(np.abs(wc - ref).max()))
    ok = worst_end <= 1e-4 and worst_tau <= 1e-6
    assert record(4, ok, "combination-rule endpoints and robust rules at tau=1e-12",
                  f"endpoint max |dw| = {worst_end:.1e} <= 1e-4, robust max |dw| = {worst_tau:.1e} <= 1e-6")


# ---------------------------------------------------------------------------
# 5. test calibration under the null
# ---------------------------------------------------------------------------

def test_criterion_5_calibration():
    rng = np.random.default_rng(505)
    n, reps = 418, 10_000
    rho = 0.5
    L = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    sr_rej = ceq_rej = 0
    for _ in range(reps):
        Z = rng.standard_normal((n, 2)) @ L.T
        # equal Sharpe ratios 0.25
        sr_rej += sr_diff_test(0.01 + 0.04 * Z[:, 0], 0.02 + 0.08 * Z[:, 1]).p_value < 0.05
        # equal CEQ at gamma = 1: 0.01 - 0.04²/2 = 0.011 - 0.06²/2
        ceq_rej += ceq_diff_test(0.01 + 0.04 * Z[:, 0], 0.011 + 0.06 * Z[:, 1], 1.0).p_value < 0.05
    lb_rej = {k: 0 for k in LJUNG_BOX_LAGS}
    for _ in range(reps):
        x = rng.standard_normal(n)
        for k in LJUNG_BOX_LAGS:
            lb_rej[k] += ljung_box(x, k).p_value < 0.01
    sr, cq = sr_rej / reps, ceq_rej / reps
    lb = {k: v / reps for k, v in lb_rej.items()}
    ok = abs(sr - 0.05) <= 0.01 and abs(cq - 0.05) <= 0.01 and all(abs(v - 0.01) <= 0.005 for v in lb.values())
    lb_txt = ", ".join(f"lag {k} {v:.4f}" for k, v in lb.items())
    assert record(5, ok, "null rejection rates, n=418, 10^4 replications",
                  f"SR test {sr:.4f}, CEQ test {cq:.4f} (target 0.05 +/- 0.01); Ljung-Box at 1%: {lb_txt} "
                  "(target 0.01 +/- 0.005)")


# ---------------------------------------------------------------------------
# 6. protocol identities
# ---------------------------------------------------------------------------

def _synthetic_panel(rng, T, N):
    # distinct positive alphas keep the tangency normalizer away from zero
    F = rng.normal(0.005, 0.04, (T, 1))
    R = rng.uniform(0.004, 0.012, N) + F @ rng.uniform(0.5, 1.5, (1, N)) + rng.normal(0, 0.02, (T, N))
    return R, F, np.full(T, 0.003)


def test_criterion_6_protocol_identities():
    rng = np.random.default_rng(606)
    M, T, N, s = 120, 146, 6, 132
    R, F, rf = _synthetic_panel(rng, T, N)
    Rm, Fm, rfm = R.copy(), F.copy(), rf.copy()
    R2, F2, _ = _synthetic_panel(rng, T, N)  # same scale, fresh draw
    Rm[s:], Fm[s:], rfm[s:] = R2[s:], F2[s:], 0.004
    base = panel_from_arrays(R, factors=F, factor_names=("MKT",), rf=rf)
    mutated = panel_from_arrays(Rm, factors=Fm, factor_names=("MKT",), rf=rfm)
    k_last = s - M  # rebalance index whose window ends at row s-1
    cfg0 = BacktestConfig(M=M, tc=0.0)
    lookahead, not_equal = [], []
    for sid in STRATEGY_IDS:
        a = run_backtest(base, sid, cfg0)
        b = run_backtest(mutated, sid, cfg0)
        if not (np.array_equal(a.target_weights[: k_last + 1], b.target_weights[: k_last + 1])
                and np.array_equal(a.gross_excess[:k_last], b.gross_excess[:k_last])):
            lookahead.append(sid)
        if not np.array_equal(a.net_excess, a.gross_excess):
            not_equal.append(sid)

    frozen = panel_from_arrays(np.zeros((T, N)), rf=np.zeros(T))
    ew = run_backtest(frozen, "ew", BacktestConfig(M=M))
    ew_turnover = float(np.abs(ew.period_turnover).max())
    ok = not lookahead and not not_equal and ew_turnover == 0.0
    assert record(6, ok, "no look-ahead, tc=0 net == gross, frozen-price ew turnover",
                  f"{len(STRATEGY_IDS)} strategies; look-ahead in {lookahead or 'none'}; "
                  f"net != gross in {not_equal or 'none'}; ew max turnover {ew_turnover:g}")


# ---------------------------------------------------------------------------
# 7. loose reproduction on the French library datasets
# ---------------------------------------------------------------------------

FRENCH_FILES = (
    "10_Industry_Portfolios.csv",
    "F-F_Research_Data_Factors.csv",
    "F-F_Momentum_Factor.csv",
    "25_Portfolios_5x5.csv",
)
REFERENCE_SR = {
    "Industry": {"ew": 0.1736, "mv": 0.1208, "bs": 0.1855, "min": 0.2284},
    "SMB/HML/UMD": {"ew": -0.0134, "mv": -0.0300, "bs": -0.0387, "min": -0.0204},
    "FF-4": {"ew": 0.1563, "mv": 0.4097, "bs": 0.4373, "min": 0.3494},
}
REFERENCE_EW_TURNOVER = 0.0256


def french_dir() -> Path:
    return Path(os.environ.get("PORTBENCH_FRENCH_DIR", ROOT / "data" / "french"))


def test_criterion_7_french_reproduction(tmp_path):
    d = french_dir()
    missing = [f for f in FRENCH_FILES if not (d / f).exists()]
    if missing:
        LINES.append(f"SKIP criterion 7: French data files not found in {d} (missing {', '.join(missing)})")
        pytest.skip(f"French data files not found in {d}")
    raw = tomllib.loads((ROOT / "configs" / "french.toml").read_text())
    raw["strategies"] = ["ew", "mv", "bs", "min"]
    raw["output"] = str(tmp_path / "out")
    cfg = parse_config(raw, base=d)
    bad, lines, t_max = [], [], 0.0
    ew_turnover = float("nan")
    for ds in cfg.datasets:
        t0 = time.perf_counter()
        panel = report.load_dataset(ds)
        bc = BacktestConfig(M=cfg.M, gamma=cfg.gamma, tc=cfg.tc, seed=cfg.seed, universe_cap=ds.universe_cap)
        for sid, ref in REFERENCE_SR[ds.name].items():
            path = run_backtest(panel, sid, bc)
            sr = sharpe_ratio(path.gross_excess)
            lines.append(f"{ds.name}/{sid} {sr:.4f} vs {ref:.4f}")
            if abs(sr - ref) > 0.03:
                bad.append(f"{ds.name}/{sid}")
            if ds.name == "Industry" and sid == "ew":
                ew_turnover = avg_turnover(path)
        t_max = max(t_max, time.perf_counter() - t0)
    to_ok = abs(ew_turnover - REFERENCE_EW_TURNOVER) <= 0.005
    ok = not bad and to_ok
    assert record(7, ok, "Sharpe ratios within 0.03 and ew Industry turnover within 0.005",
                  f"{'; '.join(lines)}; ew Industry turnover {ew_turnover:.4f} vs 0.0256; "
                  f"outside tolerance: {bad or 'none'}; slowest dataset {t_max:.1f}s")


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------

def _write_panel_csv(path, rng, T=110, N=9):
    F = rng.normal(0.5, 4.0, T)
    R = 0.4 + np.outer(F, rng.uniform(0.5, 1.5, N)) + rng.normal(0, 3, (T, N))
    R[:14, 0] = np.nan  # late entrant
    R[70:, 1] = np.nan  # delisting
    with open(path, "w") as fh:
        fh.write("date," + ",".join(f"S{i}" for i in range(N)) + ",Mkt-RF,RF\n")
        for t in range(T):
            cells = ["" if np.isnan(x) else f"{x:.4f}" for x in R[t]]
            fh.write(f"{1980 + t // 12}-{t % 12 + 1:02d}," + ",".join(cells) + f",{F[t]:.4f},0.25\n")


def test_criterion_8_determinism(tmp_path):
    _write_panel_csv(tmp_path / "panel.csv", np.random.default_rng(808))
    (tmp_path / "run.toml").write_text(
        'M = 60\nseed = 17\nuniverse_cap = 6\n'
        '[[datasets]]\nname = "Synthetic"\npath = "panel.csv"\nfactor_model = "capm"\n'
        '[datasets.layout]\nfactor_columns = ["Mkt-RF"]\nrf_column = "RF"\npercent = true\nsubtract_rf = true\n'
    )
    a, b = tmp_path / "a", tmp_path / "b"
    rc_a = cli.main(["run", "--config", str(tmp_path / "run.toml"), "--out", str(a), "--jobs", "1"])
    rc_b = cli.main(["run", "--config", str(tmp_path / "run.toml"), "--out", str(b), "--jobs", "2"])
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differ = [str(f) for f in files if not (b / f).exists() or not filecmp.cmp(a / f, b / f, shallow=False)]
    extra = sorted(str(p.relative_to(b)) for p in b.rglob("*") if p.is_file() and not (a / p.relative_to(b)).exists())
    ok = rc_a == rc_b == 0 and (a / "results.csv").exists() and not differ and not extra
    assert record(8, ok, "two full runs with the same config and seed are byte-identical",
                  f"{len(files)} output files compared (1 vs 2 workers); differing: {differ + extra or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
