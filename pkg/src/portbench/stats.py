"""Out-of-sample performance measures, significance tests, return-data
diagnostics and cross-strategy rankings.

The two difference tests assume iid normal returns; their p-values are
not robust to serial correlation or heteroskedasticity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

LJUNG_BOX_LAGS = (2, 4, 8, 16)


class DegenerateSeriesError(ValueError):
    pass


@dataclass(frozen=True)
class PerfSummary:
    mean: float
    stdev: float
    sharpe: float
    ceq: float
    avg_turnover: float
    n_obs: int


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str

    __test__ = False  # not a pytest class


def _series(x, min_n=2) -> np.ndarray:
    a = np.asarray(x, dtype=float).ravel()
    if a.size < min_n:
        raise DegenerateSeriesError(f"need at least {min_n} observations, got {a.size}")
    return a


def _two_sided(z: float) -> float:
    return float(2.0 * sps.norm.sf(abs(z)))


def sharpe_ratio(returns) -> float:
    r = _series(returns)
    sd = r.std(ddof=1)
    if sd <= 0:
        raise DegenerateSeriesError("zero variance")
    return float(r.mean() / sd)


def ceq(returns, gamma: float = 1.0) -> float:
    r = _series(returns)
    return float(r.mean() - 0.5 * gamma * r.var(ddof=1))


def summarize(gross, turnover_avg: float, gamma: float = 1.0) -> PerfSummary:
    r = _series(gross)
    sd = float(r.std(ddof=1))
    return PerfSummary(
        mean=float(r.mean()),
        stdev=sd,
        sharpe=float(r.mean() / sd) if sd > 0 else float("nan"),
        ceq=ceq(r, gamma),
        avg_turnover=turnover_avg,
        n_obs=r.size,
    )


def _pair(ri, rj):
    a, b = _series(ri, 3), _series(rj, 3)
    if a.size != b.size:
        raise ValueError("return sequences differ in length")
    c = np.cov(a, b, ddof=1)
    return a, b, c[0, 0], c[1, 1], c[0, 1]


def sr_diff_test(ri, rj) -> TestResult:
    """z-test for equal Sharpe ratios of two paired return series."""
    a, b, vi, vj, cij = _pair(ri, rj)
    if vi <= 0 or vj <= 0:
        raise DegenerateSeriesError("zero variance in one of the series")
    n = a.size
    mi, mj = a.mean(), b.mean()
    si, sj = math.sqrt(vi), math.sqrt(vj)
    num = sj * mi - si * mj
    theta = (
        2 * vi * vj
        - 2 * si * sj * cij
        + 0.5 * mi**2 * vj
        + 0.5 * mj**2 * vi
        - (mi * mj / (si * sj)) * cij**2
    ) / n
    if abs(num) <= 1e-15 * max(abs(sj * mi), abs(si * mj), 1e-300):
        return TestResult(0.0, 1.0, "sharpe-diff")
    if theta <= 0:
        raise DegenerateSeriesError(f"non-positive asymptotic variance {theta:.3g}")
    z = num / math.sqrt(theta)
    return TestResult(float(z), _two_sided(z), "sharpe-diff")


def ceq_theta(vi: float, vj: float, cij: float) -> np.ndarray:
    """Asymptotic covariance of (μ_i, μ_j, σ_i², σ_j²) under normality."""
    return np.array(
        [
            [vi, cij, 0.0, 0.0],
            [cij, vj, 0.0, 0.0],
            [0.0, 0.0, 2 * vi**2, 2 * cij**2],
            [0.0, 0.0, 2 * cij**2, 2 * vj**2],
        ]
    )


def ceq_diff_test(ri, rj, gamma: float = 1.0) -> TestResult:
    """Delta-method z-test for equal certainty-equivalent returns."""
    a, b, vi, vj, cij = _pair(ri, rj)
    n = a.size
    f = (a.mean() - 0.5 * gamma * vi) - (b.mean() - 0.5 * gamma * vj)
    grad = np.array([1.0, -1.0, -0.5 * gamma, 0.5 * gamma])
    var = float(grad @ ceq_theta(vi, vj, cij) @ grad) / n
    if f == 0.0:
        return TestResult(0.0, 1.0, "ceq-diff")
    if var <= 0:
        raise DegenerateSeriesError("zero asymptotic variance")
    z = f / math.sqrt(var)
    return TestResult(float(z), _two_sided(z), "ceq-diff")


def return_loss(candidate, benchmark) -> float:
    """Extra monthly return the candidate needs to match the benchmark's
    Sharpe ratio (both series net of costs)."""
    c, b = _series(candidate), _series(benchmark)
    if c.size != b.size:
        raise ValueError("series differ in length")
    sb = b.std(ddof=1)
    if sb <= 0:
        raise DegenerateSeriesError("benchmark has zero variance")
    return float(b.mean() / sb * c.std(ddof=1) - c.mean())


def avg_turnover(path) -> float:
    """Mean rebalancing turnover of a path (or of a turnover sequence)."""
    to = getattr(path, "period_turnover", path)
    to = np.asarray(to, dtype=float)
    return float(to.mean()) if to.size else float("nan")


def relative_turnover(avg_k: float, avg_benchmark: float) -> float:
    if avg_benchmark == 0:
        raise ZeroDivisionError("benchmark turnover is zero")
    return avg_k / avg_benchmark


# ---------------------------------------------------------------------------
# Data diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssetStats:
    mean: float
    stdev: float
    min: float
    max: float
    skewness: float
    kurtosis: float  # excess
    n: int


def asset_statistics(series) -> AssetStats:
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 4:
        raise DegenerateSeriesError("need at least 4 observations")
    sd = x.std(ddof=1)
    if sd <= 0:
        raise DegenerateSeriesError("constant series: skewness and kurtosis undefined")
    d = x - x.mean()
    m2 = np.mean(d**2)
    skew = np.mean(d**3) / m2**1.5
    kurt = np.mean(d**4) / m2**2 - 3.0
    return AssetStats(float(x.mean()), float(sd), float(x.min()), float(x.max()), float(skew), float(kurt), x.size)


def summary_statistics(panel) -> dict:
    """Per-asset statistics of nominal returns plus cross-asset extremes."""
    R = panel.nominal_returns()
    per_asset = {name: asset_statistics(R[:, i]) for i, name in enumerate(panel.assets)}
    extremes = {}
    for fld in ("mean", "stdev", "min", "max", "kurtosis", "skewness"):
        vals = [getattr(s, fld) for s in per_asset.values()]
        extremes[fld] = (float(min(vals)), float(max(vals)))
    return {"per_asset": per_asset, "extremes": extremes}


def ljung_box(series, lags: int) -> TestResult:
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if not 1 <= lags < n:
        raise ValueError(f"need n > lags >= 1 (n={n}, lags={lags})")
    d = x - x.mean()
    denom = d @ d
    if denom <= 0:
        raise DegenerateSeriesError("constant series")
    k = np.arange(1, lags + 1)
    rho = np.array([d[j:] @ d[:-j] for j in k]) / denom
    q = float(n * (n + 2) * np.sum(rho**2 / (n - k)))
    return TestResult(q, float(sps.chi2.sf(q, lags)), f"ljung-box({lags})")


# ---------------------------------------------------------------------------
# Rankings
# ---------------------------------------------------------------------------

def rank_column(values: Sequence[float], higher_is_better: bool = True) -> list[int | None]:
    """Dense ranks, 1 = best; ties share a rank; NaN gets ``None``."""
    vals = [float(v) for v in values]
    finite = sorted({v for v in vals if math.isfinite(v)}, reverse=higher_is_better)
    pos = {v: i + 1 for i, v in enumerate(finite)}
    return [pos[v] if math.isfinite(v) else None for v in vals]


def rank_strategies(table: Mapping[str, Mapping[str, float]], higher_is_better: bool = True):
    """Rank a strategies x datasets table column by column.

    ``table[strategy][dataset]``; returns the same shape with integer ranks.
    Strategies are visited in name order for output stability.
    """
    strategies = sorted(table)
    datasets = []
    for s in strategies:
        for d in table[s]:
            if d not in datasets:
                datasets.append(d)
    out = {s: {} for s in strategies}
    for d in datasets:
        col = [table[s].get(d, float("nan")) for s in strategies]
        for s, r in zip(strategies, rank_column(col, higher_is_better)):
            out[s][d] = r
    return out
