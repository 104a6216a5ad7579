"""Rolling-window out-of-sample backtest with weight drift and
proportional transaction costs."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import PanelError, ReturnPanel, select_universe
from .strategies import StrategyError, StrategyParams, WindowData, compute_weights, make_params

log = logging.getLogger(__name__)


class BacktestError(RuntimeError):
    pass


class WipeoutError(BacktestError):
    """Portfolio gross return fell to zero or below."""


@dataclass(frozen=True)
class BacktestConfig:
    M: int = 240
    gamma: float = 1.0
    tc: float = 0.005
    seed: int = 0
    universe_cap: int = 60
    charge_entry: bool = True  # pay tc on establishing the first position
    factor_names: tuple[str, ...] | None = None  # factors used by rrt; None = all

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.tc < 0:
            raise ValueError("tc must be nonnegative")


@dataclass
class SkipEvent:
    date: str
    reason: str


@dataclass
class StrategyPath:
    strategy_id: str
    params: StrategyParams
    assets: tuple[str, ...]
    rebalance_dates: list[str]
    target_weights: np.ndarray  # (T-M) x N_panel, zero outside the universe
    drifted_weights: np.ndarray  # (T-M) x N_panel, after the holding month
    gross_excess: np.ndarray  # T-M
    net_excess: np.ndarray  # T-M
    period_turnover: np.ndarray  # T-M; rebalance at the end of each holding month
    entry_turnover: float
    skip_events: list[SkipEvent] = field(default_factory=list)
    diagnostics: list[dict[str, float]] = field(default_factory=list)

    @property
    def n_obs(self) -> int:
        return len(self.gross_excess)

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "gross", "net", "turnover"])
            for d, g, n, to in zip(self.rebalance_dates, self.gross_excess, self.net_excess, self.period_turnover):
                w.writerow([d, repr(float(g)), repr(float(n)), repr(float(to))])


def drifted_weights(w, asset_excess, rf: float = 0.0) -> np.ndarray:
    """Weights after one month of price moves (before rebalancing).

    Zero weights stay zero, so returns of unheld assets may be NaN.
    """
    w = np.asarray(w, dtype=float)
    r = np.asarray(asset_excess, dtype=float)
    held = w != 0
    s = w.sum()
    r_p = float(w[held] @ r[held]) / s if s != 0 else float("nan")
    total = 1.0 + rf + r_p
    if not np.isfinite(total) or total <= 0:
        raise WipeoutError(f"portfolio gross return {total:.4g} <= 0")
    # w_i g_i / (w'g) written in relative form so zero returns leave w exactly unchanged
    out = np.zeros_like(w)
    out[held] = w[held] * (1.0 + (r[held] - r_p) / total)
    return out


def period_turnover(w_next, w_drift) -> float:
    """L1 distance between the new target and the drifted holdings.

    Both vectors live on the full panel index set, so assets leaving the
    universe contribute their drifted weight and entrants their target.
    """
    return float(np.abs(np.asarray(w_next, dtype=float) - np.asarray(w_drift, dtype=float)).sum())


def net_wealth_path(gross, turnover, tc: float, entry_turnover: float = 0.0) -> np.ndarray:
    """Net-of-cost excess returns from the wealth recursion
    W_{t+1} = W_t (1 + R_{t+1}) (1 - tc · turnover_{t+1}), W_0 = 1.

    ``entry_turnover`` is charged once, before the first holding month.
    """
    if tc < 0:
        raise ValueError("tc must be nonnegative")
    gross = np.asarray(gross, dtype=float)
    turnover = np.asarray(turnover, dtype=float)
    factors = (1.0 + gross) * (1.0 - tc * turnover)
    if len(factors):
        factors[0] *= 1.0 - tc * entry_turnover
    if np.any(factors <= 0):
        raise WipeoutError("wealth fell to zero or below")
    if tc == 0 or (not np.any(turnover) and entry_turnover == 0):
        return gross.copy()
    return factors - 1.0


def _carry(prev_target: np.ndarray | None, active: np.ndarray, n: int) -> np.ndarray:
    w = np.zeros(n)
    if prev_target is not None:
        w[active] = prev_target[active]
        s = w.sum()
        if s > 1e-12:
            return w / s
    w[:] = 0.0
    w[active] = 1.0 / len(active)
    return w


def _factor_window(panel: ReturnPanel, lo: int, hi: int, names) -> np.ndarray | None:
    if panel.factors.shape[1] == 0:
        return None
    if names is None:
        cols = list(range(len(panel.factor_names)))
    else:
        missing = [n for n in names if n not in panel.factor_names]
        if missing:
            raise PanelError(f"factors {missing} not in panel")
        cols = [panel.factor_names.index(n) for n in names]
    F = panel.factors[lo:hi, cols]
    if not np.all(np.isfinite(F)):
        raise PanelError("missing factor returns inside the estimation window")
    return F


def run_backtest(
    panel: ReturnPanel,
    strategy: str,
    config: BacktestConfig = BacktestConfig(),
    params: StrategyParams | None = None,
) -> StrategyPath:
    """Roll the estimation window from t = M to T-1 and realize returns.

    At each rebalance date t the rule sees rows t-M+1..t only; the target
    earns row t+1. After the last holding month one more (terminal)
    rebalance is evaluated so every holding month has a closing turnover.
    """
    M, T, n = config.M, panel.T, panel.N
    if T < M + 1:
        raise BacktestError(f"panel has {T} months; need at least M+1 = {M + 1}")
    if params is None:
        params = make_params(strategy, gamma=config.gamma)
    n_oos = T - M
    rf = panel.rf
    if rf is None:
        log.warning("no risk-free series; drifting weights with excess returns only")

    targets = np.zeros((n_oos, n))
    drifted = np.zeros((n_oos, n))
    gross = np.zeros(n_oos)
    turnover = np.zeros(n_oos)
    skips: list[SkipEvent] = []
    diags: list[dict[str, float]] = []
    dates = panel.date_labels()
    prev_target = None
    entry = 0.0
    n_ok = 0

    for k in range(n_oos + 1):
        t = M - 1 + k
        terminal = k == n_oos
        sel = select_universe(panel, t, M, config.universe_cap, config.seed, require_next=not terminal)
        active = sel.active_assets
        lo = t - M + 1
        data = WindowData(
            panel.excess_returns[lo : t + 1][:, active],
            _factor_window(panel, lo, t + 1, config.factor_names),
            window_end=dates[t],
        )
        w_full = np.zeros(n)
        try:
            wv = compute_weights(strategy, data, params)
            w_full[active] = wv.weights
            diag = dict(wv.diagnostics)
            n_ok += 1
        except StrategyError as exc:
            w_full = _carry(prev_target, active, n)
            skips.append(SkipEvent(dates[t], str(exc)))
            log.info("%s at %s: %s; carrying previous weights", strategy, dates[t], exc)
            diag = {"skipped": 1.0}

        if k == 0:
            entry = float(np.abs(w_full).sum())
        else:
            turnover[k - 1] = period_turnover(w_full, drifted[k - 1])
        if terminal:
            break

        targets[k] = w_full
        diags.append(diag)
        r_next = panel.excess_returns[t + 1]
        held = w_full != 0
        gross[k] = float(w_full[held] @ r_next[held])
        drifted[k] = drifted_weights(w_full, r_next, 0.0 if rf is None else rf[t + 1])
        prev_target = w_full

    if n_ok == 0:
        raise BacktestError(f"{strategy}: every rebalance date was skipped")
    net = net_wealth_path(gross, turnover, config.tc, entry if config.charge_entry else 0.0)
    return StrategyPath(
        strategy_id=strategy,
        params=params,
        assets=panel.assets,
        rebalance_dates=dates[M - 1 : T - 1],
        target_weights=targets,
        drifted_weights=drifted,
        gross_excess=gross,
        net_excess=net,
        period_turnover=turnover,
        entry_turnover=entry,
        skip_events=skips,
        diagnostics=diags,
    )
