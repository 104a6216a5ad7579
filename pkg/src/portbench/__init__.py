"""Out-of-sample benchmarking of portfolio selection rules."""
from .backtest import BacktestConfig, StrategyPath, run_backtest
from .data import PanelLayout, ReturnPanel, load_return_panel, panel_from_arrays, select_universe
from .strategies import STRATEGY_IDS, compute_weights, make_params

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "PanelLayout",
    "ReturnPanel",
    "STRATEGY_IDS",
    "StrategyPath",
    "compute_weights",
    "load_return_panel",
    "make_params",
    "panel_from_arrays",
    "run_backtest",
    "select_universe",
]
