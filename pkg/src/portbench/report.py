"""Grid execution over datasets x strategies and report assembly.

The machine-readable ``results.csv`` is the single source of truth: every
human-readable table is rebuilt by reading that file back, never by
recomputing statistics.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import stats
from .backtest import BacktestConfig, StrategyPath, run_backtest
from .config import DatasetConfig, RunConfig, StrategyEntry
from .data import ReturnPanel, filter_min_history
from .moments import sample_moments
from .strategies import STRATEGY_IDS, StrategyError, weights_mv_insample

log = logging.getLogger(__name__)

IN_SAMPLE_LABEL = "mv (in-sample)"

# Fixed column schema of results.csv (documented in the README).
RESULT_COLUMNS = (
    "dataset",
    "strategy",
    "label",
    "status",  # ok | failed | in-sample
    "error",
    "n_obs",
    "n_assets",
    "avg_universe",
    "mean",
    "stdev",
    "sharpe",
    "sharpe_z",
    "sharpe_p",
    "ceq",
    "ceq_z",
    "ceq_p",
    "net_mean",
    "net_stdev",
    "avg_turnover",
    "rel_turnover",
    "entry_turnover",
    "return_loss_ew",
    "return_loss_min",
    "n_skipped",
    "skip_dates",
    "phi_mean",
    "lambda_mean",
    "xi_mean",
    "q_mean",
    "jitter_dates",
    "max_jitter",
    "psi_floored_dates",
    "fallback_dates",
)

TABLE_FILES = {
    "sharpe": "sharpe.csv",
    "ceq": "ceq.csv",
    "turnover": "turnover.csv",
    "return_loss_ew": "return_loss_ew.csv",
    "return_loss_min": "return_loss_min.csv",
    "rank_sharpe": "rank_sharpe.csv",
    "rank_ceq": "rank_ceq.csv",
    "rank_turnover": "rank_turnover.csv",
}


@dataclass
class CellResult:
    dataset: str
    entry: StrategyEntry
    label: str
    path: StrategyPath | None = None
    error: str = ""


@dataclass
class GridResult:
    config: RunConfig
    panels: dict[str, ReturnPanel]
    cells: list[CellResult] = field(default_factory=list)
    dataset_errors: dict[str, str] = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(c.path is None for c in self.cells) + len(self.dataset_errors)


def load_dataset(ds: DatasetConfig) -> ReturnPanel:
    panel = ds.load_panel()
    if ds.min_obs > 1:
        panel = filter_min_history(panel, ds.min_obs)
    return panel


def _ordered_entries(entries) -> list[StrategyEntry]:
    """Table order (stable for repeated ids), with ew always present."""
    entries = list(entries)
    if not any(e.id == "ew" for e in entries):
        entries.insert(0, StrategyEntry("ew"))
    rank = {sid: i for i, sid in enumerate(STRATEGY_IDS)}
    return sorted(entries, key=lambda e: rank[e.id])


def _backtest_config(cfg: RunConfig, ds: DatasetConfig) -> BacktestConfig:
    return BacktestConfig(
        M=cfg.M,
        gamma=cfg.gamma,
        tc=cfg.tc,
        seed=cfg.seed,
        universe_cap=ds.universe_cap,
        charge_entry=cfg.charge_entry,
        factor_names=ds.rrt_factors(),
    )


def _run_cell(args) -> tuple[StrategyPath | None, str]:
    panel, entry, bcfg = args
    try:
        return run_backtest(panel, entry.id, bcfg, entry.params(bcfg.gamma)), ""
    except Exception as exc:  # reported per cell
        return None, f"{type(exc).__name__}: {exc}"


def run_grid(cfg: RunConfig, jobs: int = 1) -> GridResult:
    res = GridResult(cfg, {})
    entries = _ordered_entries(cfg.strategies)
    tasks, keys = [], []
    for ds in cfg.datasets:
        try:
            panel = load_dataset(ds)
            bcfg = _backtest_config(cfg, ds)
        except Exception as exc:
            res.dataset_errors[ds.name] = f"{type(exc).__name__}: {exc}"
            log.error("dataset %s: %s", ds.name, exc)
            continue
        res.panels[ds.name] = panel
        for e in entries:
            tasks.append((panel, e, bcfg))
            keys.append((ds.name, e))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, tasks))
    else:
        outcomes = [_run_cell(t) for t in tasks]
    for (name, e), (path, err) in zip(keys, outcomes):
        if err:
            log.warning("%s / %s failed: %s", name, e.id, err)
        res.cells.append(CellResult(name, e, e.label(cfg.gamma), path, err))
    return res


# ---------------------------------------------------------------------------
# Machine-readable results
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _diag_mean(path: StrategyPath, key: str) -> float | None:
    vals = [d[key] for d in path.diagnostics if key in d]
    return float(np.mean(vals)) if vals else None


def _diag_count(path: StrategyPath, key: str) -> int:
    return sum(1 for d in path.diagnostics if d.get(key, 0.0) > 0)


def _safe(fn, *args):
    try:
        return fn(*args)
    except (stats.DegenerateSeriesError, ValueError, ZeroDivisionError):
        return None


def _in_sample_row(name: str, panel: ReturnPanel, cfg: RunConfig, cap: int) -> dict | None:
    R = panel.excess_returns
    if not np.all(np.isfinite(R)) or panel.N > cap:
        return None
    try:
        w = weights_mv_insample(sample_moments(R)).weights
    except (StrategyError, np.linalg.LinAlgError):
        return None
    r = R @ w
    s = stats.summarize(r, float("nan"), cfg.gamma)
    return {
        "dataset": name,
        "strategy": "mv-insample",
        "label": IN_SAMPLE_LABEL,
        "status": "in-sample",
        "n_obs": s.n_obs,
        "n_assets": panel.N,
        "mean": s.mean,
        "stdev": s.stdev,
        "sharpe": s.sharpe,
        "ceq": s.ceq,
    }


def result_rows(grid: GridResult) -> list[dict]:
    cfg = grid.config
    rows: list[dict] = []
    caps = {ds.name: ds.universe_cap for ds in cfg.datasets}
    for ds in cfg.datasets:
        name = ds.name
        if name in grid.dataset_errors:
            rows.append({"dataset": name, "strategy": "", "label": "", "status": "failed",
                         "error": grid.dataset_errors[name]})
            continue
        panel = grid.panels[name]
        cells = [c for c in grid.cells if c.dataset == name]
        ew = next((c.path for c in cells if c.entry.id == "ew" and c.path is not None), None)
        mn = next((c.path for c in cells if c.entry.id == "min" and c.path is not None), None)
        ew_to = stats.avg_turnover(ew) if ew is not None else None
        avg_u = panel.average_universe_size(cfg.M) if panel.T > cfg.M else None
        for c in cells:
            if c.path is None:
                rows.append({"dataset": name, "strategy": c.entry.id, "label": c.label,
                             "status": "failed", "error": c.error})
                continue
            p = c.path
            s = stats.summarize(p.gross_excess, stats.avg_turnover(p), cfg.gamma)
            row = {
                "dataset": name,
                "strategy": c.entry.id,
                "label": c.label,
                "status": "ok",
                "n_obs": s.n_obs,
                "n_assets": panel.N,
                "avg_universe": None if avg_u is None else min(avg_u, float(ds.universe_cap)),
                "mean": s.mean,
                "stdev": s.stdev,
                "sharpe": s.sharpe,
                "ceq": s.ceq,
                "net_mean": float(np.mean(p.net_excess)),
                "net_stdev": float(np.std(p.net_excess, ddof=1)),
                "avg_turnover": s.avg_turnover,
                "entry_turnover": p.entry_turnover,
                "n_skipped": len(p.skip_events),
                "skip_dates": ";".join(e.date for e in p.skip_events),
                "phi_mean": _diag_mean(p, "phi"),
                "lambda_mean": _diag_mean(p, "lambda"),
                "xi_mean": _diag_mean(p, "xi"),
                "q_mean": _diag_mean(p, "q"),
                "jitter_dates": _diag_count(p, "jitter"),
                "max_jitter": max((d.get("jitter", 0.0) for d in p.diagnostics), default=0.0),
                "psi_floored_dates": _diag_count(p, "psi_floored"),
                "fallback_dates": _diag_count(p, "fallback"),
            }
            if ew is not None and c.entry.id != "ew":
                t = _safe(stats.sr_diff_test, p.gross_excess, ew.gross_excess)
                if t is not None:
                    row["sharpe_z"], row["sharpe_p"] = t.statistic, t.p_value
                t = _safe(stats.ceq_diff_test, p.gross_excess, ew.gross_excess, cfg.gamma)
                if t is not None:
                    row["ceq_z"], row["ceq_p"] = t.statistic, t.p_value
            if ew_to is not None:
                row["rel_turnover"] = _safe(stats.relative_turnover, s.avg_turnover, ew_to)
            if ew is not None:
                row["return_loss_ew"] = _safe(stats.return_loss, p.net_excess, ew.net_excess)
            if mn is not None:
                row["return_loss_min"] = _safe(stats.return_loss, p.net_excess, mn.net_excess)
            rows.append(row)
            if c.entry.id == "ew" and cfg.in_sample:
                ins = _in_sample_row(name, panel, cfg, caps[name])
                if ins is not None:
                    rows.append(ins)
    return rows


def write_results(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(col)) for col in RESULT_COLUMNS])
    return path


def read_results(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected results schema")
        return list(reader)


# ---------------------------------------------------------------------------
# Human-readable tables (rebuilt from results.csv)
# ---------------------------------------------------------------------------

def _num(s: str) -> float | None:
    return float(s) if s not in ("", None) else None


def _cell_value(v: float | None, digits: int) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def _with_p(value: str, p: str) -> str:
    v = _num(value)
    if v is None:
        return "n/a"
    pv = _num(p)
    return f"{v:.4f}" if pv is None else f"{v:.4f} ({pv:.2f})"


def _layout(rows):
    datasets, labels = [], []
    for r in rows:
        if r["dataset"] not in datasets:
            datasets.append(r["dataset"])
        if r["label"] and r["label"] not in labels:
            labels.append(r["label"])
    index = {(r["dataset"], r["label"]): r for r in rows if r["label"]}
    return datasets, labels, index


def build_tables(rows: list[dict[str, str]]) -> dict[str, list[list[str]]]:
    """All human tables as lists of rows (header first)."""
    datasets, labels, index = _layout(rows)
    header = ["strategy", *datasets]
    out_labels = [l for l in labels if l != IN_SAMPLE_LABEL]
    ids = {r["label"]: r["strategy"] for r in rows if r["label"]}

    def table(lbls, fmt):
        body = []
        for l in lbls:
            cells = []
            for d in datasets:
                r = index.get((d, l))
                cells.append("" if r is None else fmt(r))
            body.append([l, *cells])
        return [header, *body]

    def ok(r):
        return r["status"] in ("ok", "in-sample")

    tables = {
        "sharpe": table(labels, lambda r: _with_p(r["sharpe"], r["sharpe_p"]) if ok(r) else "n/a"),
        "ceq": table(labels, lambda r: _with_p(r["ceq"], r["ceq_p"]) if ok(r) else "n/a"),
    }

    def turnover(r):
        if r["status"] != "ok":
            return "n/a"
        if r["strategy"] == "ew":
            return _cell_value(_num(r["avg_turnover"]), 4)
        return _cell_value(_num(r["rel_turnover"]), 2)

    tables["turnover"] = table(out_labels, turnover)
    tables["return_loss_ew"] = table(
        [l for l in out_labels if ids[l] != "ew"],
        lambda r: _cell_value(_num(r["return_loss_ew"]), 4) if r["status"] == "ok" else "n/a",
    )
    tables["return_loss_min"] = table(
        [l for l in out_labels if ids[l] != "min"],
        lambda r: _cell_value(_num(r["return_loss_min"]), 4) if r["status"] == "ok" else "n/a",
    )
    for key, col, higher in (("rank_sharpe", "sharpe", True), ("rank_ceq", "ceq", True),
                             ("rank_turnover", "avg_turnover", False)):
        metric = {}
        for l in out_labels:
            metric[l] = {}
            for d in datasets:
                r = index.get((d, l))
                v = _num(r[col]) if r is not None and r["status"] == "ok" else None
                metric[l][d] = float("nan") if v is None else v
        ranks = stats.rank_strategies(metric, higher_is_better=higher)
        body = [[l, *["" if ranks[l][d] is None else str(ranks[l][d]) for d in datasets]] for l in out_labels]
        tables[key] = [header, *body]
    return tables


def write_tables(results_path, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for key, rows in build_tables(read_results(results_path)).items():
        p = out_dir / TABLE_FILES[key]
        with p.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        written[key] = p
    return written


def format_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def write_paths(grid: GridResult, out_dir) -> None:
    base = Path(out_dir) / "paths"
    for c in grid.cells:
        if c.path is not None:
            safe = c.label.replace("(", "_").replace(")", "").replace(",", "_").replace("=", "")
            c.path.write_csv(base / c.dataset / f"{safe}.csv")


def run_report(cfg: RunConfig, jobs: int = 1) -> tuple[GridResult, Path]:
    grid = run_grid(cfg, jobs)
    out = Path(cfg.output)
    results = write_results(result_rows(grid), out / "results.csv")
    write_tables(results, out)
    write_paths(grid, out)
    return grid, results


# ---------------------------------------------------------------------------
# Data diagnostics
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "dataset", "N", "T", "start", "end",
    "mean_low", "mean_high", "stdev_low", "stdev_high", "min_low", "min_high",
    "max_low", "max_high", "kurtosis_low", "kurtosis_high", "skewness_low", "skewness_high",
)


def diagnose_dataset(name: str, panel: ReturnPanel, alpha: float = 0.01) -> tuple[dict, dict]:
    """Summary-statistic extremes and Ljung-Box rejection counts."""
    summ = stats.summary_statistics(panel)
    ex = summ["extremes"]
    srow = {"dataset": name, "N": panel.N, "T": panel.T,
            "start": str(panel.dates[0]), "end": str(panel.dates[-1])}
    for fld in ("mean", "stdev", "min", "max", "kurtosis", "skewness"):
        srow[f"{fld}_low"], srow[f"{fld}_high"] = ex[fld]
    lrow: dict = {"dataset": name, "N": panel.N}
    R = panel.excess_returns
    for h in stats.LJUNG_BOX_LAGS:
        rejected = 0
        for i in range(panel.N):
            try:
                if stats.ljung_box(R[:, i], h).p_value < alpha:
                    rejected += 1
            except (ValueError, stats.DegenerateSeriesError):
                pass
        lrow[f"lag_{h}"] = rejected
    return srow, lrow


def run_diagnose(cfg: RunConfig, out_dir=None) -> tuple[list[dict], list[dict], dict[str, str]]:
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    summaries, lb, errors = [], [], {}
    for ds in cfg.datasets:
        try:
            s, l = diagnose_dataset(ds.name, load_dataset(ds))
        except Exception as exc:
            errors[ds.name] = f"{type(exc).__name__}: {exc}"
            log.error("dataset %s: %s", ds.name, exc)
            continue
        summaries.append(s)
        lb.append(l)
    lb_cols = ("dataset", "N", *[f"lag_{h}" for h in stats.LJUNG_BOX_LAGS])
    for fname, cols, data in (("summary_statistics.csv", SUMMARY_COLUMNS, summaries),
                              ("ljung_box.csv", lb_cols, lb)):
        with (out / fname).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in data:
                w.writerow([_fmt(r.get(c)) for c in cols])
    return summaries, lb, errors


def with_seed(cfg: RunConfig, seed: int | None, out: str | None) -> RunConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, output=Path(out))
    return cfg
