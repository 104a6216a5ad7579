"""Monthly return panels: loading, validation, history filters and the
per-date investable universe."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

DEFAULT_SENTINELS = (-99.99, -999.0)


class PanelError(ValueError):
    """Malformed or unusable return data."""


@dataclass(frozen=True)
class PanelLayout:
    """Column layout of a delimited return file.

    ``asset_columns=None`` means every column that is not the date, a
    factor or the risk-free column. A column may be listed both as an
    asset and as a factor (e.g. MKT in the Industry dataset).
    """

    date_column: str = "date"
    asset_columns: tuple[str, ...] | None = None
    factor_columns: tuple[str, ...] = ()
    rf_column: str | None = None
    percent: bool = False
    subtract_rf: bool = False
    sentinels: tuple[float, ...] = DEFAULT_SENTINELS
    delimiter: str = ","
    skip_rows: int | None = 0  # None: skip to the first header-like line


def _find_header(lines: list[str], layout: PanelLayout) -> int:
    """First line whose first cell is blank or the date column name and
    whose remaining cells are non-numeric labels (French preambles vary)."""
    for i, rec in enumerate(csv.reader(lines, delimiter=layout.delimiter)):
        cells = [c.strip() for c in rec]
        if len(cells) < 2 or cells[0] not in ("", layout.date_column):
            continue
        labels = [c for c in cells[1:] if c]
        if labels and not any(_is_number(c) for c in labels):
            return i
    raise PanelError("no header row found")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class ReturnPanel:
    dates: np.ndarray  # datetime64[M], strictly increasing by one month
    assets: tuple[str, ...]
    excess_returns: np.ndarray  # T x N, NaN where unavailable
    factors: np.ndarray  # T x K
    factor_names: tuple[str, ...]
    availability: np.ndarray  # T x N bool
    rf: np.ndarray | None = None  # T, decimal

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def N(self) -> int:
        return len(self.assets)

    def date_labels(self) -> list[str]:
        return [str(d) for d in self.dates]

    def nominal_returns(self) -> np.ndarray:
        """Raw returns with the risk-free rate added back (if known)."""
        if self.rf is None:
            return self.excess_returns.copy()
        return self.excess_returns + self.rf[:, None]

    def average_universe_size(self, M: int) -> float:
        """Mean number of assets with a full M-month window over rebalance dates."""
        sizes = [int(full_window_mask(self, t, M).sum()) for t in range(M - 1, self.T - 1)]
        return float(np.mean(sizes)) if sizes else float("nan")


@dataclass(frozen=True)
class UniverseSelection:
    date: np.datetime64
    active_assets: np.ndarray  # sorted panel column indices
    seed: int


def parse_month(text: str) -> np.datetime64:
    s = text.strip()
    if len(s) == 6 and s.isdigit():
        y, m = int(s[:4]), int(s[4:])
    elif len(s) == 7 and s[4] in "-/" and s[:4].isdigit() and s[5:].isdigit():
        y, m = int(s[:4]), int(s[5:])
    else:
        raise ValueError(f"unrecognized month {text!r} (expected YYYY-MM or YYYYMM)")
    if not 1 <= m <= 12:
        raise ValueError(f"month out of range in {text!r}")
    return np.datetime64(f"{y:04d}-{m:02d}", "M")


def _parse_cell(cell: str, sentinels, lineno: int, col: str) -> float:
    s = cell.strip()
    if s == "" or s.upper() in {"NA", "NAN"}:
        return np.nan
    try:
        v = float(s)
    except ValueError:
        raise PanelError(f"line {lineno}, column {col!r}: cannot parse {cell!r} as a number") from None
    if any(abs(v - x) < 1e-9 for x in sentinels):
        return np.nan
    return v


def load_return_panel(path, layout: PanelLayout = PanelLayout(), min_assets: int = 2) -> ReturnPanel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    try:
        skip = _find_header(lines, layout) if layout.skip_rows is None else layout.skip_rows
    except PanelError as exc:
        raise PanelError(f"{path}: {exc}") from None
    lines = lines[skip:]
    reader = csv.reader(lines, delimiter=layout.delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PanelError(f"{path}: empty file") from None
    # French files leave the date header blank.
    if header and header[0] == "" and layout.date_column not in header:
        header[0] = layout.date_column
    if layout.date_column not in header:
        raise PanelError(f"{path}: no date column {layout.date_column!r}")
    col = {name: i for i, name in enumerate(header)}

    factor_cols = tuple(layout.factor_columns)
    special = {layout.date_column, layout.rf_column}
    if layout.asset_columns is None:
        asset_cols = tuple(h for h in header if h and h not in special and h not in factor_cols)
    else:
        asset_cols = tuple(layout.asset_columns)
    for name in (*asset_cols, *factor_cols, *([layout.rf_column] if layout.rf_column else [])):
        if name not in col:
            raise PanelError(f"{path}: missing column {name!r}")
    if len(asset_cols) < min_assets:
        raise PanelError(f"{path}: need at least {min_assets} asset columns, got {len(asset_cols)}")

    dates, rows = [], []
    needed = [*asset_cols, *factor_cols, *([layout.rf_column] if layout.rf_column else [])]
    for k, rec in enumerate(reader):
        lineno = skip + k + 2
        if not rec or all(c.strip() == "" for c in rec):
            if dates:
                break  # end of the data block
            continue
        try:
            dates.append(parse_month(rec[col[layout.date_column]]))
        except (ValueError, IndexError) as exc:
            raise PanelError(f"line {lineno}: malformed date: {exc}") from None
        vals = []
        for name in needed:
            i = col[name]
            cell = rec[i] if i < len(rec) else ""
            vals.append(_parse_cell(cell, layout.sentinels, lineno, name))
        rows.append(vals)
    if not dates:
        raise PanelError(f"{path}: no data rows")

    data = np.array(rows, dtype=float)
    if layout.percent:
        data = data / 100.0
    dates_arr = np.array(dates, dtype="datetime64[M]")
    steps = np.diff(dates_arr).astype(int)
    if np.any(steps <= 0):
        i = int(np.argmax(steps <= 0))
        raise PanelError(f"dates not strictly increasing at {dates_arr[i + 1]}")
    if np.any(steps != 1):
        i = int(np.argmax(steps != 1))
        raise PanelError(f"non-monthly spacing between {dates_arr[i]} and {dates_arr[i + 1]}")

    na, nf = len(asset_cols), len(factor_cols)
    R = data[:, :na]
    F = data[:, na : na + nf]
    rf = data[:, na + nf] if layout.rf_column else None
    if layout.subtract_rf:
        if rf is None:
            raise PanelError("subtract_rf requested but no rf_column given")
        R = R - rf[:, None]
        # Factor portfolios from the French library are already excess (or
        # zero-cost) returns, so they are left untouched.
    panel = ReturnPanel(
        dates=dates_arr,
        assets=asset_cols,
        excess_returns=R,
        factors=F,
        factor_names=factor_cols,
        availability=np.isfinite(R),
        rf=rf,
    )
    return panel


def filter_min_history(panel: ReturnPanel, min_obs: int) -> ReturnPanel:
    """Drop assets with fewer than ``min_obs`` available observations."""
    if min_obs < 1:
        raise ValueError("min_obs must be >= 1")
    keep = panel.availability.sum(axis=0) >= min_obs
    if not keep.any():
        raise PanelError(f"no asset has at least {min_obs} observations")
    if keep.all():
        return panel
    idx = np.flatnonzero(keep)
    return replace(
        panel,
        assets=tuple(panel.assets[i] for i in idx),
        excess_returns=panel.excess_returns[:, idx],
        availability=panel.availability[:, idx],
    )


def slice_dates(panel: ReturnPanel, start=None, end=None) -> ReturnPanel:
    """Keep months in ``[start, end]`` (inclusive; either bound optional)."""
    keep = np.ones(panel.T, dtype=bool)
    if start is not None:
        keep &= panel.dates >= parse_month(str(start))
    if end is not None:
        keep &= panel.dates <= parse_month(str(end))
    if not keep.any():
        raise PanelError(f"no months between {start} and {end}")
    return replace(
        panel,
        dates=panel.dates[keep],
        excess_returns=panel.excess_returns[keep],
        factors=panel.factors[keep],
        availability=panel.availability[keep],
        rf=None if panel.rf is None else panel.rf[keep],
    )


def full_window_mask(panel: ReturnPanel, t: int, M: int) -> np.ndarray:
    """Assets observed in every month of rows ``t-M+1 .. t``."""
    if t - M + 1 < 0:
        raise PanelError(f"date index {t} has fewer than {M} prior months")
    return panel.availability[t - M + 1 : t + 1].all(axis=0)


def _draw_key(seed: int, date: np.datetime64, asset: str) -> int:
    h = hashlib.blake2b(f"{seed}|{date}|{asset}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def select_universe(
    panel: ReturnPanel,
    date,
    M: int,
    cap: int = 60,
    seed: int = 0,
    require_next: bool = False,
) -> UniverseSelection:
    """Assets with a complete M-month history ending at ``date``.

    When more than ``cap`` qualify, ``cap`` of them are drawn uniformly
    without replacement. The draw ranks assets by a hash of
    (seed, date, asset id), so it is stateless, reproducible and tied to
    column identifiers rather than positions. ``require_next`` additionally
    demands an observation in the following month (the holding month).
    """
    t = _date_index(panel, date)
    mask = full_window_mask(panel, t, M)
    if require_next and t + 1 < panel.T:
        mask = mask & panel.availability[t + 1]
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise PanelError(f"no asset has a full {M}-month window at {panel.dates[t]}")
    if idx.size > cap:
        d = panel.dates[t]
        keys = np.array([_draw_key(seed, d, panel.assets[i]) for i in idx], dtype=np.uint64)
        chosen = idx[np.argsort(keys, kind="stable")[:cap]]
        idx = np.sort(chosen)
    return UniverseSelection(date=panel.dates[t], active_assets=idx, seed=seed)


def _date_index(panel: ReturnPanel, date) -> int:
    if isinstance(date, (int, np.integer)):
        t = int(date)
        if not 0 <= t < panel.T:
            raise IndexError(f"date index {t} outside panel")
        return t
    d = parse_month(date) if isinstance(date, str) else np.datetime64(date, "M")
    hits = np.flatnonzero(panel.dates == d)
    if hits.size == 0:
        raise PanelError(f"{d} not in panel")
    return int(hits[0])


def panel_from_arrays(
    returns,
    start: str = "2000-01",
    assets=None,
    factors=None,
    factor_names=None,
    rf=None,
) -> ReturnPanel:
    """Build a panel from in-memory arrays (tests and simulations)."""
    R = np.asarray(returns, dtype=float)
    T, N = R.shape
    dates = parse_month(start) + np.arange(T)
    if assets is None:
        assets = tuple(f"A{i}" for i in range(N))
    F = np.zeros((T, 0)) if factors is None else np.asarray(factors, dtype=float).reshape(T, -1)
    if factor_names is None:
        factor_names = tuple(f"F{j}" for j in range(F.shape[1]))
    return ReturnPanel(
        dates=dates.astype("datetime64[M]"),
        assets=tuple(assets),
        excess_returns=R,
        factors=F,
        factor_names=tuple(factor_names),
        availability=np.isfinite(R),
        rf=None if rf is None else np.asarray(rf, dtype=float),
    )


def merge_panels(panels, subtract_rf=None) -> ReturnPanel:
    """Join panels on their common months (e.g. French portfolio and factor
    files). Asset and factor columns are concatenated; the first risk-free
    series found is kept. ``subtract_rf[k]`` converts panel k's asset
    returns to excess returns with that merged series.
    """
    panels = list(panels)
    if not panels:
        raise PanelError("nothing to merge")
    flags = list(subtract_rf) if subtract_rf is not None else [False] * len(panels)
    common = panels[0].dates
    for p in panels[1:]:
        common = np.intersect1d(common, p.dates)
    if common.size == 0:
        raise PanelError("panels share no months")
    steps = np.diff(common).astype(int)
    if np.any(steps != 1):
        i = int(np.argmax(steps != 1))
        raise PanelError(f"non-monthly spacing between {common[i]} and {common[i + 1]} after merge")
    rows = [np.searchsorted(p.dates, common) for p in panels]
    rf = next((p.rf[r] for p, r in zip(panels, rows) if p.rf is not None), None)
    assets, blocks, factor_names, fblocks = [], [], [], []
    for p, r, flag in zip(panels, rows, flags):
        R = p.excess_returns[r]
        if flag:
            if rf is None:
                raise PanelError("subtract_rf requested but no source has a risk-free column")
            R = R - rf[:, None]
        assets.extend(p.assets)
        blocks.append(R)
        for j, name in enumerate(p.factor_names):
            if name not in factor_names:
                factor_names.append(name)
                fblocks.append(p.factors[r, j])
    if len(set(assets)) != len(assets):
        raise PanelError("duplicate asset names across merged files")
    if len(assets) < 2:
        raise PanelError(f"need at least 2 assets after merge, got {len(assets)}")
    R = np.hstack(blocks)
    F = np.column_stack(fblocks) if fblocks else np.zeros((len(common), 0))
    return ReturnPanel(
        dates=common.astype("datetime64[M]"),
        assets=tuple(assets),
        excess_returns=R,
        factors=F,
        factor_names=tuple(factor_names),
        availability=np.isfinite(R),
        rf=rf,
    )
