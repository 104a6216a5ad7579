"""Run configuration (TOML)."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from dataclasses import replace

from .data import DEFAULT_SENTINELS, PanelLayout, ReturnPanel, load_return_panel, merge_panels, parse_month, slice_dates
from .strategies import STRATEGY_IDS, make_params, strategy_label


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    path: Path
    layout: PanelLayout
    factor_model: str = "all"  # "capm" | "carhart" | "all"
    factors: tuple[str, ...] | None = None
    universe_cap: int = 60
    min_obs: int = 1
    # extra (path, layout) files joined on date, e.g. a separate factor file
    sources: tuple[tuple[Path, PanelLayout], ...] = ()
    start: str | None = None  # inclusive month bounds, e.g. "1963-06"
    end: str | None = None

    def files(self) -> tuple[tuple[Path, PanelLayout], ...]:
        return ((self.path, self.layout), *self.sources)

    @property
    def factor_columns(self) -> tuple[str, ...]:
        cols: list[str] = []
        for _, lay in self.files():
            cols.extend(c for c in lay.factor_columns if c not in cols)
        return tuple(cols)

    def load_panel(self) -> ReturnPanel:
        """Read the file(s). A source asking for ``subtract_rf`` without its
        own risk-free column uses the risk-free series of the merged panel."""
        if not self.sources:
            panel = load_return_panel(self.path, self.layout)
        else:
            panels, deferred = [], []
            for path, lay in self.files():
                defer = lay.subtract_rf and lay.rf_column is None
                panels.append(load_return_panel(path, replace(lay, subtract_rf=False) if defer else lay, min_assets=1))
                deferred.append(defer)
            panel = merge_panels(panels, deferred)
        if self.start is None and self.end is None:
            return panel
        return slice_dates(panel, self.start, self.end)

    def rrt_factors(self) -> tuple[str, ...] | None:
        if self.factors is not None:
            return self.factors
        cols = self.factor_columns
        if self.factor_model == "capm":
            if not cols:
                raise ConfigError(f"{self.name}: capm needs a market factor column")
            return (cols[0],)
        if self.factor_model == "carhart":
            if len(cols) != 4:
                raise ConfigError(f"{self.name}: carhart needs exactly 4 factor columns")
            return tuple(cols)
        return None


@dataclass(frozen=True)
class StrategyEntry:
    id: str
    delta: float | None = None
    omega: int | None = None
    tau: float | None = None

    def params(self, gamma: float):
        return make_params(self.id, gamma=gamma, delta=self.delta, omega=self.omega, tau=self.tau)

    def label(self, gamma: float) -> str:
        return strategy_label(self.id, self.params(gamma))


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[DatasetConfig, ...]
    strategies: tuple[StrategyEntry, ...]
    M: int = 240
    gamma: float = 1.0
    tc: float = 0.005
    seed: int = 0
    output: Path = Path("results")
    benchmarks: tuple[str, ...] = ("ew", "min")
    in_sample: bool = True
    charge_entry: bool = True
    source: Path | None = field(default=None, compare=False)


_DATASET_KEYS = {"name", "path", "layout", "sources", "start", "end", "factor_model", "factors", "universe_cap", "min_obs"}
_LAYOUT_KEYS = {
    "date_column", "asset_columns", "factor_columns", "rf_column", "percent",
    "subtract_rf", "sentinels", "delimiter", "skip_rows",
}
_TOP_KEYS = {
    "M", "gamma", "tc", "seed", "output", "benchmarks", "in_sample", "charge_entry",
    "universe_cap", "min_obs", "datasets", "strategies",
}


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _month(d: dict, key: str) -> str | None:
    if key not in d:
        return None
    try:
        return str(parse_month(str(d[key])))
    except Exception as exc:
        raise ConfigError(f"dataset {d['name']!r}: bad {key} month {d[key]!r}") from exc


def _file_entry(d: dict, base: Path, require_data: bool, where: str) -> tuple[Path, PanelLayout]:
    lay = dict(d.get("layout", {}))
    _check_keys(lay, _LAYOUT_KEYS, f"{where} layout")
    for key in ("asset_columns", "factor_columns", "sentinels"):
        if key in lay and lay[key] is not None:
            lay[key] = tuple(lay[key])
    lay.setdefault("sentinels", DEFAULT_SENTINELS)
    if lay.get("skip_rows") == "auto":
        lay["skip_rows"] = None
    p = Path(d["path"])
    if not p.is_absolute():
        p = base / p
    if require_data and not p.exists():
        raise ConfigError(f"{where}: file not found: {p}")
    try:
        return p, PanelLayout(**lay)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad layout: {exc}") from exc


def load_config(path, require_data: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, base=path.parent, require_data=require_data, source=path)


def parse_config(raw: dict, base: Path = Path("."), require_data: bool = True, source=None) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "config")
    default_cap = int(raw.get("universe_cap", 60))
    default_min_obs = int(raw.get("min_obs", 1))
    datasets = []
    for i, d in enumerate(raw.get("datasets", [])):
        _check_keys(d, _DATASET_KEYS, f"datasets[{i}]")
        if "name" not in d or "path" not in d:
            raise ConfigError(f"datasets[{i}]: 'name' and 'path' are required")
        p, layout = _file_entry(d, base, require_data, f"dataset {d['name']!r}")
        sources = []
        for j, src in enumerate(d.get("sources", [])):
            _check_keys(src, {"path", "layout"}, f"datasets[{i}].sources[{j}]")
            if "path" not in src:
                raise ConfigError(f"datasets[{i}].sources[{j}]: 'path' is required")
            sources.append(_file_entry(src, base, require_data, f"dataset {d['name']!r}"))
        fm = d.get("factor_model", "all")
        if fm not in ("capm", "carhart", "all"):
            raise ConfigError(f"dataset {d['name']!r}: factor_model must be capm, carhart or all")
        datasets.append(
            DatasetConfig(
                name=str(d["name"]),
                path=p,
                layout=layout,
                factor_model=fm,
                factors=tuple(d["factors"]) if "factors" in d else None,
                universe_cap=int(d.get("universe_cap", default_cap)),
                min_obs=int(d.get("min_obs", default_min_obs)),
                sources=tuple(sources),
                start=_month(d, "start"),
                end=_month(d, "end"),
            )
        )
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique")

    if "strategies" in raw:
        entries = []
        for i, s in enumerate(raw["strategies"]):
            if isinstance(s, str):
                s = {"id": s}
            _check_keys(s, {"id", "delta", "omega", "tau"}, f"strategies[{i}]")
            if s.get("id") not in STRATEGY_IDS:
                raise ConfigError(f"strategies[{i}]: unknown id {s.get('id')!r}")
            entries.append(StrategyEntry(**s))
    else:
        entries = [StrategyEntry(sid) for sid in STRATEGY_IDS]

    gamma = float(raw.get("gamma", 1.0))
    labels = [e.label(gamma) for e in entries]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate strategy entries")
    out = Path(raw.get("output", "results"))
    if not out.is_absolute():
        out = base / out
    cfg = RunConfig(
        datasets=tuple(datasets),
        strategies=tuple(entries),
        M=int(raw.get("M", 240)),
        gamma=gamma,
        tc=float(raw.get("tc", 0.005)),
        seed=int(raw.get("seed", 0)),
        output=out,
        benchmarks=tuple(raw.get("benchmarks", ("ew", "min"))),
        in_sample=bool(raw.get("in_sample", True)),
        charge_entry=bool(raw.get("charge_entry", True)),
        source=source,
    )
    for b in cfg.benchmarks:
        if b not in ("ew", "min"):
            raise ConfigError(f"benchmark must be 'ew' or 'min', got {b!r}")
    if cfg.M < 2 or cfg.tc < 0 or cfg.gamma <= 0:
        raise ConfigError("need M >= 2, tc >= 0, gamma > 0")
    return cfg
