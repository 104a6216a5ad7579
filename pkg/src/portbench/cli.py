"""Command-line front end: ``portbench run|diagnose|list``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import report
from .config import ConfigError, load_config
from .strategies import CATALOG, PRESETS, make_params

log = logging.getLogger("portbench")


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="portbench", description="Out-of-sample portfolio rule benchmark")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="backtest every strategy on every dataset")
    diag = sub.add_parser("diagnose", help="summary statistics and Ljung-Box counts per dataset")
    for p in (run, diag):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=_seed, help="universe-draw seed (overrides config)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")

    lst = sub.add_parser("list", help="show the strategy catalog")
    lst.add_argument("--json", action="store_true", help="machine-readable output")
    return ap


def catalog_records() -> list[dict]:
    recs = []
    for s in CATALOG:
        p = make_params(s.id)
        recs.append(
            {
                "id": s.id,
                "name": s.name,
                "reference": s.reference,
                "parameters": {k: getattr(p, k) for k in s.tunable},
                "presets": {k: list(PRESETS[k]) for k in s.tunable},
                "needs_factors": s.needs_factors,
            }
        )
    return recs


def cmd_list(as_json: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    recs = catalog_records()
    if as_json:
        json.dump({"strategies": recs, "presets": {k: list(v) for k, v in PRESETS.items()}}, stream, indent=2)
        stream.write("\n")
        return 0
    for r in recs:
        params = ", ".join(f"{k}={v:g} (presets {', '.join(f'{x:g}' for x in r['presets'][k])})"
                           for k, v in r["parameters"].items())
        ref = f" [{r['reference']}]" if r["reference"] else ""
        line = f"{r['id']:<12} {r['name']}{ref}"
        stream.write(line + (f"\n{'':<13}{params}" if params else "") + "\n")
    return 0


def cmd_run(config_path, out=None, seed=None, jobs: int = 1) -> int:
    try:
        cfg = report.with_seed(load_config(config_path), seed, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    if not cfg.datasets:
        log.error("config lists no datasets")
        return 2
    grid, results = report.run_report(cfg, jobs=max(1, jobs))
    n_cells = len(grid.cells) + len(grid.dataset_errors)
    for c in grid.cells:
        if c.path is None:
            print(f"FAILED {c.dataset} / {c.label}: {c.error}", file=sys.stderr)
    for name, err in grid.dataset_errors.items():
        print(f"FAILED dataset {name}: {err}", file=sys.stderr)
    tables = report.build_tables(report.read_results(results))
    print("Sharpe ratios (p-value vs ew):")
    print(report.format_table(tables["sharpe"]))
    print(f"\nresults written to {cfg.output}")
    return 1 if grid.n_failed == n_cells else 0


def cmd_diagnose(config_path, out=None, seed=None) -> int:
    try:
        cfg = report.with_seed(load_config(config_path), seed, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    summaries, lb, errors = report.run_diagnose(cfg)
    for name, err in errors.items():
        print(f"FAILED dataset {name}: {err}", file=sys.stderr)
    for s, l in zip(summaries, lb):
        lags = " ".join(f"{k}={v}" for k, v in l.items() if k.startswith("lag_"))
        print(f"{s['dataset']}: N={s['N']} T={s['T']} ({s['start']}..{s['end']}) Ljung-Box rejections {lags}")
    return 1 if cfg.datasets and len(errors) == len(cfg.datasets) else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        return cmd_list(args.json)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, args.jobs)
    return cmd_diagnose(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
