"""Command-line front end: one-off runs and the four experiment presets.

Verbs: ``run``, ``sweep-beacon``, ``compare-strategies``,
``sweep-filter-size``, ``taxi``.  Every run writes ``summary.json`` and
``timeseries.csv``; sweeps add a ``sweep.csv`` table.  Exit codes: 0 on
success, 1 on configuration errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, parse_config
from .protocol import Strategy, StrategyConfig
from .simengine import MetricsReport, efficiency_sweep, run, strategy_compare

__all__ = ["main"]


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _emit_run(report: MetricsReport, out_dir: Path) -> None:
    _write_atomic(out_dir / "summary.json", report.to_json())
    _write_atomic(out_dir / "timeseries.csv", report.timeseries_csv())


def _digest(label: str, report: MetricsReport) -> str:
    t = report.totals
    d = report.derived
    delay = d["mean_delay_s"]
    delay_txt = f"{delay:.1f}s" if delay is not None else "n/a"
    return (
        f"{label}: generated={t['generated']} delivered={t['delivered']} "
        f"ratio={d['delivery_ratio']:.3f} efficiency={d['efficiency']:.3f} "
        f"overhead={d['overhead_fraction']:.3f} redundant={t['redundant']} "
        f"mean_delay={delay_txt}"
    )


def _sweep_csv(header, rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def _load_scenario(args) -> ScenarioConfig:
    if args.config is not None:
        sc = parse_config(args.config)
    else:
        sc = ScenarioConfig()
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if args.duration is not None:
        sc = dataclasses.replace(sc, duration=args.duration)
    sc.validate()
    return sc


def _parse_float_list(raw: str, flag: str):
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated numbers, got {raw!r}") from None
    if not values:
        raise ConfigError(f"{flag}: empty list")
    return values


def cmd_run(args) -> int:
    sc = _load_scenario(args)
    report = run(sc)
    out = Path(args.out)
    _emit_run(report, out)
    print(_digest("run", report))
    return 0


def cmd_sweep_beacon(args) -> int:
    sc = _load_scenario(args)
    delays = _parse_float_list(args.delays, "--delays")
    results = efficiency_sweep(sc, delays)
    out = Path(args.out)
    rows = []
    for delay, report in results:
        _emit_run(report, out / f"delay_{delay:g}")
        t = report.totals
        rows.append([f"{delay:g}", repr(report.derived["efficiency"]),
                     t["forwarded"], t["received"], t["delivered"]])
        print(_digest(f"beacon_delay={delay:g}", report))
    _write_atomic(out / "sweep.csv", _sweep_csv(
        ["beacon_delay", "efficiency", "forwarded", "received", "delivered"], rows))
    return 0


def cmd_compare_strategies(args) -> int:
    sc = _load_scenario(args)
    reports = strategy_compare(sc)
    out = Path(args.out)
    rows = []
    for kind, report in reports.items():
        _emit_run(report, out / f"strategy_{kind}")
        _write_atomic(out / f"timeseries_{kind}.csv", report.timeseries_csv())
        t = report.totals
        d = report.derived
        rows.append([kind, t["delivered"], repr(d["delivery_ratio"]),
                     t["redundant"], repr(d["overhead_fraction"])])
        print(_digest(f"strategy {kind}", report))
    _write_atomic(out / "sweep.csv", _sweep_csv(
        ["strategy", "delivered", "delivery_ratio", "redundant", "overhead_fraction"], rows))
    return 0


def cmd_sweep_filter_size(args) -> int:
    sc = _load_scenario(args)
    windows = [int(w) for w in _parse_float_list(args.windows, "--windows")]
    out = Path(args.out)
    rows = []
    for window in windows:
        strat = StrategyConfig(
            kind=sc.strategy.kind,
            window_n=window,
            small_n=min(sc.strategy.small_n, max(1, window - 1)),
            received_j=sc.strategy.received_j,
            p_target=sc.strategy.p_target,
        )
        run_sc = dataclasses.replace(sc, strategy=strat)
        run_sc.validate()
        report = run(run_sc)
        _emit_run(report, out / f"window_{window}")
        t = report.totals
        rows.append([window, t["delivered"], t["redundant"], t["received"]])
        print(_digest(f"window_n={window}", report))
    _write_atomic(out / "sweep.csv", _sweep_csv(
        ["window_n", "delivered", "redundant", "received"], rows))
    return 0


def cmd_taxi(args) -> int:
    sc = _load_scenario(args)
    updates = {"mobility": "traces", "source_model": "poisson"}
    if args.traces is not None:
        updates["traces_dir"] = args.traces
    sc = dataclasses.replace(sc, **updates)
    sc.validate()
    report = run(sc)
    out = Path(args.out)
    _emit_run(report, out)
    print(_digest("taxi", report))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bloomdtn",
        description="Epidemic forwarding with Bloom-filter summaries: scenario runner",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario file (flat key = value lines)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: ./out)")
    common.add_argument("--duration", type=float, default=None,
                        help="override the scenario duration in seconds")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="execute one scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-beacon", parents=[common],
                       help="efficiency vs. beacon delay")
    p.add_argument("--delays", default="0.1,0.5,1,2,5",
                   help="comma-separated beacon delays in seconds")
    p.set_defaults(func=cmd_sweep_beacon)

    p = sub.add_parser("compare-strategies", parents=[common],
                       help="run strategies A, B, C on identical mobility")
    p.set_defaults(func=cmd_compare_strategies)

    p = sub.add_parser("sweep-filter-size", parents=[common],
                       help="delivered/redundant counts vs. filter window size")
    p.add_argument("--windows", default="25,50,100,200",
                   help="comma-separated window capacities")
    p.set_defaults(func=cmd_sweep_filter_size)

    p = sub.add_parser("taxi", parents=[common],
                       help="trace-driven scenario with Poisson sources")
    p.add_argument("--traces", default=None,
                   help="directory of per-cab trace files (overrides traces.dir)")
    p.set_defaults(func=cmd_taxi)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
