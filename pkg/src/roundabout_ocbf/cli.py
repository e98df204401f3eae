"""Command-line front end.

    roundabout-ocbf run SCENARIO [--out-dir DIR] [--seed N] [--dt S]
    roundabout-ocbf experiment PRESET [--scenario FILE] [--out-dir DIR] [--seed N] [--dt S]
    roundabout-ocbf audit LOG [--scenario FILE] [--dt S] [--tol M]

Exit status: 0 on success, 1 when ``audit`` finds violations beyond the
tolerance, 2 for bad input, 3 when a simulation aborts.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ScenarioConfig, parse_scenario, serialize_scenario
from .errors import ConfigurationError, SimulationError
from .experiments import (PRESETS, ExperimentError, export_plot_data, format_comparison,
                          run_experiment)
from .simulation import audit_safety, read_log_csv, run, write_log_csv
from .topology import build_topology


def _load(path: str | None) -> ScenarioConfig:
    return parse_scenario(path) if path else ScenarioConfig()


def cmd_run(args) -> int:
    config = _load(args.scenario)
    changes = {k: v for k, v in (("seed", args.seed), ("dt", args.dt)) if v is not None}
    config = config.with_overrides(**changes)
    name = args.name or (Path(args.scenario).stem if args.scenario else "custom")
    result = run(config, name=name)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.txt").write_text(serialize_scenario(config), encoding="utf-8")
    (out / "report.json").write_text(result.report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(result.report.to_text(), encoding="utf-8")
    write_log_csv(result.log, out / "log.csv")
    export_plot_data(result.log, out / "plot.csv")
    print(result.report.to_text(), end="")
    print(f"wrote {out}/{{scenario.txt,report.json,report.txt,log.csv,plot.csv}}")
    return 0


def cmd_experiment(args) -> int:
    base = parse_scenario(args.scenario) if args.scenario else None
    summary = run_experiment(args.preset, args.out_dir, seed=args.seed, dt=args.dt,
                             base_config=base, write_logs=args.logs)
    print(format_comparison(summary.rows), end="")
    print(f"wrote {len(summary.files)} files to {args.out_dir}")
    return 0


def cmd_audit(args) -> int:
    config = _load(args.scenario)
    dt = args.dt if args.dt is not None else config.dt
    log = read_log_csv(args.log)
    topology = build_topology(config.L, config.L_a)
    res = audit_safety(log, topology, config.phi, config.delta, dt)
    rear, merge = res.max_violation("rear_end"), res.max_violation("merge")
    print(f"rear-end checks {res.n_rear_end}, worst violation {rear:.4f} m")
    print(f"merge checks {res.n_merge}, worst violation {merge:.4f} m")
    bad = res.violations(args.tol)
    for r in bad:
        print(f"  {r.kind} t={r.t:.3f} vehicle {r.uid} behind {r.partner}: {r.value:.4f} m")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roundabout-ocbf",
        description="Coordinated vehicles through a three-leg roundabout.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--out-dir", default=out_default, help="output directory")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--dt", type=float, help="override the control step (s)")

    p = sub.add_parser("run", help="simulate one scenario file")
    p.add_argument("scenario", nargs="?", help="scenario file (defaults when omitted)")
    p.add_argument("--name", help="label used in the report")
    common(p, "out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="run a preset sweep")
    p.add_argument("preset", choices=sorted(PRESETS) + ["custom"])
    p.add_argument("--scenario", help="base scenario the preset variants are applied to")
    p.add_argument("--logs", action="store_true", help="also write each variant's trajectory log")
    common(p, "out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("audit", help="re-check safety constraints on a saved log")
    p.add_argument("log", help="trajectory log CSV written by 'run'")
    p.add_argument("--scenario", help="scenario the log came from (geometry, phi, delta)")
    p.add_argument("--dt", type=float, help="control step of the log (s)")
    p.add_argument("--tol", type=float, default=0.1, help="allowed violation (m)")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (SimulationError, ExperimentError) as err:
        print(f"simulation aborted: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
