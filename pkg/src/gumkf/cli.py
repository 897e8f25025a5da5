"""Command-line front end: run scenarios, manage seeds and configs, and emit
machine-readable CSV/JSON results.

Numbers are serialized with 17 significant digits so CSVs round-trip double
precision exactly; in --deterministic mode a repeated run produces
byte-identical outputs (the manifest then omits the wall-clock duration).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .core import CapacityError, ConfigError, NumericError, RngStreamPlan
from .particle import marginal_histogram
from .watertank import (
    COMPONENTS,
    SCENARIOS,
    EstimationReport,
    TankConfig,
    scenario,
    simulate,
)

DEFAULT_SEED = 42
OUTDIR_ENV = "GUMKF_OUTDIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args) -> TankConfig:
    if getattr(args, "config", None):
        return TankConfig.load(args.config)
    return TankConfig()


def _outdir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get(OUTDIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest_payload(args, command, config, outputs, started, extra=None):
    payload = {
        "schema_version": 1,
        "tool_version": __version__,
        "command": command,
        "master_seed": args.seed,
        "deterministic": bool(getattr(args, "deterministic", False)),
        "config": config.to_dict(),
        "outputs": sorted(outputs),
        "duration_seconds": (
            None if getattr(args, "deterministic", False) else time.monotonic() - started
        ),
    }
    if extra:
        payload.update(extra)
    return payload


def _add_common(parser):
    parser.add_argument("--config", help="path to a TankConfig JSON file")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed")
    parser.add_argument("--out", help=f"output directory (default ${OUTDIR_ENV} or cwd)")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="serial reduction order and byte-identical outputs",
    )


def _add_estimation(parser):
    parser.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials")
    parser.add_argument("--particles", type=int, default=100_000, help="particle count")
    parser.add_argument("--gamma", type=float, default=0.9, help="resampling tolerance factor")
    parser.add_argument("--threads", type=int, default=1, help="trial-level parallel degree")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gumkf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gumkf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate the water-tank system")
    _add_common(p_sim)

    p_est = sub.add_parser("estimate", help="run one estimation scenario")
    p_est.add_argument("scenario", choices=SCENARIOS)
    _add_common(p_est)
    _add_estimation(p_est)

    p_cmp = sub.add_parser("compare", help="join scenario CSVs into one table")
    p_cmp.add_argument("csvs", nargs="+", help="scenario CSV files to join on t")
    p_cmp.add_argument("--out", help="output directory")
    p_cmp.add_argument("--name", default="compare.csv", help="output file name")

    p_pdf = sub.add_parser(
        "pdf-marginal", help="histogram of a component's marginal PDF at given times"
    )
    p_pdf.add_argument(
        "--scenario",
        default="pf",
        choices=("mc-lkf-uncertain", "mc-ekf", "pf"),
        help="sample-based scenario to draw the marginal from",
    )
    p_pdf.add_argument("--component", default="theta", choices=sorted(COMPONENTS))
    p_pdf.add_argument("--at", required=True, help="comma-separated times in seconds")
    _add_common(p_pdf)
    _add_estimation(p_pdf)
    return parser


def _cmd_simulate(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    outdir = _outdir(args)
    record = simulate(config, RngStreamPlan(args.seed))
    rows = []
    for k in range(config.n_steps + 1):
        y = record.measurements[k - 1] if k >= 1 else float("nan")
        rows.append((record.times[k], record.states[k, 0], record.states[k, 1], y))
    csv_name = "simulation.csv"
    _write_csv(outdir / csv_name, ["t", "xL_true", "xs_true", "y"], rows)
    _write_manifest(
        outdir / "simulation_manifest.json",
        _manifest_payload(args, "simulate", config, [csv_name], started),
    )
    return 0


def _report_rows(report: EstimationReport):
    has_theta = report.theta_est is not None
    header = ["t", "xL_est", "xL_u", "xs_est", "xs_u"]
    if has_theta:
        header += ["theta_est", "theta_u"]
    rows = []
    for k in range(report.times.shape[0]):
        row = [
            report.times[k],
            report.state_est[k, 0],
            report.state_u[k, 0],
            report.state_est[k, 1],
            report.state_u[k, 1],
        ]
        if has_theta:
            row += [report.theta_est[k], report.theta_u[k]]
        rows.append(row)
    return header, rows


def _cmd_estimate(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    outdir = _outdir(args)
    report = scenario(
        args.scenario,
        config,
        RngStreamPlan(args.seed),
        trials=args.trials,
        n_particles=args.particles,
        gamma=args.gamma,
        threads=1 if args.deterministic else args.threads,
    )
    header, rows = _report_rows(report)
    csv_name = f"{args.scenario}.csv"
    _write_csv(outdir / csv_name, header, rows)
    extra = {"scenario": args.scenario, "gamma": args.gamma}
    if args.scenario in ("mc-lkf-uncertain", "mc-ekf"):
        extra["trials"] = args.trials
    if args.scenario == "pf":
        extra["particles"] = args.particles
    _write_manifest(
        outdir / f"{args.scenario}_manifest.json",
        _manifest_payload(args, "estimate", config, [csv_name], started, extra),
    )
    return 0


def _cmd_compare(args) -> int:
    outdir = _outdir(args)
    tables = []
    for name in args.csvs:
        with open(name, "r", newline="", encoding="utf-8") as fh:
            reader = list(csv.reader(fh))
        if not reader or reader[0][0] != "t":
            raise ConfigError(f"{name}: not a scenario CSV (missing t column)")
        tables.append((Path(name).stem, reader[0], reader[1:]))
    t_col = [row[0] for row in tables[0][2]]
    for stem, _, rows in tables[1:]:
        if [row[0] for row in rows] != t_col:
            raise ConfigError(f"{stem}: time column differs; cannot join")
    header = ["t"]
    for stem, head, _ in tables:
        header += [f"{stem}__{col}" for col in head[1:]]
    out_rows = []
    for i, t in enumerate(t_col):
        row = [t]
        for _, _, rows in tables:
            row += rows[i][1:]
        out_rows.append(row)
    with open(outdir / args.name, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(out_rows)
    return 0


def _cmd_pdf_marginal(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    outdir = _outdir(args)
    try:
        times = tuple(float(t) for t in args.at.split(","))
    except ValueError as exc:
        raise ConfigError(f"invalid --at value {args.at!r}") from exc
    report = scenario(
        args.scenario,
        config,
        RngStreamPlan(args.seed),
        trials=args.trials,
        n_particles=args.particles,
        gamma=args.gamma,
        record_at_times=times,
        threads=1 if args.deterministic else args.threads,
    )
    comp = COMPONENTS[args.component]
    outputs = []
    summaries = {}
    for t in times:
        samples, weights = report.marginals[t]
        values = samples[:, comp]
        edges, density = marginal_histogram(values, weights)
        name = f"{args.scenario}_{args.component}_t{t:g}s.csv"
        _write_csv(
            outdir / name,
            ["bin_lo", "bin_hi", "density"],
            zip(edges[:-1], edges[1:], density),
        )
        outputs.append(name)
        mean = float(weights @ values)
        std = float(np.sqrt(weights @ (values - mean) ** 2))
        summaries[f"t={t:g}"] = {"weighted_mean": mean, "weighted_std": std}
    extra = {
        "scenario": args.scenario,
        "component": args.component,
        "times_s": list(times),
        "gamma": args.gamma,
        "summaries": summaries,
    }
    if args.scenario == "pf":
        extra["particles"] = args.particles
    else:
        extra["trials"] = args.trials
    _write_manifest(
        outdir / f"{args.scenario}_{args.component}_marginal_manifest.json",
        _manifest_payload(args, "pdf-marginal", config, outputs, started, extra),
    )
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "compare": _cmd_compare,
    "pdf-marginal": _cmd_pdf_marginal,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and execute; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"gumkf: config error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, CapacityError) as exc:
        print(f"gumkf: numeric failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gumkf: I/O error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
