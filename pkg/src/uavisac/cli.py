"""Batch command-line front end.

Every command writes plain CSV/JSON files into ``--out`` plus a ``manifest.json``
naming the config, seed and package version, so a run can be reproduced from
those alone.  Exit codes: 0 ok, 1 usage or config error, 2 infeasible, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .crb import crb_sum
from .errors import ConfigError, InfeasibleError, NumericError, UavIsacError
from .mission import monte_carlo_mission, run_mission
from .scenario import PLACEMENTS, STRATEGIES, Scenario, load_scenario, scenario_to_dict

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 1, 2, 3
SCHEMA_VERSION = 1

TRAJECTORY_COLUMNS = ("index", "stage", "x", "y", "speed", "is_hover", "hover_count")
TRACE_COLUMNS = ("stage", "iteration", "crb", "rate", "objective", "step", "status")
RUN_COLUMNS = ("run", "estimate_x", "estimate_y", "error_sq", "avg_rate", "crb_true", "n_hovers", "energy_j")
SWEEP_COLUMNS = ("axis", "value", "strategy", "eta", "runs", "mse", "crb", "avg_rate", "hover_count", "runtime_s")
CRB_MAP_COLUMNS = ("x", "y", "crb_sum", "singular")
SWEEP_AXES = ("e_tot_kj", "eta", "a", "n_stg")
SINGULAR_SENTINEL = -1.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which here means "infeasible"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ scenario


def _float_list(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None
    if not values:
        raise UsageError("empty value list")
    return values


def build_scenario(args) -> Scenario:
    sc = load_scenario(args.config) if args.config else Scenario()
    experiment, energy, system = {}, {}, {}
    if args.eta is not None:
        experiment["eta"] = args.eta
    if args.n_stg is not None:
        experiment["n_stg"] = args.n_stg
    if args.n_tot is not None:
        experiment["n_tot"] = args.n_tot
    if args.runs is not None:
        experiment["runs"] = args.runs
    if args.placement is not None:
        experiment["placement"] = args.placement
    if getattr(args, "strategy", None) and "," not in args.strategy:
        experiment["strategy"] = args.strategy
    if args.e_tot_kj is not None:
        energy["e_tot"] = args.e_tot_kj * 1e3
    if args.a is not None:
        system["a"] = args.a
    changes = {"experiment": experiment, "energy": energy, "sys": system}
    if args.seed is not None:
        changes["seed"] = args.seed
    try:
        return sc.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


def _manifest(out: Path, args, sc: Scenario, files: list[str]) -> None:
    config_hash = None
    if args.config:
        config_hash = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()
    _write_json(
        out / "manifest.json",
        {
            "command": args.command,
            "config": str(args.config) if args.config else None,
            "config_sha256": config_hash,
            "seed": sc.seed,
            "version": __version__,
            "schema_version": SCHEMA_VERSION,
            "scenario": scenario_to_dict(sc),
            "files": sorted(files),
        },
    )


# ------------------------------------------------------------------ commands


def trajectory_rows(report) -> list[dict]:
    traj = report.trajectory
    counts = np.bincount(traj.hover_indices, minlength=len(traj))
    return [
        {
            "index": i + 1,
            "stage": int(traj.stage_of[i]),
            "x": float(traj.waypoints[i, 0]),
            "y": float(traj.waypoints[i, 1]),
            "speed": float(traj.speeds[i]),
            "is_hover": bool(counts[i] > 0),
            "hover_count": int(counts[i]),
        }
        for i in range(len(traj))
    ]


def trace_rows(report) -> list[dict]:
    return [dict(rec, stage=s.stage) for s in report.stages for rec in s.trace]


def cmd_optimize(args) -> list[str]:
    sc = build_scenario(args)
    out = _out_dir(args)
    rep = run_mission(sc, seed=sc.seed)
    _write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, trajectory_rows(rep))
    _write_csv(out / "trace.csv", TRACE_COLUMNS, trace_rows(rep))
    _write_json(out / "summary.json", rep.to_dict(with_traces=False))
    files = ["trajectory.csv", "trace.csv", "summary.json"]
    _manifest(out, args, sc, files)
    print(
        f"{rep.strategy}: {rep.n_waypoints} waypoints, {rep.n_hovers} hovers, "
        f"error^2 {rep.error_sq:.4g} m^2, avg rate {rep.avg_rate:.4g} bit/s, energy {rep.energy['total']:.1f} J"
    )
    return files


def cmd_simulate(args) -> list[str]:
    sc = build_scenario(args)
    out = _out_dir(args)
    exp = sc.experiment
    stats = monte_carlo_mission(sc, exp.strategy, exp.runs, seed=sc.seed, keep_reports=True)
    rows = [
        {
            "run": r.run,
            "estimate_x": r.estimate[0],
            "estimate_y": r.estimate[1],
            "error_sq": r.error_sq,
            "avg_rate": r.avg_rate,
            "crb_true": r.crb_true,
            "n_hovers": r.n_hovers,
            "energy_j": r.energy["total"],
        }
        for r in stats.reports
    ]
    _write_csv(out / "runs.csv", RUN_COLUMNS, rows)
    summary = stats.row()
    summary.pop("runtime_s")
    _write_json(out / "summary.json", summary)
    files = ["runs.csv", "summary.json"]
    _manifest(out, args, sc, files)
    print(f"{stats.strategy}: mse {stats.mse:.4g} m^2 over {stats.runs} runs ({stats.runtime_s:.1f} s)")
    return files


def _sweep_point(task):
    sc, axis, value, strategy = task
    kwargs = {}
    if axis == "eta":
        kwargs["eta"] = value
    elif axis == "n_stg":
        kwargs["n_stg"] = int(value)
    stats = monte_carlo_mission(sc, strategy, sc.experiment.runs, seed=sc.seed, **kwargs)
    return {
        "axis": axis,
        "value": value,
        "strategy": strategy,
        "eta": stats.eta,
        "runs": stats.runs,
        "mse": stats.mse,
        "crb": stats.crb_true,
        "avg_rate": stats.avg_rate,
        "hover_count": stats.hover_count,
        "runtime_s": stats.runtime_s,
    }


def _sweep_scenario(sc: Scenario, axis: str, value: float) -> Scenario:
    if axis == "e_tot_kj":
        return sc.replace(energy={"e_tot": value * 1e3})
    if axis == "a":
        return sc.replace(sys={"a": value})
    if axis == "eta":
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"eta value {value} outside [0, 1]")
        return sc
    if value != int(value) or value < 1:
        raise ConfigError(f"n_stg value {value} is not a positive integer")
    return sc


def cmd_sweep(args) -> list[str]:
    values = _float_list(args.values)
    strategies = [s.strip() for s in (args.strategy or "").split(",") if s.strip()]
    sc = build_scenario(args)
    strategies = strategies or [sc.experiment.strategy]
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    out = _out_dir(args)
    tasks = [(_sweep_scenario(sc, args.axis, v), args.axis, v, s) for v in values for s in strategies]
    t0 = time.perf_counter()
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    for r in rows:
        print(
            f"{args.axis}={_fmt(r['value'])} {r['strategy']}: mse {r['mse']:.4g} crb {r['crb']:.4g} "
            f"rate {r['avg_rate']:.4g} ({r['runtime_s']:.1f} s)",
            file=sys.stderr,
        )
    print(f"sweep finished in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    files = ["sweep.csv"]
    _manifest(out, args, sc, files)
    return files


def parse_hovers(text: str) -> np.ndarray:
    """``"x,y; x,y; ..."`` or a trajectory CSV written by ``optimize`` (its hover rows)."""
    path = Path(text)
    if path.suffix == ".csv" and path.is_file():
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "is_hover" not in rows[0]:
            raise UsageError(f"{path} is not a trajectory CSV")
        pts = []
        for r in rows:
            pts.extend([[float(r["x"]), float(r["y"])]] * int(r.get("hover_count") or r["is_hover"]))
        return np.array(pts, dtype=float).reshape(-1, 2)
    pts = []
    for chunk in text.split(";"):
        if chunk.strip():
            xy = _float_list(chunk)
            if len(xy) != 2:
                raise UsageError(f"hover {chunk!r} needs exactly two coordinates")
            pts.append(xy)
    if not pts:
        raise UsageError("no hovering points given")
    return np.array(pts, dtype=float)


def crb_map_rows(hovers: np.ndarray, sc: Scenario, resolution: float) -> list[dict]:
    if not resolution > 0:
        raise UsageError("resolution must be positive")
    # cell centres, so halving the resolution gives exactly four times the rows
    xs = (np.arange(int(math.floor(sc.sys.lx / resolution + 1e-9))) + 0.5) * resolution
    ys = (np.arange(int(math.floor(sc.sys.ly / resolution + 1e-9))) + 0.5) * resolution
    rows = []
    for x in xs:
        for y in ys:
            try:
                value, singular = crb_sum(hovers, (x, y), sc).crb_sum, False
            except NumericError:
                value, singular = SINGULAR_SENTINEL, True
            rows.append({"x": float(x), "y": float(y), "crb_sum": value, "singular": singular})
    return rows


def cmd_crb_map(args) -> list[str]:
    sc = build_scenario(args)
    hovers = parse_hovers(args.hovers)
    out = _out_dir(args)
    rows = crb_map_rows(hovers, sc, args.resolution)
    _write_csv(out / "crb_map.csv", CRB_MAP_COLUMNS, rows)
    files = ["crb_map.csv"]
    _manifest(out, args, sc, files)
    print(f"{len(rows)} grid cells, {sum(r['singular'] for r in rows)} singular")
    return files


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML scenario file")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--eta", type=float, help="sensing weight in [0, 1]")
    common.add_argument("--e-tot-kj", dest="e_tot_kj", type=float, help="total energy budget in kJ")
    common.add_argument("--n-stg", dest="n_stg", type=int, help="waypoints per stage")
    common.add_argument("--n-tot", dest="n_tot", type=int, help="fix the total waypoint count")
    common.add_argument("--a", type=float, help="measurement-noise scale")
    common.add_argument("--seed", type=int)
    common.add_argument("--runs", type=int, help="Monte-Carlo repetitions")
    common.add_argument("--placement", choices=PLACEMENTS, help="fixed geometry or uniform redraw per run")

    p = _Parser(prog="uavisac", description="UAV sensing-and-communication trajectory design")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("optimize", parents=[common], help="design and fly one mission")
    o.add_argument("--strategy", choices=STRATEGIES)
    s = sub.add_parser("simulate", parents=[common], help="Monte-Carlo statistics of one strategy")
    s.add_argument("--strategy", choices=STRATEGIES)
    w = sub.add_parser("sweep", parents=[common], help="Monte-Carlo table over one parameter")
    w.add_argument("--axis", required=True, choices=SWEEP_AXES)
    w.add_argument("--values", required=True, help="comma separated sweep values")
    w.add_argument("--strategy", help="comma separated strategies (default: the configured one)")
    w.add_argument("--workers", type=int, default=1)
    c = sub.add_parser("crb-map", parents=[common], help="CRB over a grid of candidate target positions")
    c.add_argument("--hovers", required=True, help='"x,y; x,y; ..." or a trajectory CSV')
    c.add_argument("--resolution", type=float, default=25.0, help="grid step in m")
    return p


COMMANDS = {"optimize": cmd_optimize, "simulate": cmd_simulate, "sweep": cmd_sweep, "crb-map": cmd_crb_map}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as done:  # --help, --version and argument errors
        return int(done.code or 0)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"uavisac: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"uavisac: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UavIsacError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"uavisac: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
