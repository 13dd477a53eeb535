"""Command-line scenario runner.

``stormrtc validate <config>`` lists findings without simulating.
``stormrtc run <config>`` simulates every requested controller and writes
per-controller logs, duration curves, the comparison table and the MPC
solver diagnostics into the output directory.

Exit codes: 0 success, 2 configuration error, 3 simulation instability.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import metrics as mt
from .config import CONTROLLERS, ConfigError, Scenario, bundled, load
from .errors import InstabilityError
from .plant import LEDGER_COLUMNS, SimulationLog, simulate

log = logging.getLogger("stormrtc")

EXIT_CONFIG = 2
EXIT_INSTABILITY = 3
LOG_COLUMNS = ("time_s", "rain_mm_h", "q_w_m3s", "h_r_m", "q_r_m3s", "u", "h_c_max_m",
               "h_c_outlet_m") + LEDGER_COLUMNS
DIAGNOSTIC_COLUMNS = ("time_s", "iterations", "evaluations", "J0", "J_warm", "J")


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def resolve_config(name: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    path = Path(name)
    if path.exists():
        return path
    try:
        return bundled(name)
    except FileNotFoundError:
        return path


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def log_csv(log_: SimulationLog, decimate: int = 1) -> str:
    cols = [log_.time, log_.rain, log_.q_w, log_.h_r, log_.q_r, log_.u, log_.h_c_max,
            log_.h_c_outlet] + [log_.ledger[k] for k in LEDGER_COLUMNS]
    table = np.column_stack(cols)[::decimate]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in table:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def diagnostics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIAGNOSTIC_COLUMNS)
    for d in rows:
        w.writerow([_fmt(d[k]) for k in DIAGNOSTIC_COLUMNS])
    return buf.getvalue()


def audit_csv(logs: list[SimulationLog]) -> str:
    keys = ("watershed", "pond", "channel", "chain", "rain")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["controller"] + [f"{k}_m3" for k in keys])
    for lg in logs:
        a = lg.audit()
        w.writerow([lg.controller] + [_fmt(a[k]) for k in keys])
    return buf.getvalue()


def _write(path: Path, text: str):
    """Write through a temporary file so readers never see partial output."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def controller_rng(seed: int, name: str) -> np.random.Generator:
    """Per-controller stream, independent of which other controllers run."""
    return np.random.default_rng([seed, CONTROLLERS.index(name)])


def run_scenario(scenario: Scenario, names: list[str] | None = None,
                 seed: int | None = None) -> list[SimulationLog]:
    seed = scenario.seed if seed is None else seed
    logs = []
    for setup in scenario.controllers:
        if names is not None and setup.name not in names:
            continue
        tic = time.perf_counter()
        lg = simulate(scenario.plant, scenario.initial_state(), setup.build(), scenario.forcing,
                      scenario.duration, setup.interval, controller_rng(seed, setup.name))
        log.info("%s: %d steps in %.1f s", setup.name, lg.n_steps, time.perf_counter() - tic)
        logs.append(lg)
    return logs


def write_outputs(scenario: Scenario, logs: list[SimulationLog], out: Path, decimate: int):
    out.mkdir(parents=True, exist_ok=True)
    for lg in logs:
        _write(out / f"log_{lg.controller}.csv", log_csv(lg, decimate))
        _write(out / f"duration_{lg.controller}.csv", mt.duration_curve_csv({
            "q_r_m3s": lg.q_r[::decimate], "h_c_max_m": lg.h_c_max[::decimate],
            "h_r_m": lg.h_r[::decimate]}))
        if lg.controller == "mpc":
            _write(out / "mpc_diagnostics.csv", diagnostics_csv(lg.diagnostics))
    rows = mt.compare(logs, scenario.windows, scenario.h_c_lim)
    _write(out / "metrics.csv", mt.table_csv(rows))
    _write(out / "metrics.txt", mt.table_text(rows))
    _write(out / "audit.csv", audit_csv(logs))
    return rows


def cmd_validate(args) -> int:
    try:
        _, findings = load(resolve_config(args.config))
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    for f in findings:
        print(f)
    if not findings:
        print("ok")
    return EXIT_CONFIG if any(f.level == "error" for f in findings) else 0


def cmd_run(args) -> int:
    try:
        scenario, findings = load(resolve_config(args.config))
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    for f in findings:
        log.warning("%s", f)
    if scenario is None:
        return _fail("config", "; ".join(str(f) for f in findings if f.level == "error"),
                     EXIT_CONFIG)
    names = None
    if args.controllers:
        names = [n.strip() for n in args.controllers.split(",") if n.strip()]
        missing = [n for n in names if n not in {s.name for s in scenario.controllers}]
        if missing:
            return _fail("config", f"controllers not configured: {', '.join(missing)}",
                         EXIT_CONFIG)
    decimate = args.decimate or scenario.decimate
    if decimate < 1:
        return _fail("config", "--decimate must be at least 1", EXIT_CONFIG)
    out = Path(args.out) if args.out else (scenario.out or Path("out") / scenario.name)
    try:
        logs = run_scenario(scenario, names, args.seed)
    except InstabilityError as exc:
        return _fail("instability", str(exc), EXIT_INSTABILITY)
    rows = write_outputs(scenario, logs, out, decimate)
    print(mt.table_text(rows), end="")
    return 0


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stormrtc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a scenario file without simulating")
    v.add_argument("config", help="scenario TOML file or bundled scenario name")
    v.set_defaults(func=cmd_validate)
    r = sub.add_parser("run", help="simulate the scenario's controllers")
    r.add_argument("config", help="scenario TOML file or bundled scenario name")
    r.add_argument("--controllers", help="comma-separated subset, e.g. passive,mpc")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--out", help="output directory")
    r.add_argument("--decimate", type=int, help="write every n-th step to the log CSVs")
    r.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
