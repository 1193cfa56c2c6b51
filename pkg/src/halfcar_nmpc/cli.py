"""Command-line front end: ``run`` and ``validate``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, RunConfig, load
from .errors import HalfCarError
from .mpc import ClosedLoopResult, ControllerMode, StepRecord, improvement, run_closed_loop

log = logging.getLogger("halfcar_nmpc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

STATE_NAMES = ("x1", "x2", "x3", "x4", "v1", "v2", "v3", "v4")
TRACE_HEADER = (
    ["step", "time"]
    + [f"plant_{n}" for n in STATE_NAMES]
    + [f"meas_{n}" for n in STATE_NAMES]
    + ["u1", "u2", "stage_cost", "cum_cost", "solver_iterations", "solver_ok",
       "structure_change", "clamped", "fallback"]
)
SUMMARY_HEADER = ["mode", "total_cost", "improvement_pct", "structure_changes", "clamps",
                  "fallbacks", "solver_failures"]
TIMING_HEADER = ["mode", "precompute_count", "precompute_max_s", "precompute_mean_s",
                 "budget_s", "within_budget", "min_margin_s"]
SUMMARY_NOTE = "# closed-loop cost accumulated along the plant trajectory"


def fmt(x) -> str:
    if isinstance(x, (bool, int)):
        return str(int(x))
    return f"{float(x):.17g}"


def trace_row(r: StepRecord) -> list[str]:
    return (
        [str(r.step), fmt(r.time)]
        + [fmt(v) for v in r.plant]
        + [fmt(v) for v in r.measured]
        + [fmt(r.u[0]), fmt(r.u[1]), fmt(r.stage_cost), fmt(r.cum_cost),
           str(r.solver_iterations), fmt(r.solver_ok), fmt(r.structure_change),
           str(r.clamped), fmt(r.fallback)]
    )


class _ModeWriter:
    """Streams trace, jerk and timing rows for one mode."""

    def __init__(self, out: Path, mode: ControllerMode):
        self._files = [
            open(out / f"{name}_{mode.value}.csv", "w", newline="")
            for name in ("trace", "jerk", "timing")
        ]
        self.trace, self.jerk, self.timing = (csv.writer(f, lineterminator="\n") for f in self._files)
        self.trace.writerow(TRACE_HEADER)
        self.jerk.writerow(["time", "m3_jerk"])
        self.timing.writerow(["step", "precompute_s"])

    def __call__(self, rec: StepRecord, t, jerk) -> None:
        self.trace.writerow(trace_row(rec))
        self.jerk.writerows([fmt(a), fmt(b)] for a, b in zip(t, jerk))
        self.timing.writerow([str(rec.step), fmt(rec.precompute_s)])
        for f in self._files:
            f.flush()

    def close(self) -> None:
        for f in self._files:
            f.close()


def summary_rows(results: dict[ControllerMode, ClosedLoopResult]) -> list[list[str]]:
    ref = results.get(ControllerMode.NOMINAL)
    rows = []
    for mode, res in results.items():
        s = res.summary
        imp = "" if ref is None else fmt(improvement(ref.total_cost, res.total_cost))
        rows.append([mode.value, fmt(res.total_cost), imp] + [
            str(s[k]) for k in ("structure_changes", "clamps", "fallbacks", "solver_failures")
        ])
    return rows


def timing_rows(results: dict[ControllerMode, ClosedLoopResult]) -> list[list[str]]:
    rows = []
    for mode, res in results.items():
        t = res.timing
        rows.append([mode.value, str(t.count), fmt(t.max), fmt(t.mean), fmt(t.budget),
                     str(t.within_budget), fmt(t.margin)])
    return rows


def _write_csv(path: Path, header, rows, note: Optional[str] = None) -> None:
    with open(path, "w", newline="") as f:
        if note:
            f.write(note + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def execute(rc: RunConfig) -> dict[ControllerMode, ClosedLoopResult]:
    """Run every configured mode and write all output files."""
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    results: dict[ControllerMode, ClosedLoopResult] = {}
    for mode in rc.modes:
        writer = _ModeWriter(out, mode)
        try:
            log.info("running %s for %d steps", mode.value, rc.mpc.run_length)
            results[mode] = run_closed_loop(rc.mpc, rc.scenario, mode, on_step=writer)
        finally:
            writer.close()
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summary_rows(results), SUMMARY_NOTE)
    _write_csv(out / "timing_summary.csv", TIMING_HEADER, timing_rows(results))
    return results


def cmd_run(args) -> int:
    try:
        rc = load(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        results = execute(rc)
    except HalfCarError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for row in summary_rows(results):
        print(",".join(row))
    budget = rc.mpc.prediction_lead * rc.mpc.ocp.sampling_period_T
    for res in results.values():
        t = res.timing
        print(f"{res.mode.value}: precompute max {t.max:.4f} s, mean {t.mean:.4f} s, "
              f"{t.within_budget}/{t.count} within the {budget:g} s budget")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        load(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(line)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="halfcar-nmpc",
        description="Closed-loop NMPC of a half car with sensitivity-based control updates.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, text in (
        ("run", cmd_run, "run the configured controller modes and write CSV output"),
        ("validate", cmd_validate, "check a config file without running it"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="path to the INI run configuration")
        p.add_argument("--seed", type=int, default=None, help="override [mpc] seed")
        p.add_argument("--out", default=None, help="override [output] directory")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
