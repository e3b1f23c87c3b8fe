"""Command-line front end.

    issparabolic validate       --scenario FILE
    issparabolic simulate       --scenario FILE --out DIR
    issparabolic verify-iss     --scenario FILE --out DIR [--tol X]
    issparabolic trace-constant --scenario FILE
    issparabolic sweep          --scenario FILE --out DIR --multipliers a,b,c [--tol X]
    issparabolic example        [--out DIR]

Exit codes: 0 success, 1 load/usage error, 2 validation failure,
3 solver failure (partial output retained), 4 bound violated,
5 trace-estimator non-convergence.  No other codes escape.

All CSV outputs are deterministic functions of the scenario file: fixed
iteration orders, no timestamps inside data rows.  The environment
variable ISSPARABOLIC_THREADS caps sweep fan-out (default 1).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .bounds import InfeasibleConstantsError, write_bound_csv
from .exprlang import Mul, Num
from .geometry import TraceEstimationError, estimate_trace_constant
from .problem import (
    PsiInversionError,
    ValidationEvaluationError,
    validate_compatibility,
    validate_monotonicity,
    validate_structural,
)
from .scenario import EXAMPLE_SCENARIOS, LoadedScenario, ScenarioError, load_scenario
from .solver import StepFailure, solve, write_snapshots_csv, write_trajectory_csv
from .splitting import run_full_verification, write_report_csv

EXIT_OK = 0
EXIT_LOAD = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_BOUND = 4
EXIT_TRACE = 5

# Fraction of the horizon treated as the settled tail when measuring the
# steady response of a sweep.
_RESPONSE_WINDOW = 0.75


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep the exit-code contract: usage errors are load errors
        raise _UsageError(message)


def _monotonicity_u_range(loaded: LoadedScenario) -> tuple[float, float]:
    """Sample the interior/boundary nonlinearities over the range the
    solution can plausibly reach: a little beyond the closed-form sup
    bound, capped at 1e3 (beyond that, float differences of saturating
    maps underflow and the sampled strictness check loses meaning)."""
    from .bounds import disturbance_magnitudes, max_estimate_robin

    mags = disturbance_magnitudes(
        loaded.spec,
        loaded.grid,
        loaded.timegrid,
        sup_f_override=loaded.sup_f_override,
        sup_d_override=loaded.sup_d_override,
    )
    reach = max(1.0, 1.25 * max_estimate_robin(loaded.spec.constants, loaded.spec.geometry, mags))
    reach = min(reach, 1e3)
    return (-reach, reach)


def _run_validators(loaded: LoadedScenario, samples: int = 200):
    spec = loaded.spec
    u_range = _monotonicity_u_range(loaded)
    reports = {
        "structural": validate_structural(spec, samples),
        "monotonicity_h": validate_monotonicity(
            spec.h, "h", samples, u_range, r_max=spec.geometry.radius, t_max=spec.horizon
        ),
        "monotonicity_psi": validate_monotonicity(spec.psi, "psi", samples, u_range),
        "compatibility": validate_compatibility(spec),
    }
    return reports


def _print_validation(reports) -> bool:
    ok = True
    for name, report in reports.items():
        print(f"[{name}]")
        for line in report.lines():
            print("  " + line)
        ok = ok and report.passed
    return ok


def cmd_validate(args) -> int:
    loaded = load_scenario(args.scenario)
    ok = _print_validation(_run_validators(loaded))
    print("validation:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_simulate(args) -> int:
    loaded = load_scenario(args.scenario)
    os.makedirs(args.out, exist_ok=True)
    try:
        traj = solve(loaded.spec, loaded.grid, loaded.timegrid, loaded.snapshot_stride)
    except StepFailure as exc:
        if exc.trajectory is not None:
            write_trajectory_csv(exc.trajectory, os.path.join(args.out, "trajectory.csv"))
            write_snapshots_csv(exc.trajectory, args.out)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_trajectory_csv(traj, os.path.join(args.out, "trajectory.csv"))
    write_snapshots_csv(traj, args.out)
    print(f"simulated {len(traj.times) - 1} steps; outputs in {args.out}")
    return EXIT_OK


def _verify_pipeline(loaded: LoadedScenario, tol: float | None, out_dir: str) -> int:
    """validate -> split solve -> all checks -> envelope; writes every CSV."""
    os.makedirs(out_dir, exist_ok=True)
    reports = _run_validators(loaded)
    if not all(r.passed for r in reports.values()):
        _print_validation(reports)
        return EXIT_VALIDATION
    tol = loaded.verify_tol if tol is None else tol
    try:
        outcome = run_full_verification(
            loaded.spec,
            loaded.grid,
            loaded.timegrid,
            loaded.snapshot_stride,
            tol=tol,
            sup_f_override=loaded.sup_f_override,
            sup_d_override=loaded.sup_d_override,
            gain_measure=loaded.neumann_gain_measure,
        )
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_report_csv(outcome.report, os.path.join(out_dir, "report.csv"))
    write_trajectory_csv(outcome.run.u_traj, os.path.join(out_dir, "trajectory_u.csv"))
    write_trajectory_csv(outcome.run.v_traj, os.path.join(out_dir, "trajectory_v.csv"))
    write_bound_csv(outcome.envelope, os.path.join(out_dir, "bounds.csv"))
    for line in outcome.report.lines():
        print(line)
    return EXIT_OK if outcome.report.passed else EXIT_BOUND


def cmd_verify_iss(args) -> int:
    loaded = load_scenario(args.scenario)
    return _verify_pipeline(loaded, args.tol, args.out)


def cmd_trace_constant(args) -> int:
    loaded = load_scenario(args.scenario)
    geom = loaded.spec.geometry
    values = {}
    for resolution in (200, 400):
        estimate = estimate_trace_constant(geom, resolution)
        values[resolution] = estimate.value
        print(f"n={geom.dimension} R={geom.radius:g} resolution={resolution}: "
              f"C_trace ~= {estimate.value:.10f}")
    drift = abs(values[400] - values[200]) / values[400]
    print(f"cross-resolution drift: {100.0 * drift:.4f}%")
    print(f"safety factor {loaded.trace_safety_factor:g} -> "
          f"C_trace = {values[400] * loaded.trace_safety_factor:.10f}")
    return EXIT_OK


def _scaled(loaded: LoadedScenario, multiplier: float) -> LoadedScenario:
    spec = dataclasses.replace(loaded.spec, d=Mul(Num(float(multiplier)), loaded.spec.d))
    override = loaded.sup_d_override
    if override is not None:
        override = abs(multiplier) * override
    return dataclasses.replace(loaded, spec=spec, sup_d_override=override)


def cmd_sweep(args) -> int:
    loaded = load_scenario(args.scenario)
    multipliers = args.multipliers
    if not multipliers:
        raise _UsageError("sweep needs --multipliers a,b,c")
    os.makedirs(args.out, exist_ok=True)
    reports = _run_validators(loaded)
    if not all(r.passed for r in reports.values()):
        _print_validation(reports)
        return EXIT_VALIDATION
    tol = loaded.verify_tol if args.tol is None else args.tol

    def one(index_multiplier):
        index, multiplier = index_multiplier
        scaled = _scaled(loaded, multiplier)
        sub_out = os.path.join(args.out, f"m{index}_{multiplier:g}")
        os.makedirs(sub_out, exist_ok=True)
        try:
            outcome = run_full_verification(
                scaled.spec,
                scaled.grid,
                scaled.timegrid,
                scaled.snapshot_stride,
                tol=tol,
                sup_f_override=scaled.sup_f_override,
                sup_d_override=scaled.sup_d_override,
                gain_measure=scaled.neumann_gain_measure,
            )
        except StepFailure as exc:
            return index, multiplier, None, str(exc)
        write_report_csv(outcome.report, os.path.join(sub_out, "report.csv"))
        write_bound_csv(outcome.envelope, os.path.join(sub_out, "bounds.csv"))
        times = outcome.run.u_traj.times
        l2 = outcome.run.u_traj.l2_series
        tail = times >= _RESPONSE_WINDOW * times[-1]
        row = {
            "response": float(np.max(l2[tail])),
            "max_norm": float(np.max(l2)),
            "bound": outcome.envelope[-1].total,
            "passed": outcome.report.passed,
        }
        return index, multiplier, row, None

    threads = max(1, int(os.environ.get("ISSPARABOLIC_THREADS", "1")))
    tasks = list(enumerate(multipliers))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(task) for task in tasks]

    rows = []
    for index, multiplier, row, failure in results:
        if failure is not None:
            print(f"solver failure at multiplier {multiplier:g}: {failure}", file=sys.stderr)
            return EXIT_SOLVER
        rows.append((multiplier, row))

    all_passed = all(row["passed"] for _, row in rows)
    monotone = all(
        later["response"] >= earlier["response"] - 1e-9 * max(1.0, earlier["response"])
        for (_, earlier), (_, later) in zip(rows[:-1], rows[1:])
    )

    import csv as _csv

    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["multiplier", "response", "max_norm", "bound", "pass"])
        for multiplier, row in rows:
            writer.writerow(
                [multiplier, row["response"], row["max_norm"], row["bound"], row["passed"]]
            )

    for multiplier, row in rows:
        print(f"multiplier {multiplier:g}: response={row['response']:.6g} "
              f"bound={row['bound']:.6g} {'PASS' if row['passed'] else 'FAIL'}")
    print("monotone response:", "yes" if monotone else "NO")
    return EXIT_OK if (all_passed and monotone) else EXIT_BOUND


def cmd_example(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for name, text in EXAMPLE_SCENARIOS.items():
        path = os.path.join(args.out, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {path}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="issparabolic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, *, scenario=True, out=None, tol=False, multipliers=False):
        p = sub.add_parser(name)
        if scenario:
            p.add_argument("--scenario", required=True)
        if out is not None:
            p.add_argument("--out", default=out)
        if tol:
            p.add_argument("--tol", type=float, default=None)
        if multipliers:
            p.add_argument(
                "--multipliers",
                type=lambda s: [float(x) for x in s.split(",") if x.strip()],
                default=None,
            )
        p.set_defaults(fn=fn)

    add("validate", cmd_validate)
    add("simulate", cmd_simulate, out="out")
    add("verify-iss", cmd_verify_iss, out="out", tol=True)
    add("trace-constant", cmd_trace_constant)
    add("sweep", cmd_sweep, out="out", tol=True, multipliers=True)
    add("example", cmd_example, scenario=False, out=".")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except ScenarioError as exc:
        print(f"load error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except (InfeasibleConstantsError, ValidationEvaluationError, PsiInversionError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TraceEstimationError as exc:
        print(f"trace estimation failed: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def entry() -> None:
    sys.exit(main())
