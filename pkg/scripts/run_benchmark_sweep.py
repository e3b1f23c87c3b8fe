#!/usr/bin/env python3
"""Run the shipped benchmark scenarios end to end.

Validates each scenario, sweeps the boundary-disturbance amplitude for the
robin and dirichlet variants, verifies the flux-coupled variant once, and
leaves every CSV under results/benchmark/.
"""

import os
import sys

from issparabolic.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = os.path.join(ROOT, "scenarios")
RESULTS = os.path.join(ROOT, "results", "benchmark")


def run():
    multipliers = "0.1,0.5,1,2,5"
    jobs = [
        ["validate", "--scenario", os.path.join(SCENARIOS, "example_robin.scenario")],
        [
            "sweep",
            "--scenario", os.path.join(SCENARIOS, "example_robin.scenario"),
            "--out", os.path.join(RESULTS, "sweep_robin"),
            "--multipliers", multipliers,
        ],
        [
            "sweep",
            "--scenario", os.path.join(SCENARIOS, "example_dirichlet.scenario"),
            "--out", os.path.join(RESULTS, "sweep_dirichlet"),
            "--multipliers", multipliers,
        ],
        [
            "verify-iss",
            "--scenario", os.path.join(SCENARIOS, "example_neumann.scenario"),
            "--out", os.path.join(RESULTS, "verify_neumann"),
        ],
    ]
    for argv in jobs:
        print(f"\n$ issparabolic {' '.join(argv)}")
        code = main(argv)
        if code != 0:
            print(f"exited with {code}", file=sys.stderr)
            return code
    print(f"\nall runs clean; outputs under {RESULTS}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
