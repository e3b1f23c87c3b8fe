#!/usr/bin/env python3
"""Tabulate the radial trace-constant estimate across dimensions and grids.

For unit balls the discrete maximiser is the constant function, so the
estimate lands on sqrt(n/R) exactly; larger radii move the maximiser into
the interior of the search space.
"""

from issparabolic.geometry import BallGeometry, estimate_trace_constant

if __name__ == "__main__":
    print(f"{'n':>3} {'R':>5} {'res=100':>12} {'res=200':>12} {'res=400':>12}")
    for n, radius in [(1, 1.0), (2, 1.0), (3, 1.0), (1, 4.0), (2, 2.0)]:
        geom = BallGeometry(n, radius)
        row = [estimate_trace_constant(geom, res).value for res in (100, 200, 400)]
        print(f"{n:>3} {radius:>5g} " + " ".join(f"{v:>12.8f}" for v in row))
