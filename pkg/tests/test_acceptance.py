"""Acceptance gate: each test exercises one numbered criterion end to end,
prints one PASS/FAIL line, and enforces the criterion's runtime budget.

Expected-value discipline: closed-form claims are checked against
test-local oracles written as independent literal arithmetic (never by
calling back into the package), with inverse-map arguments drawn from
exactly invertible points of psi(u) = u + u^3.
"""

import math
import random
import time

from issparabolic.bounds import (
    DisturbanceMagnitudes,
    choose_epsilon,
    decay_rate_dirichlet,
    decay_rate_robin,
    iss_bound_dirichlet,
    iss_bound_neumann,
    iss_bound_robin,
    max_estimate_dirichlet,
    max_estimate_robin,
    neumann_rate,
    r0_constant,
)
from issparabolic.cli import main
from issparabolic.exprlang import ExprDomainError, derivative, evaluate, parse, to_text
from issparabolic.geometry import BallGeometry, ball_volume, estimate_trace_constant, sphere_area
from issparabolic.problem import (
    BoundaryKind,
    BoundConstants,
    ProblemSpec,
    validate_compatibility,
    validate_monotonicity,
    validate_structural,
)
from issparabolic.scenario import EXAMPLE_SCENARIOS
from issparabolic.solver import RadialGrid, StateField, TimeGrid, l2_norm, solve
from issparabolic.splitting import (
    check_max_estimate,
    check_max_principle,
    check_w_equation_residual,
    fit_decay_rate,
    split_solve,
)
from test_exprlang import finite_difference, random_expression


class Criterion:
    """Times one criterion, prints its verdict line, enforces the budget."""

    def __init__(self, number: int, title: str, budget_seconds: float):
        self.number = number
        self.title = title
        self.budget = budget_seconds

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.monotonic() - self.start
        verdict = "PASS" if exc_type is None else "FAIL"
        print(f"ACCEPTANCE {self.number:>2} {verdict}  ({elapsed:6.2f}s / {self.budget:g}s)  {self.title}")
        if exc_type is None:
            assert elapsed < self.budget, (
                f"criterion {self.number} exceeded its runtime budget: "
                f"{elapsed:.1f}s >= {self.budget:g}s"
            )
        return False


PSI = parse("u + u^3")

# Exactly invertible points of psi(u) = u + u^3.
PSI_POINTS = [(0.5, 0.625), (1.0, 2.0), (1.5, 4.875), (2.0, 10.0), (3.0, 30.0)]

# Closed-form ball measures for the oracle side (independent of the package).
ORACLE_VOLUME = {
    1: lambda R: 2.0 * R,
    2: lambda R: math.pi * R**2,
    3: lambda R: 4.0 * math.pi * R**3 / 3.0,
    4: lambda R: math.pi**2 * R**4 / 2.0,
    5: lambda R: 8.0 * math.pi**2 * R**5 / 15.0,
}
ORACLE_AREA = {
    1: lambda R: 2.0,
    2: lambda R: 2.0 * math.pi * R,
    3: lambda R: 4.0 * math.pi * R**2,
    4: lambda R: 2.0 * math.pi**2 * R**3,
    5: lambda R: 8.0 * math.pi**2 * R**4 / 3.0,
}


def benchmark_spec(kind=BoundaryKind.ROBIN, *, n=2, amplitude=1.0, phi="0", horizon=2.0,
                   h="u*ln(1+u^2)", trace=1.5556349186104046):
    return ProblemSpec(
        geometry=BallGeometry(n, 1.0),
        a=parse("1"),
        b_radial=parse("0"),
        c=parse("1"),
        h=parse(h),
        psi=parse("u + u^3"),
        f=parse("0"),
        d=parse(f"{amplitude!r}*sin(t)^2"),
        phi=parse(phi),
        boundary=kind,
        constants=BoundConstants(1.0, 1.0, 0.0, 1.0, trace),
        horizon=horizon,
    )


def test_criterion_01_formula_oracles():
    with Criterion(1, "closed-form estimates match hand-evaluated oracles", 1.0):
        rng = random.Random(101)
        checked = {"robin_max": 0, "dirichlet_max": 0, "r0": 0, "rate_r": 0, "rate_d": 0,
                   "iss_r": 0, "iss_n": 0, "iss_d": 0}
        for _ in range(12):
            n = rng.choice([1, 2, 3, 4, 5])
            R = rng.choice([0.5, 1.0, 2.0])
            a_lo = rng.uniform(0.5, 1.5)
            a_hi = a_lo * rng.uniform(1.0, 2.0)
            c_lo = rng.uniform(0.5, 2.0)
            trace = rng.uniform(0.8, 1.5)
            # keep the declared constants strictly feasible
            b_up = rng.uniform(0.0, 0.9) * min(
                2.0 * c_lo / (1.0 + 2.0 * trace**2), a_lo / trace**2
            )
            consts = BoundConstants(a_lo, a_hi, b_up, c_lo, trace)
            geom = BallGeometry(n, R)
            x_d, y_d = rng.choice(PSI_POINTS)
            sup_f = rng.uniform(0.0, 3.0)
            sup_phi = rng.uniform(0.0, 2.0)
            l2_phi = rng.uniform(0.0, 2.0)
            horizon = rng.uniform(0.1, 4.0)
            mags = DisturbanceMagnitudes(sup_f=sup_f, sup_d=y_d, sup_phi=sup_phi, l2_phi=l2_phi)

            # --- oracle arithmetic, written out from scratch ---
            p = y_d / (2.0 * R)
            q = max((sup_f + 2.0 * p * (a_hi * n + R * a_hi + R * b_up)) / c_lo, sup_phi)
            oracle_robin = p * R * R + q
            got = max_estimate_robin(consts, geom, mags)
            assert abs(got - oracle_robin) <= 1e-12 * max(1.0, abs(oracle_robin))
            checked["robin_max"] += 1

            oracle_dirichlet = max(sup_f / c_lo, x_d, sup_phi)
            got = max_estimate_dirichlet(consts, mags, PSI)
            assert abs(got - oracle_dirichlet) <= 1e-12 * max(1.0, abs(oracle_dirichlet))
            checked["dirichlet_max"] += 1

            oracle_r0 = R / 2.0 + (a_hi * n + R * a_hi + R * b_up) / (c_lo * R)
            assert abs(r0_constant(consts, geom) - oracle_r0) <= 1e-12 * oracle_r0
            checked["r0"] += 1

            lam_r = (2.0 * c_lo - b_up * (1.0 + 2.0 * trace**2)) / 2.0
            assert abs(decay_rate_robin(consts) - lam_r) <= 1e-12 * lam_r
            checked["rate_r"] += 1
            lam_d = (2.0 * c_lo - b_up) / 2.0
            assert abs(decay_rate_dirichlet(consts) - lam_d) <= 1e-12 * lam_d
            checked["rate_d"] += 1

            vol_root = math.sqrt(ORACLE_VOLUME[n](R))
            area_root = math.sqrt(ORACLE_AREA[n](R))

            oracle_total = (
                l2_phi * math.exp(-lam_r * horizon)
                + oracle_r0 * vol_root * y_d
                + vol_root * sup_f / c_lo
            )
            got = iss_bound_robin(consts, geom, mags, horizon).total
            assert abs(got - oracle_total) <= 1e-12 * max(1.0, oracle_total)
            checked["iss_r"] += 1

            eps = rng.uniform(0.1, 0.9) * min(
                (2.0 * c_lo - b_up * (1.0 + 2.0 * trace**2)) / (2.0 * trace**2),
                (a_lo - b_up * trace**2) / trace**2,
            )
            lam_eps = 2.0 * c_lo - b_up * (1.0 + 2.0 * trace**2) - 2.0 * eps * trace**2
            kappa = 1.0 + a_hi / math.sqrt(eps * lam_eps)
            oracle_total = (
                l2_phi * math.exp(-0.5 * lam_eps * horizon)
                + oracle_r0 * kappa * area_root * x_d
                + kappa * area_root * sup_f / c_lo
            )
            got = iss_bound_neumann(consts, geom, mags, PSI, horizon, epsilon=eps).total
            assert abs(got - oracle_total) <= 1e-12 * max(1.0, oracle_total)
            checked["iss_n"] += 1

            oracle_total = l2_phi * math.exp(-lam_d * horizon) + vol_root * max(
                sup_f / c_lo, x_d
            )
            got = iss_bound_dirichlet(consts, geom, mags, PSI, horizon).total
            assert abs(got - oracle_total) <= 1e-12 * max(1.0, oracle_total)
            checked["iss_d"] += 1
        assert all(count >= 10 for count in checked.values())


def test_criterion_02_structural_validator_randomised():
    with Criterion(2, "feasibility screening accepts/rejects 1000 randomised sets", 5.0):
        rng = random.Random(202)
        geometry = BallGeometry(2, 1.0)
        rejected = accepted = equality_cases = 0
        for i in range(1000):
            a_lo = rng.uniform(0.1, 3.0)
            a_hi = a_lo * rng.uniform(1.0, 2.0)
            c_lo = rng.uniform(0.05, 3.0)
            trace = rng.uniform(0.5, 2.5)
            mode = i % 20
            if mode == 0:
                b_up = 2.0 * c_lo / (1.0 + 2.0 * trace**2)  # damping equality: reject
                equality_cases += 1
            elif mode == 1:
                b_up = a_lo / trace**2  # diffusion equality: reject
                equality_cases += 1
            else:
                b_up = rng.uniform(0.0, 2.0)
            consts = BoundConstants(a_lo, a_hi, b_up, c_lo, trace)
            feasible = (
                b_up * (1.0 + 2.0 * trace**2) < 2.0 * c_lo and b_up * trace**2 < a_lo
            )
            spec = ProblemSpec(
                geometry=geometry,
                a=parse(repr((a_lo + a_hi) / 2.0)),
                b_radial=parse("0"),
                c=parse(repr(c_lo)),
                h=parse("u"),
                psi=parse("u"),
                f=parse("0"),
                d=parse("0"),
                phi=parse("0"),
                boundary=BoundaryKind.ROBIN,
                constants=consts,
                horizon=1.0,
            )
            report = validate_structural(spec, samples=100)
            assert report.passed == feasible, (i, consts)
            if feasible:
                accepted += 1
            else:
                rejected += 1
        assert equality_cases == 100 and accepted > 0 and rejected > 0


def test_criterion_03_geometry_closed_forms():
    with Criterion(3, "ball/sphere measures and the derivative identity", 1.0):
        for n in (1, 2, 3, 4, 5):
            for R in (0.5, 1.0, 2.0, 3.0):
                geom = BallGeometry(n, R)
                assert abs(ball_volume(geom) - ORACLE_VOLUME[n](R)) <= 1e-12 * ORACLE_VOLUME[n](R)
                assert abs(sphere_area(geom) - ORACLE_AREA[n](R)) <= 1e-12 * ORACLE_AREA[n](R)
                step = 1e-6 * R
                deriv = (
                    ball_volume(BallGeometry(n, R + step))
                    - ball_volume(BallGeometry(n, R - step))
                ) / (2.0 * step)
                assert abs(deriv - sphere_area(geom)) <= 1e-6 * sphere_area(geom)


def test_criterion_04_trace_estimator():
    with Criterion(4, "trace-constant estimates stable across resolutions", 30.0):
        for n in (1, 2, 3):
            geom = BallGeometry(n, 1.0)
            lo = estimate_trace_constant(geom, 200)
            hi = estimate_trace_constant(geom, 400)
            assert lo.converged and hi.converged
            assert abs(hi.value - lo.value) / hi.value < 0.01
            if n == 2:
                assert lo.value >= math.sqrt(2.0) * (1.0 - 1e-6)


def _manufactured_error(nr: int, dt: float) -> float:
    # u_exact = exp(-t)(1 - r^2)^2 on the unit disk with a=1, b=0, c=1,
    # h=u^3 and the flux+state coupling; forcing by substitution, boundary
    # data identically zero (value and slope of u_exact vanish at r=1).
    spec = ProblemSpec(
        geometry=BallGeometry(2, 1.0),
        a=parse("1"),
        b_radial=parse("0"),
        c=parse("1"),
        h=parse("u^3"),
        psi=parse("u + u^3"),
        f=parse("exp(-t)*(8 - 16*r^2) + exp(-3*t)*(1 - r^2)^6"),
        d=parse("0"),
        phi=parse("(1 - r^2)^2"),
        boundary=BoundaryKind.ROBIN,
        constants=BoundConstants(1.0, 1.0, 0.0, 1.0, 1.6),
        horizon=0.5,
    )
    grid = RadialGrid(nr, 1.0)
    traj = solve(spec, grid, TimeGrid(dt=dt, horizon=0.5), store_fields=True)
    r = grid.nodes
    worst = 0.0
    for k, t in enumerate(traj.times):
        exact = math.exp(-t) * (1.0 - r**2) ** 2
        diff = StateField(values=traj.fields[k] - exact, timestamp=t, grid=grid)
        worst = max(worst, l2_norm(diff, spec.geometry))
    return worst


def test_criterion_05_manufactured_solution_orders():
    with Criterion(5, "manufactured-solution spatial/temporal convergence", 120.0):
        spatial = [
            _manufactured_error(21, 0.01),
            _manufactured_error(41, 0.0025),
            _manufactured_error(81, 0.000625),
        ]
        spatial_orders = [math.log2(a / b) for a, b in zip(spatial, spatial[1:])]
        assert all(order >= 1.8 for order in spatial_orders), spatial_orders

        temporal = [
            _manufactured_error(401, 0.1),
            _manufactured_error(401, 0.05),
            _manufactured_error(401, 0.025),
        ]
        temporal_orders = [math.log2(a / b) for a, b in zip(temporal, temporal[1:])]
        assert all(order >= 0.9 for order in temporal_orders), temporal_orders


def _random_validated_spec(rng: random.Random):
    n = rng.choice([1, 2, 3])
    R = 1.0
    kind = rng.choice(list(BoundaryKind))
    a0 = rng.uniform(0.8, 1.5)
    a1 = rng.uniform(0.0, 0.2)
    c0 = rng.uniform(0.8, 2.0)
    c1 = rng.uniform(0.0, 0.5)
    trace = {1: 1.0, 2: math.sqrt(2.0), 3: math.sqrt(3.0)}[n] * 1.1
    cap = min(1.5 * c0 / (1.0 + 2.0 * trace**2), 0.9 * a0 / trace**2) / (n + R)
    b1 = rng.uniform(0.0, min(0.1, cap))
    consts = BoundConstants(a0, a0 + a1, b1 * (n + R), c0, trace)
    sign = rng.choice([-1.0, 1.0])
    f0, f1 = rng.uniform(0.2, 1.0), rng.uniform(0.0, 1.0)
    spec = ProblemSpec(
        geometry=BallGeometry(n, R),
        a=parse(f"{a0!r} + {a1!r}*sin(r)"),
        b_radial=parse(f"{b1!r}*r"),
        c=parse(f"{c0!r} + {c1!r}*r^2"),
        h=parse(rng.choice(["u^3", "u*ln(1+u^2)", "tanh(u)", "u + u^3"])),
        psi=parse(rng.choice(["u", "u + u^3", "2*u + 0.5*u^3"])),
        f=parse(f"{sign * f0!r}*(1 + {f1!r}*r^2)*(1 + 0.5*sin(t))"),
        d=parse(f"{rng.uniform(0.0, 1.0)!r}*sin(t)^2"),
        phi=parse(f"{rng.uniform(0.0, 0.5)!r}*(1 - r^2)^2"),
        boundary=kind,
        constants=consts,
        horizon=0.5,
    )
    return spec


def test_criterion_06_weak_maximum_principle():
    with Criterion(6, "discrete maximum principle on randomised validated problems", 120.0):
        rng = random.Random(606)
        newton_tol = 1e-10
        grid = RadialGrid(61, 1.0)
        tg = TimeGrid(dt=5e-3, horizon=0.5)
        for case in range(20):
            spec = _random_validated_spec(rng)
            assert validate_structural(spec, 100).passed, case
            assert validate_monotonicity(spec.h, "h", 100, (-5, 5), r_max=1.0, t_max=0.5).passed
            assert validate_monotonicity(spec.psi, "psi", 100, (-5, 5)).passed
            assert validate_compatibility(spec).passed
            traj = solve(spec, grid, tg, newton_tol=newton_tol, store_fields=True)
            report = check_max_principle(traj, spec, tol=10.0 * newton_tol)
            assert report.passed, (case, [c.claim for c in report.checks if not c.passed])

        # negative control: corrupted interior values (one pushed above any
        # boundary maximum, one below any minimum) must be caught whichever
        # sign-definite case applies
        spec = _random_validated_spec(rng)
        traj = solve(spec, grid, tg, newton_tol=newton_tol, store_fields=True)
        mid = len(traj.times) // 2
        traj.fields[mid, grid.node_count // 2] += 10.0
        traj.fields[mid, grid.node_count // 3] -= 10.0
        assert not check_max_principle(traj, spec, tol=10.0 * newton_tol).passed


def test_criterion_07_maximum_estimates():
    with Criterion(7, "sup bounds on the disturbance-driven trajectory", 180.0):
        grid = RadialGrid(201, 1.0)
        tg = TimeGrid(dt=1e-3, horizon=2.0)
        for n in (1, 2):
            for amplitude in (0.5, 1.0, 2.0):
                for kind in (BoundaryKind.ROBIN, BoundaryKind.DIRICHLET):
                    spec = benchmark_spec(kind, n=n, amplitude=amplitude)
                    traj = solve(spec, grid, tg, snapshot_stride=200)
                    mags = DisturbanceMagnitudes(
                        sup_f=0.0, sup_d=amplitude, sup_phi=0.0, l2_phi=0.0
                    )
                    report = check_max_estimate(traj, spec, None, 0.02, mags)
                    assert report.passed, (n, amplitude, kind, report["max_estimate"].max_violation)


def test_criterion_08_lyapunov_decay_slope():
    with Criterion(8, "homogeneous decay at least the analytic rate", 60.0):
        grid = RadialGrid(101, 1.0)
        tg = TimeGrid(dt=2e-3, horizon=2.0)
        robin = benchmark_spec(BoundaryKind.ROBIN, amplitude=0.0, phi="1 - r^2")
        traj = solve(robin, grid, tg)
        lam = decay_rate_robin(robin.constants)
        assert fit_decay_rate(traj.times, traj.l2_series, 0.5, 2.0) >= lam - 0.05

        dirichlet = benchmark_spec(BoundaryKind.DIRICHLET, amplitude=0.0, phi="1 - r^2")
        traj = solve(dirichlet, grid, tg)
        lam_d = decay_rate_dirichlet(dirichlet.constants)
        assert fit_decay_rate(traj.times, traj.l2_series, 0.5, 2.0) >= lam_d - 0.05


def test_criterion_09_end_to_end_envelopes(tmp_path):
    with Criterion(9, "verification pipeline and amplitude sweeps exit clean", 600.0):
        scen_dir = tmp_path / "scenarios"
        scen_dir.mkdir()
        for name, text in EXAMPLE_SCENARIOS.items():
            (scen_dir / name).write_text(text)
        multipliers = "0.1,0.5,1,2,5"
        code = main(
            ["sweep", "--scenario", str(scen_dir / "example_robin.scenario"),
             "--out", str(tmp_path / "sweep_robin"), "--multipliers", multipliers]
        )
        assert code == 0
        code = main(
            ["sweep", "--scenario", str(scen_dir / "example_dirichlet.scenario"),
             "--out", str(tmp_path / "sweep_dirichlet"), "--multipliers", multipliers]
        )
        assert code == 0
        for sweep_dir in ("sweep_robin", "sweep_dirichlet"):
            rows = (tmp_path / sweep_dir / "sweep.csv").read_text().splitlines()[1:]
            responses = [float(row.split(",")[1]) for row in rows]
            assert responses == sorted(responses)
            assert all(row.split(",")[4] == "True" for row in rows)

        # flux-coupled pathway: the shipped cubic variant plus a linear one
        assert main(
            ["verify-iss", "--scenario", str(scen_dir / "example_neumann.scenario"),
             "--out", str(tmp_path / "neumann_cubic")]
        ) == 0
        linear = (scen_dir / "example_neumann.scenario").read_text().replace(
            "psi = u + u^3", "psi = u"
        )
        (scen_dir / "neumann_linear.scenario").write_text(linear)
        assert main(
            ["verify-iss", "--scenario", str(scen_dir / "neumann_linear.scenario"),
             "--out", str(tmp_path / "neumann_linear")]
        ) == 0


def test_criterion_10_w_residual_refinement():
    with Criterion(10, "split-equation residual shrinks under refinement", 180.0):
        spec = benchmark_spec(BoundaryKind.ROBIN, phi="0.5*(1 - r^2)^2", horizon=1.0)
        coarse = split_solve(
            spec, RadialGrid(101, 1.0), TimeGrid(dt=4e-3, horizon=1.0), snapshot_stride=25
        )
        fine = split_solve(
            spec, RadialGrid(201, 1.0), TimeGrid(dt=1e-3, horizon=1.0), snapshot_stride=25
        )
        assert check_w_equation_residual(coarse, spec).passed
        assert check_w_equation_residual(fine, spec).passed
        settled_coarse = coarse.residual_series[coarse.residual_times >= 0.5].max()
        settled_fine = fine.residual_series[fine.residual_times >= 0.5].max()
        assert settled_coarse / settled_fine >= 3.0, (settled_coarse, settled_fine)


def test_criterion_11_expression_language():
    with Criterion(11, "symbolic derivatives and parse round trips", 10.0):
        rng = random.Random(1111)
        checked = 0
        attempts = 0
        while checked < 100 and attempts < 10000:
            attempts += 1
            tree = random_expression(rng, rng.randrange(1, 4), protected=True)
            var = rng.choice(("r", "t", "u"))
            binding = {v: rng.uniform(0.3, 1.2) for v in ("r", "t", "u")}
            try:
                sym = evaluate(derivative(tree, var), binding)
                fd = finite_difference(tree, var, binding)
            except ExprDomainError:
                continue
            assert abs(sym - fd) <= 1e-6 * (1.0 + abs(sym)), to_text(tree)
            checked += 1
        assert checked == 100

        rng = random.Random(2222)
        for _ in range(1000):
            tree = random_expression(rng, rng.randrange(1, 4), protected=False)
            assert parse(to_text(tree)) == tree


def test_criterion_12_epsilon_optimiser():
    with Criterion(12, "gain-factor minimiser on the analytic case", 1.0):
        consts = BoundConstants(1.0, 1.0, 0.0, 1.0, 1.0)
        eps = choose_epsilon(consts)
        assert abs(eps - 0.5) <= 1e-4
        gain = 1.0 + 1.0 / math.sqrt(eps * neumann_rate(consts, eps))
        assert abs(gain - (1.0 + math.sqrt(2.0))) <= 1e-6
