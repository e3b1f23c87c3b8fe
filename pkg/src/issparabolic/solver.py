"""Radially symmetric implicit finite-difference solver.

Space is the radius [0, R] on a uniform grid; the diffusion term is
discretised in conservative flux form

    div(a grad u)_i ~ [r_{i+1/2}^{n-1} a_{i+1/2} (u_{i+1}-u_i)
                       - r_{i-1/2}^{n-1} a_{i-1/2} (u_i-u_{i-1})]
                      / (r_i^{n-1} dr^2)

with arithmetic face averages of a, the symmetric origin stencil
2 n a_0 (u_1 - u_0) / dr^2 at r = 0, and a second-order one-sided
derivative (3 u_m - 4 u_{m-1} + u_{m-2}) / (2 dr) in the boundary row.
Time stepping is the theta method (backward Euler by default,
theta = 0.5 for Crank-Nicolson) solved by Newton iteration on the full
nonlinear system; the boundary rows for the flux (neumann) and state
(dirichlet) couplings are pre-inverted through psi, the robin row keeps
psi(u) nonlinear.  A failed step is retried on halved substeps, up to
ten halvings.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .exprlang import Expression, derivative, evaluate
from .geometry import BallGeometry, unit_sphere_area
from .problem import BoundaryKind, ProblemSpec, invert_psi


class SolverError(RuntimeError):
    pass


class StepFailure(SolverError):
    """Newton refused to converge for one step (after builtin halvings).

    ``residual`` is the max-norm Newton residual of the last attempt;
    ``trajectory`` carries the partial result when raised from ``solve``.
    """

    def __init__(self, message: str, residual: float, trajectory=None):
        super().__init__(message)
        self.residual = residual
        self.trajectory = trajectory


@dataclass(frozen=True)
class RadialGrid:
    node_count: int
    radius: float

    def __post_init__(self):
        if self.node_count < 3:
            raise ValueError(f"need at least 3 radial nodes, got {self.node_count}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    @property
    def dr(self) -> float:
        return self.radius / (self.node_count - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.radius, self.node_count)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    horizon: float

    def __post_init__(self):
        if not 0 < self.dt <= self.horizon:
            raise ValueError(f"need 0 < dt <= horizon, got dt={self.dt}, T={self.horizon}")

    @property
    def step_count(self) -> int:
        return int(math.ceil(self.horizon / self.dt))


@dataclass(frozen=True, eq=False)
class StateField:
    values: np.ndarray
    timestamp: float
    grid: RadialGrid

    def __post_init__(self):
        if len(self.values) != self.grid.node_count:
            raise ValueError("state length does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("state contains non-finite values")


@dataclass(eq=False)
class SolutionTrajectory:
    grid: RadialGrid
    geometry: BallGeometry
    times: np.ndarray
    l2_series: np.ndarray
    sup_series: np.ndarray
    boundary_series: np.ndarray
    newton_iters: np.ndarray
    snapshots: list[StateField] = field(default_factory=list)
    snapshot_steps: list[int] = field(default_factory=list)
    fields: np.ndarray | None = None  # dense (steps+1, node_count) history when requested


def l2_norm(state: StateField, geom: BallGeometry) -> float:
    """L2 norm over the ball of the radial field, by the composite trapezoid
    rule on u^2 r^(n-1) scaled by the unit-sphere area."""
    r = state.grid.nodes
    n = geom.dimension
    integrand = state.values**2 * r ** (n - 1)
    return math.sqrt(unit_sphere_area(n) * float(np.trapezoid(integrand, dx=state.grid.dr)))


def sup_norm(state: StateField) -> float:
    return float(np.max(np.abs(state.values)))


def _field_values(expr: Expression, r: np.ndarray, t: float, u: np.ndarray | None = None):
    bindings = {"r": r, "t": t}
    if u is not None:
        bindings["u"] = u
    vals = evaluate(expr, bindings)
    if np.ndim(vals) == 0:
        return np.full(r.shape, float(vals))
    return vals


class _Discretisation:
    """Grid factors and cached symbolic derivatives for one (spec, grid) pair."""

    def __init__(self, spec: ProblemSpec, grid: RadialGrid):
        self.spec = spec
        self.grid = grid
        n = spec.geometry.dimension
        r = grid.nodes
        dr = grid.dr
        self.r = r
        self.dr = dr
        self.n = n
        r_face = 0.5 * (r[:-1] + r[1:])  # r_{i+1/2}, length m
        face_pow = r_face ** (n - 1)
        rn = r[1:-1] ** (n - 1)
        # Interior factors: multiply a_{i+1/2}, a_{i-1/2} per step.
        self.flux_plus = face_pow[1:] / (rn * dr * dr)
        self.flux_minus = face_pow[:-1] / (rn * dr * dr)
        self.origin_factor = 2.0 * n / (dr * dr)
        self.h_u = derivative(spec.h, "u")
        self.psi_u = derivative(spec.psi, "u")
        self.a_r = derivative(spec.a, "r")

    def coefficients(self, t: float):
        """Nodal a, b, c, f at time t, plus face averages of a."""
        spec, r = self.spec, self.r
        a = _field_values(spec.a, r, t)
        b = _field_values(spec.b_radial, r, t)
        c = _field_values(spec.c, r, t)
        f = _field_values(spec.f, r, t)
        a_face = 0.5 * (a[:-1] + a[1:])
        return a, b, c, f, a_face

    def linear_interior(self, u: np.ndarray, coeffs) -> np.ndarray:
        """-div(a grad u) + b du/dr + c u on rows 0..m-1 (origin + interior);
        the last entry is left at zero for the caller's boundary closure."""
        a, b, c, _, a_face = coeffs
        dr = self.dr
        out = np.zeros_like(u)
        out[0] = -self.origin_factor * a[0] * (u[1] - u[0]) + c[0] * u[0]
        diff = (
            self.flux_plus * a_face[1:] * (u[2:] - u[1:-1])
            - self.flux_minus * a_face[:-1] * (u[1:-1] - u[:-2])
        )
        adv = b[1:-1] * (u[2:] - u[:-2]) / (2.0 * dr)
        out[1:-1] = -diff + adv + c[1:-1] * u[1:-1]
        return out

    def boundary_normal_derivative(self, u: np.ndarray) -> float:
        m = len(u) - 1
        return (3.0 * u[m] - 4.0 * u[m - 1] + u[m - 2]) / (2.0 * self.dr)


def spatial_operator(spec: ProblemSpec, grid: RadialGrid, state: StateField, t: float) -> StateField:
    """Discrete spatial residual -div(a grad u) + b du/dr + c u + h(r,t,u) - f(r,t).

    Rows 0..m-1 use the conservative stencil (origin row symmetric); the
    boundary node is evaluated with second-order one-sided differences in
    non-conservative form.  It is informational there: time stepping
    replaces that row with the boundary closure.
    """
    disc = _Discretisation(spec, grid)
    u = np.asarray(state.values, dtype=float)
    coeffs = disc.coefficients(t)
    a, b, c, f, _ = coeffs
    h_vals = _field_values(spec.h, disc.r, t, u)
    out = disc.linear_interior(u, coeffs) + h_vals - f

    m = len(u) - 1
    dr, n, R = disc.dr, disc.n, grid.radius
    du = disc.boundary_normal_derivative(u)
    if m >= 3:
        d2u = (2.0 * u[m] - 5.0 * u[m - 1] + 4.0 * u[m - 2] - u[m - 3]) / dr**2
    else:
        d2u = (u[m] - 2.0 * u[m - 1] + u[m - 2]) / dr**2
    a_r_R = float(evaluate(disc.a_r, {"r": R, "t": t}))
    div_term = a[m] * (d2u + (n - 1) / R * du) + a_r_R * du
    out[m] = -div_term + b[m] * du + c[m] * u[m] + h_vals[m] - f[m]
    return StateField(values=out, timestamp=t, grid=grid)


def apply_boundary(spec: ProblemSpec, u: np.ndarray, t: float, dr: float,
                   *, inversion_tol: float = 1e-13):
    """Boundary-row residual and Jacobian entries (d/du_{m-2}, d/du_{m-1}, d/du_m).

    robin keeps psi(u_m) in the Newton system; neumann and dirichlet are
    pre-inverted through psi so their rows are linear in the unknowns.
    """
    m = len(u) - 1
    du = (3.0 * u[m] - 4.0 * u[m - 1] + u[m - 2]) / (2.0 * dr)
    jac = np.array([1.0 / (2.0 * dr), -2.0 / dr, 1.5 / dr])
    kind = spec.boundary
    if kind is BoundaryKind.ROBIN:
        d_val = evaluate(spec.d, {"t": t})
        psi_val = evaluate(spec.psi, {"u": float(u[m])})
        slope = evaluate(derivative(spec.psi, "u"), {"u": float(u[m])})
        return du + psi_val - d_val, jac + np.array([0.0, 0.0, slope])
    if kind is BoundaryKind.NEUMANN:
        target = invert_psi(spec.psi, float(evaluate(spec.d, {"t": t})), tol=inversion_tol)
        return du - target, jac
    target = invert_psi(spec.psi, float(evaluate(spec.d, {"t": t})), tol=inversion_tol)
    return u[m] - target, np.array([0.0, 0.0, 1.0])


class _ImplicitStepper:
    def __init__(self, disc: _Discretisation, theta: float, newton_tol: float,
                 newton_max: int, inversion_tol: float = 1e-13):
        self.disc = disc
        self.theta = theta
        self.newton_tol = newton_tol
        self.newton_max = newton_max
        self.inversion_tol = inversion_tol

    def _nonlinear_part(self, u, t):
        spec, disc = self.disc.spec, self.disc
        return _field_values(spec.h, disc.r, t, u)

    def _boundary_terms(self, t):
        """Per-step boundary data: returns (kind, data) with data pre-inverted
        where the row is linear."""
        spec = self.disc.spec
        d_val = float(evaluate(spec.d, {"t": t}))
        if spec.boundary is BoundaryKind.ROBIN:
            return d_val
        return invert_psi(spec.psi, d_val, tol=self.inversion_tol)

    def step(self, u_old: np.ndarray, t_old: float, dt: float):
        """One theta step from t_old to t_old + dt; returns (u_new, newton_iterations)."""
        disc, spec = self.disc, self.disc.spec
        theta = self.theta
        t_new = t_old + dt
        coeffs_new = disc.coefficients(t_new)
        a, b, c, f, a_face = coeffs_new
        boundary_data = self._boundary_terms(t_new)
        if theta != 1.0:
            coeffs_old = disc.coefficients(t_old)
            explicit = disc.linear_interior(u_old, coeffs_old) + self._nonlinear_part(
                u_old, t_old
            ) - coeffs_old[3]
        else:
            explicit = 0.0

        m = disc.grid.node_count - 1
        dr = disc.dr
        inv_dt = 1.0 / dt

        def residual(u):
            h_vals = self._nonlinear_part(u, t_new)
            res = (u - u_old) * inv_dt + theta * (
                disc.linear_interior(u, coeffs_new) + h_vals - f
            )
            if theta != 1.0:
                res = res + (1.0 - theta) * explicit
            du_b = disc.boundary_normal_derivative(u)
            if spec.boundary is BoundaryKind.ROBIN:
                psi_val = evaluate(spec.psi, {"u": float(u[m])})
                res[m] = du_b + psi_val - boundary_data
            elif spec.boundary is BoundaryKind.NEUMANN:
                res[m] = du_b - boundary_data
            else:
                res[m] = u[m] - boundary_data
            return res

        def jacobian_banded(u):
            # Band storage for solve_banded with (l, u) = (2, 1):
            # ab[1 + i - j, j] = J[i, j].
            ab = np.zeros((4, m + 1))
            hu = self._h_u(u, t_new)
            diag = inv_dt + theta * (c + hu)
            diag[0] += theta * disc.origin_factor * a[0]
            upper = np.zeros(m + 1)
            upper[1] = -theta * disc.origin_factor * a[0]  # J[0, 1]
            kplus = disc.flux_plus * a_face[1:]
            kminus = disc.flux_minus * a_face[:-1]
            badv = b[1:-1] / (2.0 * dr)
            diag[1:-1] += theta * (kplus + kminus)
            upper[2:] = theta * (-kplus + badv)  # J[i, i+1]
            lower = np.zeros(m + 1)
            lower[:-2] = theta * (-kminus - badv)  # J[i, i-1] stored at column i-1
            ab[0, :] = upper
            ab[1, :] = diag
            ab[2, :-1] = lower[:-1]
            # Boundary row: entries at columns m-2, m-1, m.
            if spec.boundary is BoundaryKind.DIRICHLET:
                row = (0.0, 0.0, 1.0)
            else:
                row = (1.0 / (2.0 * dr), -2.0 / dr, 1.5 / dr)
                if spec.boundary is BoundaryKind.ROBIN:
                    slope = float(evaluate(disc.psi_u, {"u": float(u[m])}))
                    row = (row[0], row[1], row[2] + slope)
            ab[3, m - 2] = row[0]
            ab[2, m - 1] = row[1]
            ab[1, m] = row[2]
            return ab

        u = u_old.astype(float).copy()
        prev_res = math.inf
        growth = 0
        for iteration in range(self.newton_max + 1):
            res = residual(u)
            res_norm = float(np.max(np.abs(res)))
            if not math.isfinite(res_norm):
                raise StepFailure(
                    f"Newton residual became non-finite at t={t_new:.6g}", res_norm
                )
            if res_norm <= self.newton_tol:
                return u, iteration
            if res_norm > prev_res:
                growth += 1
                if growth >= 3:
                    raise StepFailure(
                        f"Newton residual grew for 3 consecutive iterates at t={t_new:.6g}",
                        res_norm,
                    )
            else:
                growth = 0
            if iteration == self.newton_max:
                raise StepFailure(
                    f"Newton did not converge in {self.newton_max} iterations at "
                    f"t={t_new:.6g} (residual {res_norm:.3g})",
                    res_norm,
                )
            ab = jacobian_banded(u)
            delta = solve_banded((2, 1), ab, -res)
            u = u + delta
            prev_res = res_norm
        raise AssertionError("unreachable")

    def _h_u(self, u, t):
        return _field_values(self.disc.h_u, self.disc.r, t, u)


def step_implicit(
    spec: ProblemSpec,
    grid: RadialGrid,
    state: StateField,
    t: float,
    dt: float,
    newton_tol: float = 1e-10,
    newton_max: int = 30,
    *,
    theta: float = 1.0,
    max_halvings: int = 10,
) -> StateField:
    """Advance one implicit step from ``state`` at time t to t + dt.

    On Newton failure the step is retried as two half steps, recursively,
    up to ``max_halvings`` levels before the failure propagates.
    """
    disc = _Discretisation(spec, grid)
    stepper = _ImplicitStepper(disc, theta, newton_tol, newton_max)
    u, _ = _advance(stepper, np.asarray(state.values, dtype=float), t, dt, max_halvings)
    return StateField(values=u, timestamp=t + dt, grid=grid)


def _advance(stepper: _ImplicitStepper, u: np.ndarray, t: float, dt: float, budget: int):
    try:
        return stepper.step(u, t, dt)
    except StepFailure:
        if budget <= 0:
            raise
        u_half, it1 = _advance(stepper, u, t, 0.5 * dt, budget - 1)
        u_full, it2 = _advance(stepper, u_half, t + 0.5 * dt, 0.5 * dt, budget - 1)
        return u_full, it1 + it2


def solve(
    spec: ProblemSpec,
    grid: RadialGrid,
    timegrid: TimeGrid,
    snapshot_stride: int = 1,
    *,
    newton_tol: float = 1e-10,
    newton_max: int = 30,
    theta: float = 1.0,
    max_halvings: int = 10,
    store_fields: bool = False,
) -> SolutionTrajectory:
    """March the implicit scheme from the initial profile to the horizon.

    Norms, the boundary value and the Newton iteration count are recorded
    every step; full fields are snapshotted at step 0, every
    ``snapshot_stride`` steps and at the final step.  Callers are expected
    to have validated the problem (or to accept responsibility for an
    unvalidated one).  On an unrecoverable step failure a StepFailure is
    raised carrying the partial trajectory.
    """
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be at least 1")
    geom = spec.geometry
    disc = _Discretisation(spec, grid)
    stepper = _ImplicitStepper(disc, theta, newton_tol, newton_max)
    steps = timegrid.step_count
    dt = timegrid.dt
    r = grid.nodes

    u = np.asarray(_field_values(spec.phi, r, 0.0), dtype=float).copy()
    times = np.zeros(steps + 1)
    l2s = np.zeros(steps + 1)
    sups = np.zeros(steps + 1)
    bvals = np.zeros(steps + 1)
    iters = np.zeros(steps + 1, dtype=int)
    traj = SolutionTrajectory(
        grid=grid,
        geometry=geom,
        times=times,
        l2_series=l2s,
        sup_series=sups,
        boundary_series=bvals,
        newton_iters=iters,
        fields=np.zeros((steps + 1, grid.node_count)) if store_fields else None,
    )

    def record(k: int, t: float, vec: np.ndarray, nit: int):
        state = StateField(values=vec.copy(), timestamp=t, grid=grid)
        times[k] = t
        l2s[k] = l2_norm(state, geom)
        sups[k] = sup_norm(state)
        bvals[k] = vec[-1]
        iters[k] = nit
        if traj.fields is not None:
            traj.fields[k] = vec
        if k % snapshot_stride == 0 or k == steps:
            traj.snapshots.append(state)
            traj.snapshot_steps.append(k)

    record(0, 0.0, u, 0)
    for k in range(1, steps + 1):
        t_old = (k - 1) * dt
        try:
            u, nit = _advance(stepper, u, t_old, dt, max_halvings)
        except StepFailure as exc:
            truncated = SolutionTrajectory(
                grid=grid,
                geometry=geom,
                times=times[:k],
                l2_series=l2s[:k],
                sup_series=sups[:k],
                boundary_series=bvals[:k],
                newton_iters=iters[:k],
                snapshots=traj.snapshots,
                snapshot_steps=traj.snapshot_steps,
                fields=traj.fields[:k] if traj.fields is not None else None,
            )
            raise StepFailure(str(exc), exc.residual, trajectory=truncated) from exc
        record(k, k * dt, u, nit)
    return traj


def write_trajectory_csv(traj: SolutionTrajectory, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "l2_norm", "sup_norm", "boundary_value", "newton_iters"])
        for k in range(len(traj.times)):
            writer.writerow(
                [
                    traj.times[k],
                    traj.l2_series[k],
                    traj.sup_series[k],
                    traj.boundary_series[k],
                    int(traj.newton_iters[k]),
                ]
            )


def write_snapshots_csv(traj: SolutionTrajectory, out_dir: str) -> list[str]:
    paths = []
    for state, step in zip(traj.snapshots, traj.snapshot_steps):
        path = os.path.join(out_dir, f"snapshot_{step}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "u"])
            for r_i, u_i in zip(traj.grid.nodes, state.values):
                writer.writerow([r_i, u_i])
        paths.append(path)
    return paths
