"""Problem descriptions and validators.

A problem instance couples a ball geometry with radially symmetric
coefficient fields a, b, c, a nonlinear interior term h(r, t, u), a
boundary nonlinearity psi(u), disturbances f(r, t) and d(t), and initial
data phi(r), under one of three boundary couplings at r = R:

    robin      du/dnu + psi(u) = d
    neumann    psi(du/dnu)     = d
    dirichlet  psi(u)          = d

The validators are sampling-based necessary checks of the assumptions the
analytic envelopes rely on: coefficient envelopes and the two strict
feasibility inequalities on the declared constants, monotonicity and odd
superadditivity of h and psi, and the initial/boundary compatibility of
phi and d.  Passing them does not prove the continuum conditions; the
reports say so.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exprlang import (
    Expression,
    ExprError,
    Num,
    derivative,
    evaluate,
    to_text,
    variables,
)
from .geometry import BallGeometry


class BoundaryKind(enum.Enum):
    ROBIN = "robin"
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


class ProblemSpecError(ValueError):
    """A problem description violates a construction invariant."""


class PsiInversionError(RuntimeError):
    """The bracketing search for the inverse of psi failed to enclose a root."""


class ValidationEvaluationError(RuntimeError):
    """A coefficient expression failed to evaluate at a sample point."""


@dataclass(frozen=True)
class BoundConstants:
    """Declared envelope constants for the coefficient fields.

    ``b_lower`` is recorded for completeness but enters no estimate.  The
    two strict feasibility inequalities

        b_upper (1 + 2 C^2) < 2 c_lower      and      b_upper C^2 < a_lower

    (C the trace constant) are deliberately *not* enforced here; they are
    checked by ``validate_structural`` so that infeasible declarations can
    be represented and rejected with a report.
    """

    a_lower: float
    a_upper: float
    b_upper: float
    c_lower: float
    trace_constant: float
    b_lower: float = 0.0

    def __post_init__(self):
        if not self.a_lower > 0:
            raise ProblemSpecError(f"a_lower must be positive, got {self.a_lower}")
        if not self.a_upper >= self.a_lower:
            raise ProblemSpecError("a_upper must be at least a_lower")
        if self.b_upper < 0 or self.b_lower < 0:
            raise ProblemSpecError("b bounds must be nonnegative")
        if not self.c_lower > 0:
            raise ProblemSpecError(f"c_lower must be positive, got {self.c_lower}")
        if not self.trace_constant > 0:
            raise ProblemSpecError("trace_constant must be positive")


_ALLOWED_VARS = {
    "a": {"r", "t"},
    "b_radial": {"r", "t"},
    "c": {"r", "t"},
    "h": {"r", "t", "u"},
    "psi": {"u"},
    "f": {"r", "t"},
    "d": {"t"},
    "phi": {"r"},
}


@dataclass(frozen=True)
class ProblemSpec:
    """One full problem instance on B_R x [0, horizon]."""

    geometry: BallGeometry
    a: Expression
    b_radial: Expression
    c: Expression
    h: Expression
    psi: Expression
    f: Expression
    d: Expression
    phi: Expression
    boundary: BoundaryKind
    constants: BoundConstants
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ProblemSpecError(f"horizon must be positive, got {self.horizon}")
        for name, allowed in _ALLOWED_VARS.items():
            expr = getattr(self, name)
            extra = variables(expr) - allowed
            if extra:
                raise ProblemSpecError(
                    f"{name} may only depend on {sorted(allowed)}, "
                    f"but uses {sorted(extra)}: {to_text(expr)!r}"
                )


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    witness: tuple = ()
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            witness = " ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in c.witness)
            yield f"{c.name:<28s} {status:<5s} margin={c.margin:+.6e}  {witness}  {c.note}"


def _locate_failure(expr, r, t):
    """Best-effort witness for a vectorised evaluation failure: scan a
    coarse subsample (always including the domain extremes, where blowups
    usually sit) and report the first failing (r, t)."""

    def _coarse(axis):
        flat = np.unique(np.ravel(axis))
        picks = list(flat[:: max(1, len(flat) // 16)]) + [flat[0], flat[-1]]
        return sorted(set(float(x) for x in picks))

    for r_i in _coarse(r):
        for t_j in _coarse(t):
            try:
                evaluate(expr, {"r": r_i, "t": t_j})
            except ExprError:
                return r_i, t_j
    return None


def _sample_field(expr, name, r, t):
    try:
        vals = evaluate(expr, {"r": r, "t": t})
    except ExprError as exc:
        where = _locate_failure(expr, r, t)
        location = f" near r={where[0]:g}, t={where[1]:g}" if where else ""
        raise ValidationEvaluationError(f"evaluating {name} failed{location}: {exc}") from exc
    return np.broadcast_to(np.asarray(vals, dtype=float), np.broadcast_shapes(r.shape, t.shape))


def check_constants_inequalities(consts: BoundConstants) -> tuple[CheckResult, CheckResult]:
    """The two strict feasibility inequalities on the declared constants.

    Equality fails: the decay rate extracted downstream is positive only
    under strict inequality.
    """
    c2 = consts.trace_constant**2
    margin_damping = 2.0 * consts.c_lower - consts.b_upper * (1.0 + 2.0 * c2)
    margin_diffusion = consts.a_lower - consts.b_upper * c2
    return (
        CheckResult(
            name="constants_damping_margin",
            passed=margin_damping > 0.0,
            margin=margin_damping,
            note="requires b_upper*(1+2C^2) < 2*c_lower strictly",
        ),
        CheckResult(
            name="constants_diffusion_margin",
            passed=margin_diffusion > 0.0,
            margin=margin_diffusion,
            note="requires b_upper*C^2 < a_lower strictly",
        ),
    )


def validate_structural(spec: ProblemSpec, samples: int = 200) -> ValidationReport:
    """Check declared envelopes against the sampled coefficient fields.

    The two constants inequalities are exact; the field checks sample a
    ``samples`` x ``samples`` grid over [0, R] x [0, horizon] and are
    necessary conditions only.  The divergence of the radial field b is
    b' + (n-1) b / r, with the removable singularity at the origin
    evaluated as n * b'(0).
    """
    if samples < 100:
        raise ValueError(f"samples must be at least 100, got {samples}")
    geom, consts = spec.geometry, spec.constants
    n = geom.dimension
    r = np.linspace(0.0, geom.radius, samples)[:, None]
    t = np.linspace(0.0, spec.horizon, samples)[None, :]

    a_vals = _sample_field(spec.a, "a", r, t)
    da_vals = _sample_field(derivative(spec.a, "r"), "da/dr", r, t)
    b_vals = _sample_field(spec.b_radial, "b", r, t)
    db_vals = _sample_field(derivative(spec.b_radial, "r"), "db/dr", r, t)
    c_vals = _sample_field(spec.c, "c", r, t)

    div_b = db_vals + (n - 1) * np.divide(
        b_vals, r, out=np.zeros_like(b_vals), where=r > 0
    )
    div_b[0, :] = n * db_vals[0, :]
    b_total = np.abs(b_vals) + np.abs(div_b)

    def _witness(arr, idx):
        i, j = np.unravel_index(idx, arr.shape)
        return (float(r[i, 0]), float(t[0, j]), float(arr[i, j]))

    checks = list(check_constants_inequalities(consts))

    margin_lo = a_vals - consts.a_lower
    margin_hi = consts.a_upper - a_vals
    a_margin = np.minimum(margin_lo, margin_hi)
    idx = int(np.argmin(a_margin))
    checks.append(
        CheckResult(
            name="a_within_envelope",
            passed=bool(a_margin.flat[idx] >= 0.0),
            margin=float(a_margin.flat[idx]),
            witness=_witness(a_vals, idx),
            note="sampled",
        )
    )

    grad_margin = consts.a_upper - np.abs(da_vals)
    idx = int(np.argmin(grad_margin))
    checks.append(
        CheckResult(
            name="a_gradient_bound",
            passed=bool(grad_margin.flat[idx] >= 0.0),
            margin=float(grad_margin.flat[idx]),
            witness=_witness(np.abs(da_vals), idx),
            note="sampled",
        )
    )

    upper_margin = consts.b_upper - b_total
    idx = int(np.argmin(upper_margin))
    checks.append(
        CheckResult(
            name="b_total_upper_bound",
            passed=bool(upper_margin.flat[idx] >= 0.0),
            margin=float(upper_margin.flat[idx]),
            witness=_witness(b_total, idx),
            note="sampled |b| + |div b| <= b_upper",
        )
    )

    lower_margin = b_total - consts.b_lower
    idx = int(np.argmin(lower_margin))
    checks.append(
        CheckResult(
            name="b_total_lower_bound",
            passed=bool(lower_margin.flat[idx] >= 0.0),
            margin=float(lower_margin.flat[idx]),
            witness=_witness(b_total, idx),
            note="sampled; recorded constant, unused by the estimates",
        )
    )

    c_margin = c_vals - consts.c_lower
    idx = int(np.argmin(c_margin))
    checks.append(
        CheckResult(
            name="c_lower_bound",
            passed=bool(c_margin.flat[idx] >= 0.0),
            margin=float(c_margin.flat[idx]),
            witness=_witness(c_vals, idx),
            note="sampled",
        )
    )

    return ValidationReport(tuple(checks))


def validate_monotonicity(
    expr: Expression,
    role: str,
    samples: int = 200,
    u_range: tuple[float, float] = (-5.0, 5.0),
    *,
    r_max: float = 1.0,
    t_max: float = 1.0,
) -> ValidationReport:
    """Sampled necessary checks: strict increase in u, value(w) + value(-w) >= 0,
    and value 0 at u = 0 (to 1e-12).

    ``role`` is "h" (expression in r, t, u; sampled over (r, t) as well) or
    "psi" (expression in u alone).
    """
    if role not in ("h", "psi"):
        raise ValueError(f"role must be 'h' or 'psi', got {role!r}")
    if samples < 100:
        raise ValueError(f"samples must be at least 100, got {samples}")
    lo, hi = u_range
    if not (lo < 0.0 < hi):
        raise ValueError("u_range must contain 0 in its interior")

    u = np.linspace(lo, hi, samples)
    if role == "h":
        side = max(2, int(math.isqrt(samples)))
        r = np.linspace(0.0, r_max, side)[:, None, None]
        t = np.linspace(0.0, t_max, side)[None, :, None]
        bind = {"r": r, "t": t, "u": u[None, None, :]}
        bind0 = {"r": r[..., 0], "t": t[..., 0], "u": 0.0}
        full_shape = (side, side, samples)
    else:
        bind = {"u": u}
        bind0 = {"u": 0.0}
        full_shape = (samples,)

    def _vals(binding, shape):
        try:
            out = evaluate(expr, binding)
        except ExprError as exc:
            raise ValidationEvaluationError(f"evaluating {role} failed: {exc}") from exc
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    vals = _vals(bind, full_shape)
    inc_margin = float(np.min(np.diff(vals, axis=-1)))
    du = u[1] - u[0]

    w = np.linspace(0.0, max(abs(lo), abs(hi)), samples)
    bind_w = dict(bind)
    bind_w["u"] = w if role == "psi" else w[None, None, :]
    bind_mw = dict(bind)
    bind_mw["u"] = -w if role == "psi" else -w[None, None, :]
    vals_w = _vals(bind_w, full_shape)
    vals_mw = _vals(bind_mw, full_shape)
    odd_margin = float(np.min(vals_w + vals_mw))
    # value(w) + value(-w) is exactly zero for odd maps, but pow() is not
    # sign-symmetric to the last ulp; allow scale-relative roundoff.
    odd_slack = 1e-12 * (1.0 + float(np.max(np.abs(vals_w))))

    zero_shape = () if role == "psi" else full_shape[:2]
    zero_resid = float(np.max(np.abs(_vals(bind0, zero_shape))))

    checks = (
        CheckResult(
            name="strictly_increasing",
            passed=inc_margin > 0.0,
            margin=inc_margin,
            witness=(du,),
            note="sampled consecutive differences in u; necessary only",
        ),
        CheckResult(
            name="odd_superadditive",
            passed=odd_margin >= -odd_slack,
            margin=odd_margin,
            note="sampled value(w) + value(-w) >= 0; necessary only",
        ),
        CheckResult(
            name="zero_at_origin",
            passed=zero_resid <= 1e-12,
            margin=1e-12 - zero_resid,
            note="value at u=0",
        ),
    )
    return ValidationReport(checks)


def validate_compatibility(spec: ProblemSpec) -> ValidationReport:
    """Initial data must satisfy the boundary relation with zero data at t=0,
    the boundary data must start at zero, and the radial profile must be
    symmetric at the origin (phi'(0) = 0)."""
    tol = 1e-10
    d0 = evaluate(spec.d, {"t": 0.0})
    phi_R = evaluate(spec.phi, {"r": spec.geometry.radius})
    dphi = derivative(spec.phi, "r")
    dphi_R = evaluate(dphi, {"r": spec.geometry.radius})
    dphi_0 = evaluate(dphi, {"r": 0.0})

    if spec.boundary is BoundaryKind.ROBIN:
        resid = dphi_R + evaluate(spec.psi, {"u": phi_R})
    elif spec.boundary is BoundaryKind.NEUMANN:
        resid = evaluate(spec.psi, {"u": dphi_R})
    else:
        resid = evaluate(spec.psi, {"u": phi_R})

    checks = (
        CheckResult(
            name="boundary_data_initially_zero",
            passed=abs(d0) <= tol,
            margin=tol - abs(d0),
            witness=(float(d0),),
        ),
        CheckResult(
            name="initial_boundary_residual",
            passed=abs(resid) <= tol,
            margin=tol - abs(resid),
            witness=(float(resid),),
            note=f"{spec.boundary.value} relation applied to phi at r=R",
        ),
        CheckResult(
            name="initial_profile_symmetric",
            passed=abs(dphi_0) <= tol,
            margin=tol - abs(dphi_0),
            witness=(float(dphi_0),),
            note="phi'(0) = 0 required for radial regularity",
        ),
    )
    return ValidationReport(checks)


def invert_psi(psi: Expression, y: float, tol: float = 1e-12) -> float:
    """Solve psi(u) = y for a validated strictly increasing psi with psi(0)=0.

    Brackets the root by exponential expansion from [-1, 1], bisects, and
    polishes with safeguarded Newton steps using the symbolic derivative.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")

    def _psi(x):
        return evaluate(psi, {"u": x})

    if y == 0.0:
        return 0.0

    lo, hi = -1.0, 1.0
    for _ in range(60):
        if _psi(hi) >= y:
            break
        hi *= 2.0
    else:
        raise PsiInversionError(f"no upper bracket for psi = {to_text(psi)!r} at y={y!r}")
    for _ in range(60):
        if _psi(lo) <= y:
            break
        lo *= 2.0
    else:
        raise PsiInversionError(f"no lower bracket for psi = {to_text(psi)!r} at y={y!r}")

    dpsi = derivative(psi, "u")
    x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = _psi(x)
        if abs(fx - y) <= tol:
            break
        if fx < y:
            lo = x
        else:
            hi = x
        # Newton step, clipped back into the bracket when it escapes.
        try:
            slope = evaluate(dpsi, {"u": x})
        except ExprError:
            slope = 0.0
        if slope > 0:
            x_new = x - (fx - y) / slope
            if not (lo < x_new < hi):
                x_new = 0.5 * (lo + hi)
        else:
            x_new = 0.5 * (lo + hi)
        x = x_new
    fx = _psi(x)
    if abs(fx - y) > tol:
        raise PsiInversionError(
            f"inversion stalled for psi = {to_text(psi)!r} at y={y!r} (residual {fx - y:.3g})"
        )
    return float(x)


def zero_expression() -> Expression:
    return Num(0.0)
