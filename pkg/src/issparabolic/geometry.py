"""Ball and sphere measures, and a numerical trace-inequality constant.

Every domain in this toolkit is a ball of radius R in R^n centred at the
origin, and every field is radially symmetric.  The trace constant is
therefore estimated over the radial subspace only: it is the best C in

    sqrt(|boundary|) * |u(R)|  <=  C * (||u||_L2 + ||grad u||_L2)

over piecewise-linear radial test functions, which is a lower
approximation of the full radial-subspace constant.  Callers are expected
to inflate it by a safety factor (default 1.1 elsewhere in the toolkit)
or to supply their own constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.linalg import solveh_banded


class GammaDomainError(ValueError):
    """Argument is not a positive integer or half-integer."""


class TraceEstimationError(RuntimeError):
    """Trace-constant iteration failed to converge; carries the best value seen."""

    def __init__(self, message: str, best_value: float):
        super().__init__(message)
        self.best_value = best_value


@dataclass(frozen=True)
class BallGeometry:
    """Ball of radius ``radius`` in ``dimension`` space dimensions."""

    dimension: int
    radius: float

    def __post_init__(self):
        if not isinstance(self.dimension, int) or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension!r}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius!r}")


@dataclass(frozen=True)
class TraceEstimate:
    """Result of the radial trace-constant search."""

    value: float
    grid_resolution: int
    converged: bool


def gamma_half_integer(m) -> float:
    """Gamma(m) for positive integer or half-integer m, via exact recurrences.

    Integers use Gamma(k) = (k-1)!.  Half-integers use
    Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!), evaluated with exact
    rational arithmetic before the final float conversion.
    """
    two_m = 2 * m
    if two_m != round(two_m) or m <= 0:
        raise GammaDomainError(f"gamma_half_integer needs a positive (half-)integer, got {m!r}")
    two_m = int(round(two_m))
    if two_m % 2 == 0:
        k = two_m // 2
        return float(math.factorial(k - 1))
    k = (two_m - 1) // 2
    ratio = Fraction(math.factorial(2 * k), 4**k * math.factorial(k))
    return float(ratio) * math.sqrt(math.pi)


def unit_sphere_area(dimension: int) -> float:
    """Surface measure of the unit sphere in R^n: 2 pi^(n/2) / Gamma(n/2)."""
    n = dimension
    return 2.0 * math.pi ** (n / 2.0) / gamma_half_integer(n / 2.0)


def ball_volume(geom: BallGeometry) -> float:
    """n-dimensional Lebesgue measure of the ball: pi^(n/2) R^n / ((n/2) Gamma(n/2))."""
    n, r = geom.dimension, geom.radius
    return math.pi ** (n / 2.0) * r**n / ((n / 2.0) * gamma_half_integer(n / 2.0))


def sphere_area(geom: BallGeometry) -> float:
    """(n-1)-dimensional measure of the boundary sphere: 2 pi^(n/2) R^(n-1) / Gamma(n/2)."""
    n, r = geom.dimension, geom.radius
    return unit_sphere_area(n) * r ** (n - 1)


# 4-point Gauss-Legendre on [-1, 1]: exact for polynomials of degree <= 7,
# which covers the weighted element integrals r^(n-1) * (linear)^2 for n <= 6.
_GAUSS_X = np.array(
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526]
)
_GAUSS_W = np.array(
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]
)


def _radial_fe_matrices(geom: BallGeometry, resolution: int):
    """Mass and stiffness matrices (symmetric tridiagonal, upper-banded storage)
    of the piecewise-linear radial space, with measure weight r^(n-1) and the
    unit-sphere area factor folded in."""
    n = geom.dimension
    nodes = np.linspace(0.0, geom.radius, resolution + 1)
    h = nodes[1] - nodes[0]
    left = nodes[:-1]

    # Gauss points per element, shape (resolution, 4).
    rg = left[:, None] + (0.5 * h) * (_GAUSS_X[None, :] + 1.0)
    wg = (0.5 * h) * _GAUSS_W[None, :] * rg ** (n - 1)
    phi1 = (rg - left[:, None]) / h  # rising hat on the element
    phi0 = 1.0 - phi1

    m00 = np.sum(wg * phi0 * phi0, axis=1)
    m01 = np.sum(wg * phi0 * phi1, axis=1)
    m11 = np.sum(wg * phi1 * phi1, axis=1)
    ke = np.sum(wg, axis=1) / h**2  # gradients are +-1/h on the element

    size = resolution + 1
    scale = unit_sphere_area(n)
    mass = np.zeros((2, size))
    stiff = np.zeros((2, size))
    mass[1, :-1] += m00
    mass[1, 1:] += m11
    mass[0, 1:] = m01
    stiff[1, :-1] += ke
    stiff[1, 1:] += ke
    stiff[0, 1:] = -ke
    return mass * scale, stiff * scale


def _banded_quadratic(band, u):
    """u^T A u for a symmetric tridiagonal A in upper-banded storage.
    Clipped at zero: the forms here are positive semidefinite and roundoff
    cancellation can leave a tiny negative value for near-kernel vectors."""
    value = float(np.dot(band[1], u * u) + 2.0 * np.dot(band[0, 1:], u[:-1] * u[1:]))
    return max(value, 0.0)


def estimate_trace_constant(
    geom: BallGeometry,
    resolution: int,
    *,
    tol: float = 1e-12,
    max_iters: int = 200,
    alpha_starts=(0.1, 0.3, 0.5, 0.7, 0.9),
) -> TraceEstimate:
    """Maximise the discrete trace quotient over piecewise-linear radial functions.

    The quotient Q(u) = sqrt(|boundary|) |u(R)| / (||u|| + ||u'||) is
    maximised by coordinate ascent on the equivalent two-block problem:
    for a fixed split weight alpha the optimal u solves
    (M/alpha + K/(1-alpha)) u = e_R (a rank-one generalised eigenproblem
    with closed-form solution), and for fixed u the optimal alpha is
    ||u|| / (||u|| + ||u'||).  Both steps increase Q, so the iteration is
    monotone; several alpha starts guard against coordinate-wise stalls.

    ``resolution`` counts grid intervals, so doubling it yields a nested
    piecewise-linear space and the estimate cannot decrease.
    """
    if resolution < 16:
        raise ValueError(f"resolution must be at least 16, got {resolution}")
    mass, stiff = _radial_fe_matrices(geom, resolution)
    boundary_measure = sphere_area(geom)
    rhs = np.zeros(resolution + 1)
    rhs[-1] = 1.0

    # Quotient of the constant test function (in closed form; the Gauss
    # rule integrates its mass exactly).  For split weights driven to the
    # alpha -> 1 corner the iterates degenerate towards constants through
    # near-singular solves, so a start that reaches the corner is declared
    # converged at this candidate value rather than trusted numerically.
    q_const = math.sqrt(boundary_measure / ball_volume(geom))
    corner = 1e-6

    best_q = q_const
    any_converged = False
    best_converged_q = 0.0
    for alpha in alpha_starts:
        q_prev = 0.0
        converged = False
        for _ in range(max_iters):
            if alpha >= 1.0 - corner:
                converged = True
                q_prev = q_const
                break
            alpha = max(alpha, corner)
            try:
                u = solveh_banded(mass / alpha + stiff / (1.0 - alpha), rhs)
            except (ValueError, np.linalg.LinAlgError):
                break
            norm_u = math.sqrt(_banded_quadratic(mass, u))
            norm_du = math.sqrt(_banded_quadratic(stiff, u))
            denom = norm_u + norm_du
            if not (math.isfinite(denom) and denom > 0):
                break
            q = math.sqrt(boundary_measure) * abs(u[-1]) / denom
            alpha = norm_u / denom
            if abs(q - q_prev) <= tol * max(q, 1.0):
                converged = True
                q_prev = q
                break
            q_prev = q
        best_q = max(best_q, q_prev)
        if converged:
            any_converged = True
            best_converged_q = max(best_converged_q, q_prev)

    if not any_converged:
        raise TraceEstimationError(
            f"trace-constant search did not converge within {max_iters} iterations "
            f"(best value {best_q:.12g})",
            best_value=best_q,
        )
    return TraceEstimate(
        value=max(best_converged_q, q_const),
        grid_resolution=resolution,
        converged=True,
    )
