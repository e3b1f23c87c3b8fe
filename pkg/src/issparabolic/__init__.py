"""Simulation and stability-envelope verification for radially symmetric
nonlinear parabolic equations on balls."""

from .bounds import (
    DisturbanceMagnitudes,
    InfeasibleConstantsError,
    IssEstimate,
    choose_epsilon,
    decay_rate_dirichlet,
    decay_rate_robin,
    disturbance_magnitudes,
    example_gain_g,
    iss_bound_dirichlet,
    iss_bound_neumann,
    iss_bound_robin,
    max_estimate_dirichlet,
    max_estimate_robin,
    r0_constant,
)
from .exprlang import Expression, derivative, evaluate, parse, to_text
from .geometry import (
    BallGeometry,
    TraceEstimate,
    ball_volume,
    estimate_trace_constant,
    gamma_half_integer,
    sphere_area,
)
from .problem import (
    BoundaryKind,
    BoundConstants,
    ProblemSpec,
    invert_psi,
    validate_compatibility,
    validate_monotonicity,
    validate_structural,
)
from .scenario import LoadedScenario, ScenarioError, load_scenario
from .solver import (
    RadialGrid,
    SolutionTrajectory,
    StateField,
    StepFailure,
    TimeGrid,
    apply_boundary,
    l2_norm,
    solve,
    spatial_operator,
    step_implicit,
    sup_norm,
)
from .splitting import (
    SplitRun,
    build_v_spec,
    check_lyapunov_decay,
    check_max_estimate,
    check_max_principle,
    check_w_equation_residual,
    fit_decay_rate,
    run_full_verification,
    split_solve,
    verify_iss,
)

__version__ = "0.1.0"
