"""Deterministic shape optimization of mean quadratic objectives.

The expectation of a quadratic cost whose state has a random right-hand
side is fully determined by the data's two-point correlation.  This package
factorizes that correlation with a certified pivoted Cholesky
decomposition, solves one deterministic boundary value problem per factor,
and drives a level-set descent with the resulting exact mean objective and
shape gradient.  A dense finite-dimensional oracle cross-checks every
formula against brute-force and Monte-Carlo computations.
"""

from .config import OptimizationConfig, OracleConfig, ScenarioSpec, parse_config
from .correlation import (
    ClosedFormKernel,
    FiniteRankKernel,
    LowRankFactorization,
    assemble_correlation_matrix,
    factors_to_loads,
    finite_rank_correlated_pair,
    pivoted_cholesky,
    profile_h,
    profile_k,
)
from .fem import (
    Field,
    FieldKind,
    HookeLaw,
    OperatorSpec,
    StateEnsemble,
    apply_dirichlet,
    assemble_elasticity,
    assemble_mass,
    assemble_poisson,
    solve_spd,
    solve_state_ensemble,
)
from .levelset import (
    CircleHole,
    LevelSet,
    RectHole,
    advect,
    density_from_levelset,
    extend_velocity,
    initialize_levelset,
    material_fraction,
    redistance,
)
from .mesh import (
    BoundaryTag,
    Mesh,
    Rect,
    boundary_mass_matrix,
    generate_structured_mesh,
    tag_boundary,
    volume,
)
from .objectives import (
    GradientDensity,
    TrackingData,
    assemble_shape_derivative,
    compliance_gradient,
    compliance_mean,
    dirichlet_energy_gradient,
    dirichlet_energy_mean,
    tracking_adjoints,
    tracking_gradient,
    tracking_mean,
)
from .optimizer import (
    OptimizationHistory,
    augmented_lagrangian_value,
    multiplier_update,
    run_optimization,
    step_control,
)
from .oracle import (
    DesignSystem,
    RandomLoadModel,
    discrete_commutation_check,
    gradient_dense,
    mc_estimate,
    objective_dense,
    solve_correlation_dense,
    solve_cross_correlation_dense,
)

__version__ = "0.1.0"
