"""Optimal MLMC hierarchies and a continuation MLMC engine to run them."""

from .engine import (
    ContinuationConfig,
    HierarchyMode,
    LevelStats,
    RunReport,
    calibrate_constants,
    cmlmc,
    computational_theta,
    error_report,
    run_fixed_hierarchy,
)
from .errors import (
    CalibrationUnavailable,
    ConvergenceError,
    HierarchyError,
    InfeasibleToleranceError,
    UnsupportedCaseError,
)
from .geometric import (
    GeometricSpec,
    force_geometric_theta,
    geometric_hierarchy,
    geometric_levels,
    geometric_optimal_h0,
    geometric_work_constant,
    optimal_beta,
    optimal_geometric_hierarchy,
)
from .hierarchy import (
    INTEGER_FEASIBLE,
    REAL_VALUED,
    Hierarchy,
    ModelConstants,
    ProblemRates,
    Tolerance,
    UniformMeshRule,
    estimator_variance,
    model_bias,
    round_hierarchy,
    total_work,
)
from .optimizer import (
    OptimalSetup,
    OptimizedHierarchy,
    asymptotic_work_constants,
    finest_mesh,
    inner_meshes_given_endpoints,
    l_bounds,
    mesh_ratio,
    optimal_hierarchy_fixed_L,
    optimal_L,
    optimal_samples,
    optimal_theta,
    optimal_theta_h0_constrained,
    predicted_work,
    theta_bounds_h0_constrained,
)
from .presets import PRESETS, get_preset
from .samplers import GbmParams, GbmSampler, SyntheticParams, SyntheticSampler, rng_stream

__version__ = "0.1.0"
