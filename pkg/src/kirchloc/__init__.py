"""Spectral and localization tools for random Kirchhoff quantum graphs on Z^d."""

from .band_edge import (
    ShiftedOperator,
    band_ends,
    combes_thomas_check,
    detect_edges,
    ids_curve,
    lifshitz_fit,
    log_grid,
    probability_bound_check,
)
from .edge import EdgeProfile, boundary_values, dirichlet_eigenvalues, dirichlet_green, solve_basis
from .errors import (
    ConditioningFailure,
    ConfigError,
    DirichletProximity,
    HeavyTailWarning,
    InsufficientData,
    InvalidProfile,
    KirchlocError,
    NearSingular,
    NumericalOverflow,
    QuadratureFailure,
    RootFindingFailure,
    WindowSplitRequired,
)
from .lattice import (
    Box,
    DisorderModel,
    LatticeSpec,
    band_edges,
    build_operator,
    hopping_coefficients,
    sample_disorder,
)
from .localization import (
    CriterionConstants,
    estimate_constants,
    finite_volume_criterion,
    fit_decay,
    fractional_moments,
    single_point_criterion,
)
from .spectra import (
    GreenKernelQuery,
    convergence_test,
    find_eigenvalues,
    green_kernel,
    reconstruct_eigenfunction,
)

__version__ = "0.1.0"
