"""Spectral-projection + P1 finite element solver for semilinear elliptic SPDEs
driven by Gaussian noise, with coupled Monte Carlo convergence studies."""

from .covariance import (
    CovarianceSpec,
    Diagonal,
    General,
    NoiseSample,
    PowerLaw,
    RegularityIndex,
    WellPosedness,
    hs_norm_sq,
    is_well_posed,
    noise_from_eta,
    sample_projected_noise,
    truncation_error_sq,
)
from .eigenbasis import (
    Domain,
    EigenBasis,
    EigenPair,
    build_basis,
    fundamental_eigenvalue,
    poincare_constant,
    weyl_ratios,
)
from .errors import (
    ConfigError,
    ContractionError,
    IllPosedError,
    QuadratureError,
    SolveError,
)
from .fem import (
    FemFunction,
    FemSystem,
    Mesh,
    assemble,
    assemble_noise_load,
    build_mesh,
    l2_error,
    noise_load_matrix,
    prolong,
    ritz_project,
    write_function_csv,
    write_function_grid,
)
from .harness import (
    ConvergenceReport,
    RatePrediction,
    ReferenceSpec,
    StudyConfig,
    TruncationReport,
    coupled_levels,
    load_study_config,
    predicted_rate,
    predicted_rate_general,
    run_study,
    run_truncation_study,
)
from .solver import (
    FemSolution,
    Nonlinearity,
    SpectralSolution,
    contraction_estimate,
    solve_fem,
    solve_spectral,
)

__version__ = "0.1.0"
