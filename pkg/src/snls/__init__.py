"""Finite-difference simulation of the 1D focusing stochastic NLS.

Three mass-conservative implicit schemes (MEC, CN, LE), discretized
space-time white noise on hat functions, mass-conservative adaptive mesh
refinement, and the blow-up diagnostics built on top of them.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    FitRefusedError,
    NonConvergenceError,
    NumericalBreakdownError,
)
from .mesh import (
    Mesh,
    RefinementConfig,
    build_uniform_mesh,
    compute_refinement_flags,
    d1_apply,
    d2_apply,
    midpoint_interpolate,
    refine,
)
from .noise import (
    NoiseCoeffs,
    NoiseKind,
    NoiseModel,
    draw_increments,
    forcing_term,
    noise_coefficients,
    trace_and_mphi,
)
from .observables import (
    TrajectoryDiagnostics,
    approx_mass_trapezoid,
    blowup_center,
    contraction_rate,
    discrete_energy,
    discrete_mass,
    error_ranges,
    focusing_scale,
    gradient_norm,
    ground_state,
    profile_distance,
    rescaled_time,
    series_range,
    write_series_csv,
)
from .schemes import (
    Scheme,
    SolverConfig,
    State,
    StepReport,
    adapt_dt,
    le_potential,
    mec_ratio,
    step,
    tridiagonal_solve,
)
from .experiments import (
    EnsembleSummary,
    RunConfig,
    center_statistics,
    expected_curves,
    fit_a_correction,
    fit_blowup_rate,
    initial_field,
    run_ensemble,
    run_trajectory,
    supercritical_rate_check,
)
