"""Simulation and pseudo-likelihood estimation of COGARCH(p,q) models."""

from .convergence import (
    ConvergenceReport,
    TimeChange,
    aux_diagnostic,
    convergence_study,
    skorokhod_distance,
    sup_distance,
)
from .estimation import (
    EstimationResult,
    ObservedSeries,
    cond_variance,
    embed_spec,
    estimate,
    initial_point,
    pseudo_loglik,
    run_filter,
    state_update,
)
from .exceptions import *  # noqa: F401,F403
from .levy import (
    CompoundPoissonSpec,
    Grid,
    InnovationSeries,
    JumpPath,
    NormalJumps,
    TruncationSchedule,
    TwoPointJumps,
    first_jump_innovations,
    levy_moments,
    sample_jump_path,
    tail_mass,
    truncation_sequence,
)
from .linalg import build_companion, expm, induced_norm, linear_recursion_closed_form, log_norm
from .simulator import (
    CogarchSpec,
    SimulatedPath,
    simulate_discrete,
    simulate_exact,
    stationarity_check,
    stationary_mean,
)

__version__ = "0.1.0"
