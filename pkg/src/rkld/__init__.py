"""Langevin dynamics in a reproducing kernel Hilbert space via spectral Galerkin truncation."""

from .config import ConfigError, ExperimentConfig, Manifest
from .diagnostics import (
    Estimate,
    RateFit,
    TheoryConstants,
    discrepancy_budget,
    fit_loglog,
    gibbs_concentration_bound,
    ou_moment_bounds,
    ou_stationary_variances,
    spectral_gap,
    theory_constants,
)
from .dynamics import (
    ChainConfig,
    ChainState,
    NumericalAbort,
    RunSummary,
    coupled_run,
    load_state,
    make_rng,
    run_chain,
    run_ensemble,
    save_state,
)
from .objective import Dataset, LossFamily, MinimizerPair, ObjectiveSpec, loss_family
from .spectral import (
    DiagonalOperator,
    KernelSpec,
    SpectralVector,
    operator_a,
    project,
    resolvent_s_eta,
    resolvent_s_eta_prime,
    rkhs_norm,
    weighted_norm,
)

__version__ = "0.1.0"
