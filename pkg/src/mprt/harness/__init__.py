"""Synthetic generators and reproducible benchmark jobs."""

from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    Scenario,
    run_experiment,
    run_null_pvalue_hist,
    run_pc_comparison,
    run_type12,
)
from .generators import (
    DiscretizationPolicy,
    ScmSpec,
    apply_discretization,
    gen_rank_instance,
    gen_scm,
    population_covariance,
    sample_scm,
)

__all__ = [
    "DiscretizationPolicy",
    "ExperimentConfig",
    "ExperimentResult",
    "Scenario",
    "ScmSpec",
    "apply_discretization",
    "gen_rank_instance",
    "gen_scm",
    "population_covariance",
    "run_experiment",
    "run_null_pvalue_hist",
    "run_pc_comparison",
    "run_type12",
    "sample_scm",
]
