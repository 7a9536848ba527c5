"""Penalized Poisson network meta-analysis of IPD time-to-event data."""

__version__ = "0.1.0"

from .data_model import (
    CovariateSpec,
    DataError,
    IpdDataset,
    PatientRecord,
    TreatmentNetwork,
    Trial,
    build_dataset,
    derive_network,
    encode_covariates,
    load_ipd,
)
from .design import ModelConfig, PenalizedProblem, build_problem, treatment_contrasts
from .risk import PeriodGrid, RiskTable, choose_boundaries, collapse, expand
from .selection import (
    SelectionReport,
    adaptive_weights,
    bootstrap_ci,
    calibrate_ridge,
    lasso_path,
    penalty_from_tau,
    run_fx_adlasso,
    run_het_adlasso,
    tau_from_penalty,
    two_step_bic,
)
from .simulator import ScenarioSpec, TrueModel, scenario_spec, simulate_dataset, true_support
from .solver import FitResult, PenaltyVector, SolverError, fit, hat_block_df

__all__ = [
    "CovariateSpec",
    "DataError",
    "FitResult",
    "IpdDataset",
    "ModelConfig",
    "PatientRecord",
    "PenalizedProblem",
    "PenaltyVector",
    "PeriodGrid",
    "RiskTable",
    "ScenarioSpec",
    "SelectionReport",
    "SolverError",
    "TreatmentNetwork",
    "Trial",
    "TrueModel",
    "adaptive_weights",
    "bootstrap_ci",
    "build_dataset",
    "build_problem",
    "calibrate_ridge",
    "choose_boundaries",
    "collapse",
    "derive_network",
    "encode_covariates",
    "expand",
    "fit",
    "hat_block_df",
    "lasso_path",
    "load_ipd",
    "penalty_from_tau",
    "run_fx_adlasso",
    "run_het_adlasso",
    "scenario_spec",
    "simulate_dataset",
    "tau_from_penalty",
    "treatment_contrasts",
    "true_support",
    "two_step_bic",
]
