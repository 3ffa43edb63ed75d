"""Covariate-adjusted treatment-effect estimation for completely randomized experiments."""

from .dataset import ArmView, Dataset, SyntheticPopulation, arm, load_csv, realize
from .design import Assignment, enumerate_assignments, rng_stream, sample_assignment
from .estimator import (
    AdjustedEstimate,
    difference_in_means,
    impute,
    lin_interactions,
    neyman_ci,
    oaxaca_blinder,
    tau_projective,
)
from .models import FittedModel, ModelSpec, SolverConfig, fit, predict
from .simulate import (
    EstimatorConfig,
    SimulationPlan,
    SimulationReport,
    exhaustive_bias,
    generate_population,
    population_oracle,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustedEstimate", "ArmView", "Assignment", "Dataset", "EstimatorConfig",
    "FittedModel", "ModelSpec", "SimulationPlan", "SimulationReport", "SolverConfig",
    "SyntheticPopulation", "arm", "difference_in_means", "enumerate_assignments",
    "exhaustive_bias", "fit", "generate_population", "impute", "lin_interactions",
    "load_csv", "neyman_ci", "oaxaca_blinder", "population_oracle", "predict",
    "realize", "rng_stream", "run", "sample_assignment", "tau_projective",
]
