"""Feedback-policy training for continuously measured open quantum systems.

The package simulates diffusive stochastic-master-equation trajectories in
vectorized batches and trains explicit state-feedback policies by adaptive
stochastic search over a Gaussian parameter distribution, with a
proportional benchmark controller and a config-driven CLI on top.
"""

from .baseline import BaselineController, BaselineSpec, baseline_eval
from .cost import CostSpec, ShapeSpec, q_resolve, running_cost, shape, trajectory_cost
from .evaluate import EnsembleStats, evaluate_ensemble
from .gass import (
    GassConfig,
    SamplingDistribution,
    gradient_estimate,
    mean_update,
    optimize,
    sample_params,
    search,
    shape_weights,
)
from .policy import Policy, PolicySpec, featurize, init_params, param_count
from .qmath import (
    DegeneracyReport,
    degeneracy_report,
    fidelity_overlap,
    random_pure_state,
    symmetric_bell_density,
)
from .simulator import (
    SeedSpec,
    SimConfig,
    Trajectory,
    batch_rollouts,
    em_step,
    lindblad_propagate,
    rollout,
)
from .systems import QndSystem, homodyne_system, two_qubit_system

__version__ = "0.1.0"

__all__ = [
    "BaselineController",
    "BaselineSpec",
    "CostSpec",
    "DegeneracyReport",
    "EnsembleStats",
    "GassConfig",
    "Policy",
    "PolicySpec",
    "QndSystem",
    "SamplingDistribution",
    "SeedSpec",
    "ShapeSpec",
    "SimConfig",
    "Trajectory",
    "baseline_eval",
    "batch_rollouts",
    "degeneracy_report",
    "em_step",
    "evaluate_ensemble",
    "featurize",
    "fidelity_overlap",
    "gradient_estimate",
    "homodyne_system",
    "init_params",
    "lindblad_propagate",
    "mean_update",
    "optimize",
    "param_count",
    "q_resolve",
    "random_pure_state",
    "rollout",
    "running_cost",
    "sample_params",
    "search",
    "shape",
    "shape_weights",
    "symmetric_bell_density",
    "trajectory_cost",
    "two_qubit_system",
]
