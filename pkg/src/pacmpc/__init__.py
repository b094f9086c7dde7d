"""Sampling-based stochastic NMPC with certified cost and violation bounds.

The toolkit optimizes Gaussian distributions over control trajectories so
that high-confidence upper bounds on expected cost and on constraint
violation probability are minimized, supports per-sample LQR feedback
during evaluation, and runs the optimizer in a receding-horizon loop.
"""

from .dynamics import (BicycleModel, DynamicsModel, LinearModel, NoiseModel,
                       linearize, linearize_batch, step_nominal,
                       step_nominal_batch, step_stochastic,
                       step_stochastic_batch, wrap_angle)
from .feedback import (FeedbackPolicy, LqrWeights, apply_feedback,
                       compute_feedback_params, riccati_gains_batch)
from .nmpc import (ExecutablePolicy, IntervalRecord, NmpcStepResult, RunLog,
                   create_prior, nmpc_step, run_closed_loop)
from .pac_bound import (BoundOptConfig, BoundReport, EvaluationBatch,
                        bound_gradient, evaluate_bound, optimize_bound,
                        robust_log)
from .policy import (PolicyHyperparams, importance_ratio, log_density,
                     log_density_batch, log_importance_ratio,
                     renyi_divergence_2, sample_trajectory)
from .rng import sample_stream, stream_key
from .rollout import (CostModel, ObstacleSet, RolloutResult, cost_constr,
                      evaluate_batch, mean_rollout_states,
                      sample_cost_constraint, sample_cost_constraint_feedback)
from .scenario import (PlannerConfig, Route, Scenario, ScenarioError,
                       builtin_scenario, list_builtin_scenarios,
                       load_scenario, save_scenario, scenario_from_dict,
                       scenario_to_dict)
from .trajopt import (IterationRecord as OptIterationRecord, TrajOptResult,
                      evaluate_distribution, monte_carlo_estimate,
                      trajectory_distribution_opt)

__version__ = "0.1.0"

__all__ = [
    "BicycleModel", "BoundOptConfig", "BoundReport", "CostModel",
    "DynamicsModel", "EvaluationBatch", "ExecutablePolicy", "FeedbackPolicy",
    "IntervalRecord", "LinearModel", "LqrWeights", "NmpcStepResult",
    "NoiseModel", "ObstacleSet", "OptIterationRecord", "PlannerConfig",
    "PolicyHyperparams", "RolloutResult", "Route", "RunLog", "Scenario",
    "ScenarioError", "TrajOptResult", "apply_feedback", "bound_gradient",
    "builtin_scenario", "compute_feedback_params", "cost_constr",
    "create_prior", "evaluate_batch", "evaluate_bound",
    "evaluate_distribution", "importance_ratio", "linearize",
    "linearize_batch", "list_builtin_scenarios", "load_scenario",
    "log_density", "log_density_batch", "log_importance_ratio",
    "mean_rollout_states", "monte_carlo_estimate", "nmpc_step",
    "optimize_bound", "renyi_divergence_2", "riccati_gains_batch",
    "robust_log", "run_closed_loop", "sample_cost_constraint",
    "sample_cost_constraint_feedback", "sample_stream", "sample_trajectory",
    "save_scenario", "scenario_from_dict", "scenario_to_dict",
    "step_nominal", "step_nominal_batch", "step_stochastic",
    "step_stochastic_batch", "stream_key", "trajectory_distribution_opt",
    "wrap_angle",
]
