"""Causally-guided automated feature engineering for tabular data.

Phase I learns a sparse DAG over features and target to group features by
causal role; Phase II searches the transformation space with three cascaded
Q-learning agents under causally shaped rewards. Includes a synthetic SCM
test bed, a deterministic random-forest evaluator, and a covariate-shift
robustness harness.
"""

from .config import RunConfig, build_config
from .data import (CLASSIFICATION, REGRESSION, Dataset, ScmSpec, SplitPlan,
                   generate_scm, load_csv, macro_f1, one_minus_rae,
                   split_stratified)
from .engine import EngineResult, RunReport, check_termination, correlation_grouping, run
from .graph import (CausalGroups, Digraph, EdgeProbabilities, SolverOptions,
                    WeightedAdjacency, acyclicity_h, assign_roles,
                    bootstrap_ensemble, edge_f1, notears_fit, screen_groups,
                    select_lambda_bic, shd, threshold_to_dag)
from .ops import (Recipe, apply_binary, apply_recipe, apply_unary, op_depth,
                  parse_recipe, prune_features, sample_pairs, serialize_recipe)
from .rewards import (RewardBreakdown, StrategyWeights, adapt_weights,
                      causal_bonus, causal_hierarchical_sample, complexity_penalty,
                      entropy_bonus, perf_reward, total_reward)
from .shift import ShiftSpec, apply_shift, robustness_experiment

__version__ = "0.1.0"

__all__ = [
    "CLASSIFICATION", "REGRESSION", "CausalGroups", "Dataset", "Digraph",
    "EdgeProbabilities", "EngineResult", "Recipe", "RewardBreakdown",
    "RunConfig", "RunReport", "ScmSpec", "ShiftSpec", "SolverOptions",
    "SplitPlan", "StrategyWeights", "WeightedAdjacency", "acyclicity_h",
    "adapt_weights", "apply_binary", "apply_recipe", "apply_shift",
    "apply_unary", "assign_roles", "bootstrap_ensemble", "build_config",
    "causal_bonus", "causal_hierarchical_sample", "check_termination",
    "complexity_penalty", "correlation_grouping", "edge_f1", "entropy_bonus",
    "generate_scm", "load_csv", "macro_f1", "notears_fit", "one_minus_rae",
    "op_depth", "parse_recipe", "perf_reward", "prune_features",
    "robustness_experiment", "run", "sample_pairs", "screen_groups",
    "select_lambda_bic", "serialize_recipe", "shd", "split_stratified",
    "threshold_to_dag", "total_reward",
]
