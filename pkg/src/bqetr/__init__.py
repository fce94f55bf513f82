"""Tsallis-regularized Q-learning and bootstrapped Q-ensembles on finite MDPs."""

from .ensemble import EnsembleConfig, MaskDistribution, evaluation_policy, run_algorithm2
from .estimators import BootstrappedTsallisQLearner, EpsilonGreedyQLearner, SparsePolicyTransformer, TsallisQLearner
from .exceptions import ConfigError, ConvergenceError, DivergenceError, ParameterError
from .mdp import (
    TabularMdp,
    bellman_residue,
    load_mdp,
    make_chain,
    make_random_mdp,
    policy_evaluation,
    regularized_fixed_point,
    save_mdp,
    validate_mdp,
    value_iteration,
)
from .policy import (
    ActionDistribution,
    RegularizerParams,
    approx_support,
    approx_threshold,
    exact_policy_q2,
    softplus_policy,
    tsallis_entropy,
)
from .qlearning import LearnerConfig, epsilon_greedy_learner, run_algorithm1, soft_q_learner

__version__ = "0.1.0"

__all__ = [
    "ActionDistribution",
    "BootstrappedTsallisQLearner",
    "ConfigError",
    "ConvergenceError",
    "DivergenceError",
    "EnsembleConfig",
    "EpsilonGreedyQLearner",
    "LearnerConfig",
    "MaskDistribution",
    "ParameterError",
    "RegularizerParams",
    "SparsePolicyTransformer",
    "TabularMdp",
    "TsallisQLearner",
    "approx_support",
    "approx_threshold",
    "bellman_residue",
    "epsilon_greedy_learner",
    "evaluation_policy",
    "exact_policy_q2",
    "load_mdp",
    "make_chain",
    "make_random_mdp",
    "policy_evaluation",
    "regularized_fixed_point",
    "run_algorithm1",
    "run_algorithm2",
    "save_mdp",
    "soft_q_learner",
    "softplus_policy",
    "tsallis_entropy",
    "validate_mdp",
    "value_iteration",
]
