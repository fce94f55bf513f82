"""scikit-learn style wrappers around the learners and policy maps.

Learners are fitted on a :class:`~bqetr.mdp.TabularMdp` (the environment
plays the role of the training data). After ``fit`` they expose the learned
Q-table, and ``predict`` / ``predict_proba`` / ``decision_function`` take a
1-D array of state ids. ``score`` is the exact expected discounted return of
the fitted greedy policy from the environment's initial state.

:class:`SparsePolicyTransformer` maps a 2-D array of Q-rows to action
distributions and has no fitted state beyond the row width.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ensemble import DEFAULT_Q_VALUES, EnsembleConfig, MaskDistribution, run_algorithm2
from .exceptions import ParameterError
from .mdp import TabularMdp, greedy_actions, policy_evaluation
from .policy import exact_policy_q2, greedy_policy, softmax_policy, softplus_policy_batch
from .qlearning import (
    DEFAULT_ALPHA0,
    DEFAULT_ALPHA_DELTA,
    LearnerConfig,
    epsilon_greedy_learner,
    run_algorithm1,
)

__all__ = [
    "BootstrappedTsallisQLearner",
    "EpsilonGreedyQLearner",
    "SparsePolicyTransformer",
    "TsallisQLearner",
]


def _check_mdp(mdp):
    if not isinstance(mdp, TabularMdp):
        raise ParameterError(f"fit expects a TabularMdp (got {type(mdp).__name__})")
    return mdp


def _check_states(estimator, states):
    check_is_fitted(estimator, "q_table_")
    states = check_array(np.asarray(states).reshape(-1, 1), dtype=None, ensure_all_finite=True).ravel()
    if states.size and not np.issubdtype(states.dtype, np.integer):
        if not np.all(np.equal(np.mod(states, 1), 0)):
            raise ParameterError("state ids must be integers")
        states = states.astype(int)
    if states.size and (states.min() < 0 or states.max() >= estimator.n_states_):
        raise ParameterError(f"state ids must lie in [0, {estimator.n_states_})")
    return states.astype(int)


class _QLearnerMixin:
    """Shared predict/score methods over a fitted ``q_table_``."""

    def decision_function(self, states):
        """Q-values of every action, shape ``(n_states_queried, n_actions)``."""
        states = _check_states(self, states)
        return self.q_table_[states]

    def predict(self, states):
        """Greedy action per state, lowest id on ties."""
        return greedy_actions(self.decision_function(states))

    def predict_proba(self, states):
        """Behaviour-policy probabilities at the final ``alpha``."""
        return softplus_policy_batch(self.decision_function(states), self.alpha_, self._proba_q())

    def score(self, mdp, y=None):
        """Initial-state value of the greedy policy, solved exactly."""
        mdp = _check_mdp(mdp)
        check_is_fitted(self, "q_table_")
        if mdp.n_states != self.n_states_ or mdp.n_actions != self.n_actions_:
            raise ParameterError("mdp shape differs from the one used in fit")
        pi = np.zeros_like(self.q_table_)
        pi[np.arange(self.n_states_), greedy_actions(self.q_table_)] = 1.0
        q_pi = policy_evaluation(mdp, pi)
        return float(np.sum(pi * q_pi, axis=1)[mdp.initial_state])

    def _proba_q(self):
        return self.q


class _LearnerBase(_QLearnerMixin, BaseEstimator):
    def _config(self, q):
        return LearnerConfig(
            q=q,
            alpha0=self.alpha0,
            alpha_delta=self.alpha_delta,
            gamma=self.gamma,
            batch_size=self.batch_size,
            learning_interval=self.learning_interval,
            buffer_capacity=self.buffer_capacity,
            backend=self.backend,
            learning_rate=self.learning_rate,
            init_scale=self.init_scale,
            step_cap=self.step_cap,
        )

    def _store(self, mdp, backend, records):
        self.q_table_ = backend.greedy_table()
        self.n_states_, self.n_actions_ = mdp.n_states, mdp.n_actions
        self.records_ = records
        self.returns_ = np.array([r.ret for r in records])
        self.alpha_ = records[-1].alpha
        return self


class TsallisQLearner(_LearnerBase):
    """Single Tsallis-regularized Q-learner with an annealed ``alpha``."""

    def __init__(self, q=2.0, alpha0=DEFAULT_ALPHA0, alpha_delta=DEFAULT_ALPHA_DELTA, episodes=200, seed=0,
                 gamma=None, batch_size=32, learning_interval=4, buffer_capacity=10_000,
                 backend="tabular", learning_rate=None, init_scale=0.0, step_cap=None):
        self.q = q
        self.alpha0 = alpha0
        self.alpha_delta = alpha_delta
        self.episodes = episodes
        self.seed = seed
        self.gamma = gamma
        self.batch_size = batch_size
        self.learning_interval = learning_interval
        self.buffer_capacity = buffer_capacity
        self.backend = backend
        self.learning_rate = learning_rate
        self.init_scale = init_scale
        self.step_cap = step_cap

    def fit(self, mdp, y=None):
        mdp = _check_mdp(mdp)
        backend, records = run_algorithm1(mdp, self._config(self.q), self.episodes, self.seed)
        return self._store(mdp, backend, records)


class EpsilonGreedyQLearner(_LearnerBase):
    """Unregularized baseline; ``predict_proba`` is the epsilon-greedy policy."""

    def __init__(self, epsilon=0.1, episodes=200, seed=0, gamma=None, batch_size=32, learning_interval=4,
                 buffer_capacity=10_000, backend="tabular", learning_rate=None, init_scale=0.0, step_cap=None):
        self.epsilon = epsilon
        self.episodes = episodes
        self.seed = seed
        self.gamma = gamma
        self.batch_size = batch_size
        self.learning_interval = learning_interval
        self.buffer_capacity = buffer_capacity
        self.backend = backend
        self.learning_rate = learning_rate
        self.init_scale = init_scale
        self.step_cap = step_cap

    # the wrapped learner ignores these; kept so _config stays shared
    alpha0 = 0.0
    alpha_delta = 0.0

    def fit(self, mdp, y=None):
        mdp = _check_mdp(mdp)
        backend, records = epsilon_greedy_learner(mdp, self._config(2.0), self.epsilon, self.episodes, self.seed)
        return self._store(mdp, backend, records)

    def predict_proba(self, states):
        rows = self.decision_function(states)
        probs = np.full(rows.shape, self.epsilon / rows.shape[1])
        probs[np.arange(len(rows)), greedy_actions(rows)] += 1.0 - self.epsilon
        return probs


class BootstrappedTsallisQLearner(_LearnerBase):
    """Bootstrapped ensemble of Tsallis Q-learners, one entropic index each.

    ``q_table_`` is the members' mean Q-table, so ``predict`` is the
    mean-Q greedy evaluation policy; ``member_tables_`` keeps each member.
    ``predict_proba`` averages the members' own softplus policies.
    """

    def __init__(self, q_values=DEFAULT_Q_VALUES, mask="bernoulli", mask_parameter=0.5, alpha0=DEFAULT_ALPHA0,
                 alpha_delta=DEFAULT_ALPHA_DELTA, episodes=200, seed=0, gamma=None, batch_size=32,
                 learning_interval=4, buffer_capacity=10_000, backend="tabular", learning_rate=None,
                 init_scale=0.0, step_cap=None):
        self.q_values = q_values
        self.mask = mask
        self.mask_parameter = mask_parameter
        self.alpha0 = alpha0
        self.alpha_delta = alpha_delta
        self.episodes = episodes
        self.seed = seed
        self.gamma = gamma
        self.batch_size = batch_size
        self.learning_interval = learning_interval
        self.buffer_capacity = buffer_capacity
        self.backend = backend
        self.learning_rate = learning_rate
        self.init_scale = init_scale
        self.step_cap = step_cap

    def fit(self, mdp, y=None):
        mdp = _check_mdp(mdp)
        config = EnsembleConfig(
            tuple(self.q_values), MaskDistribution(self.mask, self.mask_parameter), self._config(2.0)
        )
        result = run_algorithm2(mdp, config, self.episodes, self.seed)
        self.member_tables_ = np.stack([b.greedy_table() for b in result.backends])
        self.members_ = list(result.members)
        self._store(mdp, result.backends[0], result.records)
        self.q_table_ = self.member_tables_.mean(axis=0)
        return self

    def predict_proba(self, states):
        states = _check_states(self, states)
        rows = self.member_tables_[:, states]
        q = np.asarray(self.q_values, dtype=float)[:, None]
        return softplus_policy_batch(rows, self.alpha_, q).mean(axis=0)


class SparsePolicyTransformer(TransformerMixin, BaseEstimator):
    """Map Q-rows to action distributions.

    ``method`` is ``"softplus"`` (any ``q``), ``"exact"`` (``q = 2`` only),
    ``"softmax"`` or ``"greedy"``.
    """

    _METHODS = ("softplus", "exact", "softmax", "greedy")

    def __init__(self, q=2.0, alpha=1.0, method="softplus"):
        self.q = q
        self.alpha = alpha
        self.method = method

    def fit(self, X, y=None):
        X = check_array(X)
        if self.method not in self._METHODS:
            raise ParameterError(f"method must be one of {self._METHODS} (got {self.method!r})")
        if self.method == "exact" and self.q != 2:
            raise ParameterError("the exact method is only defined for q = 2")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(f"expected {self.n_features_in_} actions per row (got {X.shape[1]})")
        if self.method == "softplus":
            return softplus_policy_batch(X, self.alpha, self.q)
        if self.method == "exact":
            return np.stack([exact_policy_q2(row, self.alpha)[0].probs for row in X])
        if self.method == "softmax":
            return np.stack([softmax_policy(row, self.alpha).probs for row in X])
        return np.stack([greedy_policy(row).probs for row in X])
