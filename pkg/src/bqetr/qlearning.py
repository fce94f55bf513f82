"""Replay-driven Q-learning under Tsallis entropy regularization.

:func:`run_algorithm1` is the single-learner loop: act with the softplus
policy, store every transition, and at each learning interval fit one
minibatch against the regularized target before shrinking ``alpha``.
:func:`epsilon_greedy_learner` and :func:`soft_q_learner` reuse the same loop
with different behaviour/target policies so comparisons share every other
detail.

Randomness is split into independent streams (initialization, actions,
environment, replay, masks, member selection) spawned from one
``SeedSequence``. Switching the behaviour policy therefore never shifts the
minibatch draws, which is what makes the degenerate-case identities exact.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .exceptions import ParameterError
from .network import MlpSpec, SgdState, apply_update, forward, gradient, init_params, sync_target
from .policy import sample_action, softplus_policy_batch

__all__ = [
    "AlphaSchedule",
    "EpisodeRecord",
    "LearnerConfig",
    "MlpBackend",
    "ReplayBuffer",
    "TabularBackend",
    "TransitionBatch",
    "TransitionSample",
    "batch_loss",
    "epsilon_greedy_learner",
    "make_backend",
    "rng_streams",
    "run_algorithm1",
    "soft_q_learner",
    "td_target",
    "td_targets",
    "write_episode_csv",
]

log = logging.getLogger(__name__)

DEFAULT_ALPHA0 = 0.5
DEFAULT_ALPHA_DELTA = 0.5e-5


class TransitionSample(NamedTuple):
    state: int
    action: int
    next_state: int
    reward: float
    done: bool
    mask: tuple = (1.0,)


class TransitionBatch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    masks: np.ndarray  # (batch, ensemble_size) gating weights


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with per-member mask weights."""

    def __init__(self, capacity, mask_size=1):
        if capacity < 1:
            raise ParameterError(f"capacity must be >= 1 (got {capacity})")
        self.capacity = int(capacity)
        self.mask_size = int(mask_size)
        self._states = np.zeros(capacity, dtype=np.int64)
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._next = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._dones = np.zeros(capacity, dtype=bool)
        self._masks = np.ones((capacity, mask_size))
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def add(self, sample):
        if len(sample.mask) != self.mask_size:
            raise ParameterError(f"mask length {len(sample.mask)} != ensemble size {self.mask_size}")
        i = self.inserted % self.capacity
        self._states[i] = sample.state
        self._actions[i] = sample.action
        self._next[i] = sample.next_state
        self._rewards[i] = sample.reward
        self._dones[i] = sample.done
        self._masks[i] = sample.mask
        self.inserted += 1

    def _batch(self, idx):
        return TransitionBatch(
            self._states[idx], self._actions[idx], self._next[idx],
            self._rewards[idx], self._dones[idx], self._masks[idx],
        )

    def sample(self, batch_size, rng):
        """Uniform draw with replacement."""
        if not len(self):
            raise ParameterError("cannot sample from an empty buffer")
        return self._batch(rng.integers(0, len(self), size=batch_size))

    def contents(self):
        """Everything stored, oldest first."""
        n = len(self)
        start = self.inserted - n
        return self._batch(np.arange(start, start + n) % self.capacity)


@dataclass
class AlphaSchedule:
    """Linear decay ``alpha_k = max(alpha0 - k * delta, 0)``.

    The value is recomputed from the step count rather than accumulated, so
    it is exact after any number of steps.
    """

    alpha0: float = DEFAULT_ALPHA0
    delta: float = DEFAULT_ALPHA_DELTA
    steps: int = 0

    def __post_init__(self):
        if self.alpha0 < 0 or self.delta < 0:
            raise ParameterError("alpha0 and delta must be non-negative")

    @property
    def current(self):
        return max(self.alpha0 - self.steps * self.delta, 0.0)

    def step(self):
        self.steps += 1
        return self.current


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters shared by every learner in this module.

    ``gamma=None`` uses the environment's discount; ``learning_rate=None``
    picks 0.5 for the tabular backend and 1e-2 for the network backend;
    ``step_cap=None`` caps episodes at ``10 * n_states`` steps.
    """

    q: float = 2.0
    alpha0: float = DEFAULT_ALPHA0
    alpha_delta: float = DEFAULT_ALPHA_DELTA
    gamma: float | None = None
    batch_size: int = 32
    learning_interval: int = 4
    buffer_capacity: int = 10_000
    backend: str = "tabular"
    learning_rate: float | None = None
    target_sync_period: int = 100
    hidden_dims: tuple = (64,)
    momentum: float = 0.9
    init_scale: float = 0.0
    step_cap: int | None = None

    def __post_init__(self):
        errors = []
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            errors.append("batch_size must lie in [1, buffer_capacity]")
        if self.learning_interval < 1:
            errors.append("learning_interval must be >= 1")
        if self.backend not in ("tabular", "mlp"):
            errors.append(f"backend must be 'tabular' or 'mlp' (got {self.backend!r})")
        if self.target_sync_period < 1:
            errors.append("target_sync_period must be >= 1")
        if self.alpha0 < 0 or self.alpha_delta < 0:
            errors.append("alpha0 and alpha_delta must be non-negative")
        if self.init_scale < 0:
            errors.append("init_scale must be non-negative")
        if self.gamma is not None and not 0 <= self.gamma < 1:
            errors.append("gamma must lie in [0, 1)")
        if errors:
            raise ParameterError("; ".join(errors))

    def schedule(self):
        return AlphaSchedule(self.alpha0, self.alpha_delta)

    def resolved_learning_rate(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.5 if self.backend == "tabular" else 1e-2


@dataclass
class EpisodeRecord:
    index: int
    ret: float
    steps: int
    alpha: float
    terminated: bool
    truncated: bool
    actions: tuple = field(default=(), repr=False)
    member: int | None = None


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------


class TabularBackend:
    """Dense Q-table updated by plain TD steps (no separate target table)."""

    def __init__(self, n_states, n_actions, learning_rate, init_scale=0.0, rng=None, table=None):
        if table is not None:
            self.table = table
        elif init_scale:
            self.table = rng.uniform(-init_scale, init_scale, size=(n_states, n_actions))
        else:
            self.table = np.zeros((n_states, n_actions))
        self.learning_rate = learning_rate
        self.n_updates = 0

    def q_row(self, state):
        return self.table[state]

    def q_rows(self, states):
        return self.table[states]

    target_rows = q_rows

    def batch_loss(self, batch, targets, weights):
        """Squared-residual loss and the table increments it implies.

        Increments are ``learning_rate * residual``; several samples hitting
        the same cell contribute their weighted mean residual.
        """
        residual = targets - self.table[batch.states, batch.actions]
        loss = float(np.sum(weights * residual**2))
        num = np.zeros_like(self.table)
        den = np.zeros_like(self.table)
        np.add.at(num, (batch.states, batch.actions), weights * residual)
        np.add.at(den, (batch.states, batch.actions), weights)
        delta = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return loss, self.learning_rate * delta

    def apply(self, update, weight_total=None):
        self.table += update
        self.n_updates += 1

    def greedy_table(self):
        return self.table.copy()


class MlpBackend:
    """One-hot-input network with a periodically synced target copy."""

    def __init__(self, n_states, n_actions, config, rng_seed):
        self.spec = MlpSpec(n_states, tuple(config.hidden_dims), n_actions)
        self.params = init_params(self.spec, rng_seed)
        self.target = sync_target(self.params)
        self.optimizer = SgdState(momentum=config.momentum)
        self.learning_rate = config.resolved_learning_rate()
        self.sync_period = config.target_sync_period
        self.n_states = n_states
        self.n_updates = 0
        self._eye = np.eye(n_states)

    def q_row(self, state):
        return forward(self.params, self._eye[state])

    def q_rows(self, states):
        return forward(self.params, self._eye[states])

    def target_rows(self, states):
        return forward(self.target, self._eye[states])

    def batch_loss(self, batch, targets, weights):
        """Loss ``sum w (Q - target)^2`` and its exact parameter gradient."""
        x = self._eye[batch.states]
        q = forward(self.params, x)[np.arange(len(targets)), batch.actions]
        loss = float(np.sum(weights * (q - targets) ** 2))
        half = gradient(self.params, x, batch.actions, targets, weights)
        grad = half.with_flat(2.0 * half.flat())
        return loss, grad

    def apply(self, update, weight_total=1.0):
        # step on the mean half-squared error so the step size does not grow
        # with the batch
        scale = 1.0 / (2.0 * max(weight_total, 1.0))
        apply_update(self.params, update.with_flat(scale * update.flat()), self.optimizer, self.learning_rate)
        self.n_updates += 1
        if self.n_updates % self.sync_period == 0:
            self.target = sync_target(self.params)

    def greedy_table(self):
        return forward(self.params, self._eye)


def make_backend(config, n_states, n_actions, seed_seq):
    if config.backend == "tabular":
        return TabularBackend(
            n_states, n_actions, config.resolved_learning_rate(),
            config.init_scale, np.random.default_rng(seed_seq),
        )
    return MlpBackend(n_states, n_actions, config, seed_seq)


def rng_streams(seed):
    """Independent generators keyed by purpose, plus the init seed sequence."""
    init, action, env, replay, mask, select = np.random.SeedSequence(seed).spawn(6)
    return init, {
        "action": np.random.default_rng(action),
        "env": np.random.default_rng(env),
        "replay": np.random.default_rng(replay),
        "mask": np.random.default_rng(mask),
        "select": np.random.default_rng(select),
    }


# --------------------------------------------------------------------------
# targets and losses
# --------------------------------------------------------------------------


def _greedy_probs(q_rows, alpha):
    return softplus_policy_batch(q_rows, 0.0, 2.0)


def _softmax_probs(q_rows, alpha):
    if alpha == 0:
        return _greedy_probs(q_rows, alpha)
    z = (q_rows - q_rows.max(axis=-1, keepdims=True)) / alpha
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _softplus_probs(q):
    def probs(q_rows, alpha):
        return softplus_policy_batch(q_rows, alpha, q)
    return probs


def td_targets(rewards, dones, online_next, target_next, alpha, q, gamma, policy=None):
    """Batched regularized Double-DQN targets.

    The next-state distribution is built from the online rows and evaluated
    on the target rows. At ``alpha == 0`` this is exactly
    ``r + gamma * Q_target(s', argmax_b Q_online(s', b))``.
    """
    rewards = np.asarray(rewards, dtype=float)
    online_next = np.atleast_2d(online_next)
    target_next = np.atleast_2d(target_next)
    if alpha == 0:
        idx = np.argmax(online_next, axis=1)
        bootstrap = target_next[np.arange(len(idx)), idx]
    else:
        probs = (policy or _softplus_probs(q))(online_next, alpha)
        bootstrap = np.sum(probs * target_next, axis=1)
    return np.where(dones, rewards, rewards + gamma * bootstrap)


def td_target(sample, online_q_row_next, target_q_row_next, params, gamma, policy=None):
    """Scalar :func:`td_targets` for one :class:`TransitionSample`."""
    out = td_targets(
        [sample.reward], [sample.done], online_q_row_next, target_q_row_next,
        params.alpha, params.q, gamma, policy,
    )
    return float(out[0])


def batch_loss(batch, backend, alpha, q, gamma, weights=None, policy=None):
    """Loss and update for one minibatch against the regularized target.

    Returns ``(loss, update)`` where ``update`` is a Q-table increment for the
    tabular backend and a parameter gradient for the network backend.
    """
    weights = np.ones(len(batch.rewards)) if weights is None else np.asarray(weights, dtype=float)
    targets = td_targets(
        batch.rewards, batch.dones,
        backend.q_rows(batch.next_states), backend.target_rows(batch.next_states),
        alpha, q, gamma, policy,
    )
    return backend.batch_loss(batch, targets, weights)


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------


class _Learner:
    """Episode loop shared by the single-learner algorithms."""

    def __init__(self, env, config, seed, behaviour, target_policy):
        self.env = env
        self.config = config
        self.gamma = env.discount if config.gamma is None else config.gamma
        self.step_cap = config.step_cap or 10 * env.n_states
        init_ss, self.rngs = rng_streams(seed)
        self.backend = make_backend(config, env.n_states, env.n_actions, init_ss.spawn(1)[0])
        self.schedule = config.schedule()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.behaviour = behaviour
        self.target_policy = target_policy
        self.total_steps = 0

    def act(self, state):
        return self.behaviour(self.backend.q_row(state), self.schedule.current, self.rngs["action"])

    def learn(self):
        batch = self.buffer.sample(self.config.batch_size, self.rngs["replay"])
        _, update = batch_loss(
            batch, self.backend, self.schedule.current, self.config.q, self.gamma,
            policy=self.target_policy,
        )
        self.backend.apply(update, float(len(batch.rewards)))
        self.schedule.step()

    def run(self, episodes, stop_at_first_solve=False):
        if episodes < 1:
            raise ParameterError("episodes must be >= 1")
        records = []
        for i in range(episodes):
            records.append(self.episode(i))
            if stop_at_first_solve and records[-1].terminated:
                break
        return self.backend, records

    def episode(self, index):
        env, cfg = self.env, self.config
        state, ret, actions, done = env.initial_state, 0.0, [], False
        for _ in range(self.step_cap):
            action = self.act(state)
            next_state, reward, done = env.step(state, action, self.rngs["env"])
            self.buffer.add(TransitionSample(state, action, next_state, reward, done))
            actions.append(action)
            ret += reward
            self.total_steps += 1
            if self.total_steps % cfg.learning_interval == 0:
                self.learn()
            state = next_state
            if done:
                break
        return EpisodeRecord(index, ret, len(actions), self.schedule.current, done, not done, tuple(actions))


def _softplus_behaviour(q):
    def behaviour(q_row, alpha, rng):
        return sample_action(softplus_policy_batch(q_row, alpha, q), rng)
    return behaviour


def run_algorithm1(env, config, episodes, seed, stop_at_first_solve=False):
    """Tsallis-regularized Q-learning; returns ``(backend, records)``.

    ``stop_at_first_solve`` ends the run after the first episode that reaches
    a terminal state; the records up to that point are unchanged.
    """
    learner = _Learner(env, config, seed, _softplus_behaviour(config.q), _softplus_probs(config.q))
    return learner.run(episodes, stop_at_first_solve)


def epsilon_greedy_learner(env, config, epsilon, episodes, seed, stop_at_first_solve=False):
    """Unregularized Double-DQN-style learner with epsilon-greedy dithering."""
    if not 0 <= epsilon <= 1:
        raise ParameterError(f"epsilon must lie in [0, 1] (got {epsilon})")
    config = replace(config, alpha0=0.0)

    def behaviour(q_row, alpha, rng):
        if epsilon and rng.random() < epsilon:
            return int(rng.integers(q_row.size))
        return int(np.argmax(q_row))

    return _Learner(env, config, seed, behaviour, _greedy_probs).run(episodes, stop_at_first_solve)


def soft_q_learner(env, config, episodes, seed, stop_at_first_solve=False):
    """Shannon-regularized baseline: softmax behaviour and expected-softmax targets."""

    def behaviour(q_row, alpha, rng):
        return sample_action(_softmax_probs(q_row[None], alpha)[0], rng)

    return _Learner(env, config, seed, behaviour, _softmax_probs).run(episodes, stop_at_first_solve)


def write_episode_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_index", "return", "steps", "alpha_at_episode_end"])
        for r in records:
            writer.writerow([r.index, repr(r.ret), r.steps, repr(r.alpha)])
