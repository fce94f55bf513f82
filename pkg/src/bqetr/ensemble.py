"""Bootstrapped Q-ensemble with per-member Tsallis indices (BQETR).

One member is drawn uniformly at the start of each episode and its softplus
policy drives the whole episode. Every transition is stored once with a
fresh bootstrap mask; at each learning interval a single minibatch is drawn
and every member fits the samples its mask admits, using its own entropic
index and the shared ``alpha``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParameterError
from .network import save_checkpoint
from .policy import MIN_ENTROPIC_INDEX, sample_action, softplus_policy_batch
from .qlearning import (
    EpisodeRecord,
    LearnerConfig,
    MlpBackend,
    ReplayBuffer,
    TabularBackend,
    TransitionSample,
    batch_loss,
    make_backend,
    rng_streams,
)

__all__ = [
    "DEFAULT_Q_VALUES",
    "EnsembleConfig",
    "EnsembleResult",
    "MaskDistribution",
    "evaluation_policy",
    "run_algorithm2",
    "sample_mask",
    "select_member",
    "write_member_checkpoints",
    "write_member_log",
]

log = logging.getLogger(__name__)

DEFAULT_Q_VALUES = tuple(round(1.5 + 0.1 * i, 1) for i in range(10))


@dataclass(frozen=True)
class MaskDistribution:
    """Bootstrap mask family: ``bernoulli``, ``poisson`` or ``all_ones``.

    Poisson draws are kept as sample weights; a zero draw excludes the
    sample, any positive draw admits it with that multiplicity.
    """

    family: str = "bernoulli"
    parameter: float = 0.5

    def __post_init__(self):
        if self.family == "bernoulli":
            if not 0 < self.parameter <= 1:
                raise ParameterError(f"Bernoulli parameter must lie in (0, 1] (got {self.parameter})")
        elif self.family == "poisson":
            if not self.parameter > 0:
                raise ParameterError(f"Poisson mean must be positive (got {self.parameter})")
        elif self.family != "all_ones":
            raise ParameterError(f"unknown mask family {self.family!r}")


def sample_mask(dist, k, rng):
    """Mask weights for one transition, one entry per member."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    if dist.family == "all_ones" or (dist.family == "bernoulli" and dist.parameter == 1.0):
        return np.ones(k)
    if dist.family == "bernoulli":
        return (rng.random(k) < dist.parameter).astype(float)
    return rng.poisson(dist.parameter, size=k).astype(float)


def select_member(k, rng):
    """Uniform member index in ``range(k)``."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    return int(rng.integers(k))


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble settings; ``base.q`` is ignored in favour of ``q_values``."""

    q_values: tuple = DEFAULT_Q_VALUES
    mask: MaskDistribution = field(default_factory=MaskDistribution)
    base: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        object.__setattr__(self, "q_values", tuple(float(q) for q in self.q_values))
        if not self.q_values:
            raise ParameterError("q_values must be non-empty")
        bad = [q for q in self.q_values if not q >= MIN_ENTROPIC_INDEX]
        if bad:
            raise ParameterError(f"every entropic index must exceed 1 (got {bad})")

    @property
    def k(self):
        return len(self.q_values)


@dataclass
class EnsembleResult:
    backends: list
    records: list
    members: list
    skipped_updates: list  # (interval, member) pairs with an all-zero mask
    alpha_log: list  # alpha each member saw, per interval

    def __iter__(self):
        # unpacks as (backends, records, member-per-episode log)
        return iter((self.backends, self.records, self.members))


class _StackedTables:
    """All members' Q-tables as one ``(K, S, A)`` array, trained in one pass.

    Produces bit-identical tables to updating each :class:`TabularBackend`
    separately; members are exposed as views into the stack.
    """

    def __init__(self, backends):
        self.tables = np.stack([b.table for b in backends])
        self.learning_rate = backends[0].learning_rate
        self.members = [
            TabularBackend(0, 0, b.learning_rate, table=self.tables[i]) for i, b in enumerate(backends)
        ]

    def train(self, batch, weights, q_values, alpha, gamma):
        k = self.tables.shape[0]
        online_next = self.tables[:, batch.next_states]
        if alpha == 0:
            idx = np.argmax(online_next, axis=-1)
            bootstrap = np.take_along_axis(online_next, idx[..., None], axis=-1)[..., 0]
        else:
            probs = softplus_policy_batch(online_next, alpha, np.asarray(q_values)[:, None])
            bootstrap = np.sum(probs * online_next, axis=-1)
        targets = np.where(batch.dones, batch.rewards, batch.rewards + gamma * bootstrap)
        members = np.broadcast_to(np.arange(k)[:, None], targets.shape)
        states = np.broadcast_to(batch.states, targets.shape)
        actions = np.broadcast_to(batch.actions, targets.shape)
        residual = targets - self.tables[members, states, actions]
        w = weights.T
        num = np.zeros_like(self.tables)
        den = np.zeros_like(self.tables)
        np.add.at(num, (members, states, actions), w * residual)
        np.add.at(den, (members, states, actions), w)
        delta = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        self.tables += self.learning_rate * delta
        trained = w.sum(axis=1) > 0
        for i in np.flatnonzero(trained):
            self.members[i].n_updates += 1
        return np.flatnonzero(~trained)


def _train_members(backends, stacked, batch, q_values, alpha, gamma):
    """One learning interval for every member; returns members skipped."""
    if stacked is not None:
        return [int(m) for m in stacked.train(batch, batch.masks, q_values, alpha, gamma)]
    skipped = []
    for m, (backend, q) in enumerate(zip(backends, q_values)):
        weights = batch.masks[:, m]
        total = float(weights.sum())
        if total == 0:
            skipped.append(m)
            continue
        _, update = batch_loss(batch, backend, alpha, q, gamma, weights)
        backend.apply(update, total)
    return skipped


def run_algorithm2(env, config, episodes, seed, vectorize=True, stop_at_first_solve=False):
    """Train a BQETR ensemble; returns an :class:`EnsembleResult`.

    With ``vectorize`` the tabular members are trained as one stacked array;
    results are bit-identical to the per-member path. ``stop_at_first_solve``
    ends the run after the first episode that reaches a terminal state.
    """
    if episodes < 1:
        raise ParameterError("episodes must be >= 1")
    cfg = config.base
    k = config.k
    gamma = env.discount if cfg.gamma is None else cfg.gamma
    step_cap = cfg.step_cap or 10 * env.n_states
    init_ss, rngs = rng_streams(seed)
    backends = [make_backend(cfg, env.n_states, env.n_actions, ss) for ss in init_ss.spawn(k)]
    stacked = _StackedTables(backends) if vectorize and cfg.backend == "tabular" else None
    if stacked is not None:
        backends = stacked.members
    schedule = cfg.schedule()
    buffer = ReplayBuffer(cfg.buffer_capacity, mask_size=k)
    result = EnsembleResult(backends, [], [], [], [])
    total_steps = 0

    for index in range(episodes):
        member = select_member(k, rngs["select"])
        driver, q_drive = backends[member], config.q_values[member]
        state, ret, actions, done = env.initial_state, 0.0, [], False
        for _ in range(step_cap):
            probs = softplus_policy_batch(driver.q_row(state), schedule.current, q_drive)
            action = sample_action(probs, rngs["action"])
            next_state, reward, done = env.step(state, action, rngs["env"])
            mask = sample_mask(config.mask, k, rngs["mask"])
            buffer.add(TransitionSample(state, action, next_state, reward, done, tuple(mask)))
            actions.append(action)
            ret += reward
            total_steps += 1
            if total_steps % cfg.learning_interval == 0:
                alpha = schedule.current
                batch = buffer.sample(cfg.batch_size, rngs["replay"])
                for m in _train_members(backends, stacked, batch, config.q_values, alpha, gamma):
                    log.debug("interval %d: member %d has an empty masked batch", len(result.alpha_log), m)
                    result.skipped_updates.append((len(result.alpha_log), m))
                result.alpha_log.append(alpha)
                schedule.step()
            state = next_state
            if done:
                break
        result.records.append(
            EpisodeRecord(index, ret, len(actions), schedule.current, done, not done, tuple(actions), member)
        )
        result.members.append(member)
        if stop_at_first_solve and done:
            break
    return result


def evaluation_policy(backends, state):
    """Greedy action on the members' mean Q-row, lowest id on ties."""
    if not backends:
        raise ParameterError("backends must be non-empty")
    mean = np.mean([b.q_row(state) for b in backends], axis=0)
    return int(np.argmax(mean))


def write_member_log(members, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "member"])
        writer.writerows(enumerate(members))


def write_member_checkpoints(backends, prefix):
    """One network checkpoint per member, ``<prefix>_member<k>.json``."""
    paths = []
    for i, backend in enumerate(backends):
        if not isinstance(backend, MlpBackend):
            raise ParameterError("checkpoints are only defined for the network backend")
        path = Path(f"{prefix}_member{i}.json")
        save_checkpoint(backend.params, backend.spec, path)
        paths.append(path)
    return paths
