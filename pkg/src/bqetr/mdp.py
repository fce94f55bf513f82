"""Finite MDPs, benchmark generators and exact dynamic-programming solvers.

Arrays follow row-major ``(state, action, next_state)`` order. Terminal
states are absorbing self-loops paying zero reward, so the solvers need no
special casing for them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConvergenceError, ParameterError
from .policy import softplus_policy_batch

__all__ = [
    "EpisodeStep",
    "ExactSolution",
    "TabularMdp",
    "bellman_optimality_operator",
    "bellman_residue",
    "greedy_actions",
    "load_mdp",
    "make_chain",
    "make_random_mdp",
    "mdp_from_dict",
    "mdp_to_dict",
    "policy_evaluation",
    "regularized_fixed_point",
    "save_mdp",
    "validate_mdp",
    "value_iteration",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with dense transition tensor and reward table."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    terminal_states: frozenset = field(default_factory=frozenset)
    initial_state: int = 0

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "terminal_states", frozenset(int(s) for s in self.terminal_states))
        if self.transition.ndim != 3 or self.reward.ndim != 2:
            raise ParameterError("transition must be 3-D and reward 2-D")
        S, A, S2 = self.transition.shape
        if S != S2 or self.reward.shape != (S, A):
            raise ParameterError(
                f"shape mismatch: transition {self.transition.shape}, reward {self.reward.shape}"
            )

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    def step(self, state, action, rng):
        """Sample one transition; returns ``(next_state, reward, done)``."""
        row = self.transition[state, action]
        if row.max() == 1.0:
            next_state = int(np.argmax(row))
        else:
            cdf = np.cumsum(row)
            k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            next_state = min(k, row.size - 1)
        return next_state, float(self.reward[state, action]), next_state in self.terminal_states


@dataclass(frozen=True)
class ExactSolution:
    q_star: np.ndarray
    v_star: np.ndarray
    iterations: int
    final_sup_change: float

    @property
    def greedy_policy(self):
        return greedy_actions(self.q_star)


@dataclass(frozen=True)
class EpisodeStep:
    state: int
    action: int
    next_state: int
    reward: float
    done: bool


def validate_mdp(mdp):
    """List every violated invariant of ``mdp``; empty when it is well formed."""
    problems = []
    P, R = mdp.transition, mdp.reward
    if np.any(P < 0):
        problems.append("transition: negative probabilities present")
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > 1e-12)):
        problems.append(f"transition[{s},{a}]: row sums to {sums[s, a]:.15g}, not 1")
    if not np.all(np.isfinite(R)):
        problems.append("reward: non-finite entries")
    if not 0 <= mdp.discount < 1:
        problems.append(f"discount: {mdp.discount} is outside [0, 1)")
    if not 0 <= mdp.initial_state < mdp.n_states:
        problems.append(f"initial_state: {mdp.initial_state} out of range")
    for s in sorted(mdp.terminal_states):
        if not 0 <= s < mdp.n_states:
            problems.append(f"terminal_states: {s} out of range")
            continue
        if not np.all(P[s, :, s] == 1.0):
            problems.append(f"terminal state {s}: not an absorbing self-loop")
        if np.any(R[s] != 0):
            problems.append(f"terminal state {s}: non-zero reward")
    return problems


def _check_tol(tol, max_iters):
    if not tol > 0:
        raise ParameterError(f"tol must be positive (got {tol})")
    if max_iters < 1:
        raise ParameterError(f"max_iters must be at least 1 (got {max_iters})")


def _converged(change, q, tol):
    return change <= tol * (1.0 + np.max(np.abs(q)))


def bellman_optimality_operator(q_table, mdp):
    """One application of ``r + gamma * P max_b Q``."""
    return mdp.reward + mdp.discount * mdp.transition @ q_table.max(axis=1)


def bellman_residue(q_table, mdp):
    """Sup-norm distance between ``Q`` and its optimality backup."""
    q_table = np.asarray(q_table, dtype=float)
    if not np.all(np.isfinite(q_table)):
        raise ParameterError("q_table must be finite")
    return float(np.max(np.abs(bellman_optimality_operator(q_table, mdp) - q_table)))


def greedy_actions(q_table):
    """Argmax action per state, lowest id on ties."""
    return np.argmax(np.asarray(q_table), axis=1)


def value_iteration(mdp, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    """Iterate the optimality operator to its fixed point."""
    _check_tol(tol, max_iters)
    q = np.zeros_like(mdp.reward)
    change = np.inf
    for it in range(1, max_iters + 1):
        new_q = bellman_optimality_operator(q, mdp)
        change = float(np.max(np.abs(new_q - q)))
        q = new_q
        if _converged(change, q, tol):
            return ExactSolution(q, q.max(axis=1), it, change)
    raise ConvergenceError(
        f"value iteration did not converge in {max_iters} iterations", change, max_iters, q
    )


def policy_evaluation(mdp, policy, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    """Q-function of a fixed stochastic policy.

    ``policy`` is an ``(n_states, n_actions)`` array of action probabilities
    or a sequence of :class:`~bqetr.policy.ActionDistribution`.
    """
    _check_tol(tol, max_iters)
    probs = np.array([getattr(p, "probs", p) for p in policy], dtype=float)
    if probs.shape != mdp.reward.shape:
        raise ParameterError(f"policy shape {probs.shape} does not match {mdp.reward.shape}")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1) > 1e-9):
        raise ParameterError("each per-state policy must be a probability distribution")
    q = np.zeros_like(mdp.reward)
    change = np.inf
    for it in range(1, max_iters + 1):
        new_q = mdp.reward + mdp.discount * mdp.transition @ np.sum(probs * q, axis=1)
        change = float(np.max(np.abs(new_q - q)))
        q = new_q
        if _converged(change, q, tol):
            return q
    raise ConvergenceError(
        f"policy evaluation did not converge in {max_iters} iterations", change, max_iters, q
    )


STALL_SWEEPS = 20


def regularized_fixed_point(mdp, q, alpha, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    """Fixed point of the backup under the softplus policy built from ``Q`` itself.

    Iterates ``Q <- r + gamma * P sum_b pi(b | Q) Q(., b)``. The map is not
    known to contract for every ``q`` and can settle into a cycle, so
    whenever the sup-change fails to improve on its best value for
    ``STALL_SWEEPS`` sweeps the step toward the new backup is halved.
    """
    _check_tol(tol, max_iters)
    if not alpha >= 0:
        raise ParameterError(f"alpha must be non-negative (got {alpha})")
    gamma, P, R = mdp.discount, mdp.transition, mdp.reward
    values = np.zeros_like(R)
    change = best = np.inf
    stall = 0
    step = 1.0
    for it in range(1, max_iters + 1):
        pi = softplus_policy_batch(values, alpha, q)
        backup = R + gamma * P @ np.sum(pi * values, axis=1)
        change = float(np.max(np.abs(backup - values)))
        if _converged(change, values, tol):
            # measured on the undamped backup, so this is a genuine fixed point
            return backup
        values = values + step * (backup - values)
        if change < best:
            best, stall = change, 0
        else:
            stall += 1
            if stall >= STALL_SWEEPS:
                step *= 0.5
                stall = 0
    raise ConvergenceError(
        f"regularized fixed point (q={q}, alpha={alpha}) did not converge in "
        f"{max_iters} iterations",
        change,
        max_iters,
        values,
    )


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def make_chain(n, swim_reward=-0.01, goal_reward=1.0, gamma=0.99):
    """Deterministic chain of ``n`` states for deep-exploration tests.

    Action 0 ("left") moves one state toward the start at zero reward and
    stays put in state 0. Action 1 ("right") moves one state toward the goal
    paying ``swim_reward``; the step that enters state ``n - 1`` pays
    ``goal_reward`` instead. State ``n - 1`` is terminal. Episodes start in
    state 0.
    """
    if n < 2:
        raise ParameterError(f"chain needs at least 2 states (got {n})")
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    for s in range(n - 1):
        P[s, LEFT, max(s - 1, 0)] = 1.0
        P[s, RIGHT, s + 1] = 1.0
        R[s, RIGHT] = goal_reward if s + 1 == n - 1 else swim_reward
    P[n - 1, :, n - 1] = 1.0
    return TabularMdp(P, R, gamma, frozenset({n - 1}), 0)


def make_random_mdp(n_states, n_actions, branching, seed, gamma=0.9):
    """Garnet-style random MDP.

    Each ``(s, a)`` reaches ``branching`` distinct successors drawn uniformly,
    with Dirichlet(1) probabilities. Rewards are uniform on [0, 1].
    """
    if not 1 <= branching <= n_states:
        raise ParameterError(f"branching must lie in [1, n_states] (got {branching})")
    rng = np.random.default_rng(seed)
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(branching))
    # Dirichlet draws can miss 1 by an ulp or two; push the slack onto the
    # largest entry
    err = 1.0 - P.sum(axis=2)
    big = P.argmax(axis=2)
    np.put_along_axis(P, big[..., None], np.take_along_axis(P, big[..., None], axis=2) + err[..., None], axis=2)
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(P, R, gamma, frozenset(), 0)


# --------------------------------------------------------------------------
# JSON documents
# --------------------------------------------------------------------------


def mdp_to_dict(mdp):
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.discount,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
        "terminals": sorted(mdp.terminal_states),
        "initial_state": mdp.initial_state,
    }


def mdp_from_dict(doc):
    required = ("n_states", "n_actions", "gamma", "transition", "reward")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ParameterError(f"MDP document missing fields: {', '.join(missing)}")
    unknown = set(doc) - set(required) - {"terminals", "initial_state"}
    if unknown:
        raise ParameterError(f"MDP document has unknown fields: {', '.join(sorted(unknown))}")
    mdp = TabularMdp(
        np.array(doc["transition"], dtype=float),
        np.array(doc["reward"], dtype=float),
        float(doc["gamma"]),
        frozenset(doc.get("terminals", ())),
        int(doc.get("initial_state", 0)),
    )
    if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
        raise ParameterError("n_states/n_actions disagree with array shapes")
    return mdp


def save_mdp(mdp, path):
    Path(path).write_text(json.dumps(mdp_to_dict(mdp)))


def load_mdp(path):
    return mdp_from_dict(json.loads(Path(path).read_text()))
