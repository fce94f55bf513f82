"""Per-state policies under entropy regularization.

Every constructor takes a row of Q-values for one state and returns an
:class:`ActionDistribution`. The ``*_batch`` variants operate on an
``(n_rows, n_actions)`` array and are what the learners call in their inner
loops; the row-level functions are thin wrappers over them.

Actions are ranked by descending Q-value with ties broken by ascending
action id. The sparse threshold ``c`` satisfies ``sum(pi) == 1`` for the
exact ``q = 2`` policy; for other entropic indices it comes from the
first-order approximation and is paired with the softplus policy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError

__all__ = [
    "ActionDistribution",
    "RegularizerParams",
    "SupportResult",
    "approx_support",
    "approx_threshold",
    "exact_policy_q2",
    "greedy_policy",
    "regularized_objective",
    "sample_action",
    "shannon_entropy",
    "softmax_policy",
    "softplus_policy",
    "softplus_policy_batch",
    "tsallis_entropy",
]

# Entropic indices this close to 1 are numerically the Shannon case; callers
# must ask for the softmax policy explicitly.
MIN_ENTROPIC_INDEX = 1.0 + 1e-6


@dataclass(frozen=True)
class ActionDistribution:
    """Probability vector over actions plus the set of actions it can pick."""

    probs: np.ndarray
    support: frozenset

    @classmethod
    def from_probs(cls, probs):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ParameterError("probs must be a non-empty 1-D array")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ParameterError("probs must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ParameterError(f"probs sum to {probs.sum()!r}, not 1")
        probs = probs.copy()
        probs.flags.writeable = False
        return cls(probs, frozenset(int(a) for a in np.flatnonzero(probs > 0)))

    @classmethod
    def one_hot(cls, n_actions, action):
        probs = np.zeros(n_actions)
        probs[action] = 1.0
        return cls.from_probs(probs)

    @property
    def n_actions(self):
        return self.probs.size

    def to_json(self):
        return json.dumps(self.probs.tolist())


@dataclass(frozen=True)
class RegularizerParams:
    """Tsallis entropic index ``q`` and regularization coefficient ``alpha``."""

    q: float
    alpha: float

    def __post_init__(self):
        if not self.q >= MIN_ENTROPIC_INDEX:
            raise ParameterError(
                f"entropic index q must exceed 1 (got {self.q}); use softmax_policy "
                "for the Shannon case"
            )
        if not self.alpha >= 0:
            raise ParameterError(f"alpha must be non-negative (got {self.alpha})")


@dataclass(frozen=True)
class SupportResult:
    """Actions kept by the sparse threshold, ordered by descending Q."""

    support: tuple
    threshold_c: float


def _check_row(q_row):
    q_row = np.asarray(q_row, dtype=float)
    if q_row.ndim != 1 or q_row.size == 0:
        raise ParameterError("q_row must be a non-empty 1-D array")
    if not np.all(np.isfinite(q_row)):
        raise ParameterError("q_row must be finite")
    return q_row


def _check_alpha(alpha):
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive (got {alpha})")


def _check_q(q):
    if not np.all(np.asarray(q) >= MIN_ENTROPIC_INDEX):
        raise ParameterError(f"entropic index q must exceed 1 (got {q})")


def _descending_order(q_rows):
    # stable argsort of -Q keeps ascending action id among ties
    return np.argsort(-q_rows, axis=-1, kind="stable")


def _prefix_length(condition):
    """Length of the leading run of True along the last axis."""
    return np.logical_and.accumulate(condition, axis=-1).sum(axis=-1)


# --------------------------------------------------------------------------
# entropies
# --------------------------------------------------------------------------


def shannon_entropy(pi):
    """``-sum p log p`` with the ``0 log 0 = 0`` convention."""
    p = pi.probs[pi.probs > 0]
    return float(-np.sum(p * np.log(p)))


def tsallis_entropy(pi, q):
    """Tsallis entropy ``(1 - sum p**q) / (q - 1)``.

    Evaluated as ``-sum p * expm1((q - 1) log p) / (q - 1)`` (using
    ``sum p = 1``), which keeps full precision as ``q`` approaches 1.
    """
    if not q > 1:
        raise ParameterError(f"entropic index q must exceed 1 (got {q})")
    p = pi.probs[pi.probs > 0]
    return float(-np.sum(p * np.expm1((q - 1.0) * np.log(p))) / (q - 1.0))


def regularized_objective(pi, q_row, params):
    """Expected Q-value plus ``alpha`` times the Tsallis entropy of ``pi``."""
    q_row = _check_row(q_row)
    value = float(pi.probs @ q_row)
    if params.alpha == 0:
        return value
    return value + params.alpha * tsallis_entropy(pi, params.q)


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------


def greedy_policy(q_row):
    """One-hot on the highest Q-value, lowest action id on ties."""
    q_row = _check_row(q_row)
    return ActionDistribution.one_hot(q_row.size, int(np.argmax(q_row)))


def softmax_policy(q_row, alpha):
    """Boltzmann policy ``pi ∝ exp(Q / alpha)``."""
    q_row = _check_row(q_row)
    _check_alpha(alpha)
    z = (q_row - q_row.max()) / alpha
    w = np.exp(z)
    return ActionDistribution.from_probs(w / w.sum())


def exact_policy_q2(q_row, alpha):
    """Closed-form sparse optimum of ``E[Q] + alpha * H_2``.

    The support is the longest descending-Q prefix ``a_1..a_m`` with
    ``2 + i Q(a_i)/alpha > sum_{j<=i} Q(a_j)/alpha`` for every ``i <= m``,
    the threshold is ``c = alpha (sum_S Q/alpha - 2) / |S|`` and the policy is
    ``max((Q - c) / (2 alpha), 0)``.

    Returns
    -------
    (ActionDistribution, SupportResult)
    """
    q_row = _check_row(q_row)
    _check_alpha(alpha)
    order = _descending_order(q_row)
    z = q_row[order] / alpha
    idx = np.arange(1, z.size + 1)
    cond = 2.0 + idx * z > np.cumsum(z)
    cond[0] = True  # holds analytically; guards against rounding at huge Q/alpha
    m = int(_prefix_length(cond))
    support = order[:m]
    c = alpha * (np.sum(q_row[support] / alpha) - 2.0) / m
    probs = np.maximum((q_row - c) / (2.0 * alpha), 0.0)
    probs[order[m:]] = 0.0
    probs /= probs.sum()
    pi = ActionDistribution.from_probs(probs)
    return pi, SupportResult(tuple(int(a) for a in support), float(c))


def _sorted_threshold(sorted_rows, alpha, q):
    """Approximate threshold and support size for rows sorted descending.

    ``q`` is a scalar or an array broadcastable to the batch dimensions.
    Returns ``(c, m)``.
    """
    q = np.asarray(q, dtype=float)
    kappa = q - q / (q - 1.0)
    idx = np.arange(1, sorted_rows.shape[-1] + 1)
    csum = np.cumsum(sorted_rows, axis=-1)
    # q + i z_i > sum_{j<=i} z_j + i kappa, rearranged as gaps to a_i so the
    # comparison stays well-conditioned when Q/alpha is huge
    cond = q[..., None] - idx * kappa[..., None] > (csum - idx * sorted_rows) / alpha
    cond[..., 0] = True
    inside = np.logical_and.accumulate(cond, axis=-1)
    m = inside.sum(axis=-1)
    top = np.sum(sorted_rows * inside, axis=-1)
    # alpha * (sum Q/alpha - q) / |S|, kept in that form so q = 2 matches the
    # exact threshold to rounding
    return alpha * (top / alpha - q) / m + alpha * kappa, m


def approx_threshold(q_row, support, alpha, q):
    """First-order threshold ``alpha (sum_S Q/alpha - q)/|S| + alpha (q - q/(q-1))``."""
    q_row = _check_row(q_row)
    _check_alpha(alpha)
    _check_q(q)
    support = list(support)
    if not support:
        raise ParameterError("support must be non-empty")
    kappa = q - q / (q - 1.0)
    return float(alpha * (np.sum(q_row[support] / alpha) - q) / len(support) + alpha * kappa)


def approx_support(q_row, alpha, q):
    """Approximate sparse support and threshold for a general entropic index.

    At ``q = 2`` this coincides with :func:`exact_policy_q2`.
    """
    q_row = _check_row(q_row)
    _check_alpha(alpha)
    _check_q(q)
    order = _descending_order(q_row)
    m = int(_sorted_threshold(q_row[order], alpha, q)[1])
    support = order[:m]
    return SupportResult(tuple(int(a) for a in support), approx_threshold(q_row, support, alpha, q))


def _log_softplus(x):
    # log(log(1 + e^x)); the floor keeps every weight positive and finite,
    # and is far below anything that survives normalization
    return np.log(np.logaddexp(0.0, np.maximum(x, -700.0)))


def _softplus_row(row, alpha, q):
    """Pure-Python single-row path; per-call numpy overhead dominates here."""
    kappa = q - q / (q - 1.0)
    vals = sorted(row, reverse=True)
    csum = top = vals[0]
    m = 1
    for i in range(2, len(vals) + 1):
        v = vals[i - 1]
        csum += v
        if not q - i * kappa > (csum - i * v) / alpha:
            break
        m, top = i, csum
    c = alpha * (top / alpha - q) / m + alpha * kappa
    logs = []
    for v in row:
        x = max((v - c) / alpha, -700.0)
        softplus = x if x > 36.0 else math.log1p(math.exp(x))  # log1p(e^x) == x to double precision past 36
        logs.append(math.log(softplus) / (q - 1.0))
    peak = max(logs)
    w = [math.exp(v - peak) for v in logs]
    total = math.fsum(w)
    return np.array([v / total for v in w])


def softplus_policy_batch(q_rows, alpha, q):
    """Softplus-smoothed sparse policy for every row of ``q_rows``.

    ``pi ∝ softplus((Q - c) / alpha) ** (1 / (q - 1))`` normalized over all
    actions, with ``c`` from the approximate support. ``alpha == 0`` gives the
    greedy one-hot policy. Weights are combined in log space so large
    exponents ``1/(q-1)`` cannot overflow.

    ``q`` may be an array broadcastable to ``q_rows.shape[:-1]`` to give each
    row its own entropic index.
    """
    q_rows = np.asarray(q_rows, dtype=float)
    if alpha == 0:
        probs = np.zeros_like(q_rows)
        np.put_along_axis(probs, np.argmax(q_rows, axis=-1)[..., None], 1.0, axis=-1)
        return probs
    _check_alpha(alpha)
    _check_q(q)
    if q_rows.ndim == 1 and np.ndim(q) == 0:
        return _softplus_row(q_rows.tolist(), float(alpha), float(q))
    sorted_rows = np.sort(q_rows, axis=-1)[..., ::-1]
    c, _ = _sorted_threshold(sorted_rows, alpha, q)
    x = (q_rows - c[..., None]) / alpha
    logw = _log_softplus(x) / (np.asarray(q, dtype=float)[..., None] - 1.0)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def softplus_policy(q_row, params):
    """Row-level :func:`softplus_policy_batch` returning an :class:`ActionDistribution`."""
    q_row = _check_row(q_row)
    return ActionDistribution.from_probs(softplus_policy_batch(q_row, params.alpha, params.q))


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def sample_action(pi, rng):
    """Draw one action id from ``pi`` using a single uniform from ``rng``."""
    probs = pi.probs if isinstance(pi, ActionDistribution) else np.asarray(pi)
    u = rng.random()
    a = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    # rounding can leave the cumulative sum a hair below 1
    if a >= probs.size:
        a = int(np.flatnonzero(probs > 0)[-1])
    return a
