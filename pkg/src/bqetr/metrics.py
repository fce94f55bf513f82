"""Learning-curve summaries over per-episode undiscounted returns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError

__all__ = [
    "FINAL_WINDOW",
    "MetricsReport",
    "episodes_to_first_solve",
    "fast_learning_metric",
    "final_performance_metric",
    "summarize",
]

FINAL_WINDOW = 10


def fast_learning_metric(returns):
    """Mean return over every episode."""
    returns = np.asarray(returns, dtype=float)
    if returns.size == 0:
        raise ParameterError("returns must be non-empty")
    return float(np.mean(returns))


def final_performance_metric(returns):
    """Mean return over the last ten episodes."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < FINAL_WINDOW:
        raise ParameterError(f"need at least {FINAL_WINDOW} returns (got {returns.size})")
    return float(np.mean(returns[-FINAL_WINDOW:]))


def episodes_to_first_solve(records):
    """1-based index of the first episode that reached a terminal state, else ``None``."""
    for r in records:
        if r.terminated:
            return r.index + 1
    return None


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


@dataclass
class MetricsReport:
    """Per-algorithm aggregate across seeds.

    ``*_std`` fields are sample standard deviations (``ddof=1``) across seeds.
    ``episodes_to_first_solve`` holds ``None`` for seeds that never solved;
    these count as infinitely late in :attr:`median_first_solve`.
    """

    algorithm: str
    seeds: list
    returns: dict = field(repr=False)
    fast_learning_mean: float = 0.0
    fast_learning_std: float = 0.0
    final_performance_mean: float = 0.0
    final_performance_std: float = 0.0
    episodes_to_first_solve: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def median_first_solve(self):
        vals = [np.inf if v is None else v for v in self.episodes_to_first_solve.values()]
        return float(np.median(vals)) if vals else np.inf

    def to_dict(self):
        median = self.median_first_solve
        return {
            "algorithm": self.algorithm,
            "seeds": list(self.seeds),
            "fast_learning": {"mean": self.fast_learning_mean, "sample_std": self.fast_learning_std},
            "final_performance": {"mean": self.final_performance_mean, "sample_std": self.final_performance_std},
            "episodes_to_first_solve": {
                str(s): ("never" if v is None else v) for s, v in self.episodes_to_first_solve.items()
            },
            "median_episodes_to_first_solve": "never" if np.isinf(median) else median,
            "failures": {str(s): msg for s, msg in self.failures.items()},
        }


def summarize(algorithm, runs, failures=None):
    """Build a :class:`MetricsReport` from ``{seed: [EpisodeRecord, ...]}``."""
    seeds = sorted(runs)
    returns = {s: [r.ret for r in runs[s]] for s in seeds}
    report = MetricsReport(algorithm, seeds, returns, failures=dict(failures or {}))
    if seeds:
        fast = [fast_learning_metric(returns[s]) for s in seeds]
        final = [final_performance_metric(returns[s]) for s in seeds if len(returns[s]) >= FINAL_WINDOW]
        report.fast_learning_mean, report.fast_learning_std = _mean_std(fast)
        if final:
            report.final_performance_mean, report.final_performance_std = _mean_std(final)
        report.episodes_to_first_solve = {s: episodes_to_first_solve(runs[s]) for s in seeds}
    return report
