"""Seeded experiment orchestration and result files.

An experiment document is JSON::

    {
      "env": {"family": "chain", "n": 20},
      "algorithm": ["bqetr", "algorithm1", "epsilon_greedy"],
      "episodes": 300,
      "seeds": [1, 2, 3],
      "output": "results",
      "learner": {"alpha0": 0.5, "learning_interval": 4},
      "bqetr": {"k": 10, "mask": {"family": "bernoulli", "parameter": 0.5}},
      "epsilon_greedy": {"epsilon": 0.1},
      "residue": {"q_values": [1.5, 2.0], "alphas": [1, 0.1, 0.01]}
    }

Only ``env`` is required. ``learner`` holds :class:`~bqetr.qlearning.LearnerConfig`
fields shared by all algorithms; each per-algorithm block may override any of
them. Unknown keys are rejected at every level.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ensemble import DEFAULT_Q_VALUES, EnsembleConfig, MaskDistribution, run_algorithm2, write_member_log
from .exceptions import ConfigError, ConvergenceError, ParameterError
from .mdp import DEFAULT_TOL, bellman_residue, load_mdp, make_chain, make_random_mdp, regularized_fixed_point, validate_mdp
from .metrics import summarize
from .qlearning import LearnerConfig, epsilon_greedy_learner, run_algorithm1, soft_q_learner

__all__ = [
    "ALGORITHMS",
    "ExperimentConfig",
    "ResiduePoint",
    "build_env",
    "parse_config",
    "parse_config_dict",
    "residue_sweep",
    "run_comparison",
    "run_one",
    "scaled_alpha_delta",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("bqetr", "algorithm1", "epsilon_greedy", "soft_q")
DEFAULT_GAMMA = 0.99
DEFAULT_SEEDS = tuple(range(1, 11))
DEFAULT_RESIDUE_ALPHAS = (1.0, 0.1, 0.01, 1e-3, 1e-4)
# alpha is annealed to zero after this fraction of the learning-interval budget
ANNEAL_FRACTION = 0.8

_ENV_KEYS = {
    "chain": {"n": int, "swim_reward": float, "goal_reward": float, "gamma": float},
    "random": {"n_states": int, "n_actions": int, "branching": int, "seed": int, "gamma": float},
    "file": {"path": str},
}
_ENV_REQUIRED = {"chain": ("n",), "random": ("n_states", "n_actions", "branching"), "file": ("path",)}
_LEARNER_FIELDS = {f.name for f in fields(LearnerConfig)}
_EXTRA_KEYS = {
    "bqetr": {"k", "q_values", "mask"},
    "algorithm1": set(),
    "epsilon_greedy": {"epsilon"},
    "soft_q": set(),
}
_TOP_KEYS = {"env", "algorithm", "episodes", "seeds", "output", "learner", "scale_alpha_delta", "residue", *ALGORITHMS}


@dataclass(frozen=True)
class ExperimentConfig:
    env: dict
    algorithms: tuple = ("bqetr",)
    episodes: int = 300
    seeds: tuple = DEFAULT_SEEDS
    output: str | None = None
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    overrides: dict = field(default_factory=dict)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    epsilon: float = 0.1
    scale_alpha_delta: bool = True
    residue_q_values: tuple = (1.5, 2.0, 2.4)
    residue_alphas: tuple = DEFAULT_RESIDUE_ALPHAS
    residue_tol: float = DEFAULT_TOL

    @property
    def k(self):
        return self.ensemble.k

    @property
    def q_values(self):
        return self.ensemble.q_values

    @property
    def alpha0(self):
        return self.learner.alpha0

    @property
    def alpha_delta(self):
        return self.learner.alpha_delta

    def learner_for(self, algorithm, env):
        """Learner config for ``algorithm`` with overrides and alpha scaling applied."""
        cfg = replace(self.learner, **self.overrides.get(algorithm, {}))
        if self.scale_alpha_delta and "alpha_delta" not in {
            **self.overrides.get("learner", {}), **self.overrides.get(algorithm, {})
        }:
            cfg = replace(cfg, alpha_delta=scaled_alpha_delta(cfg, env, self.episodes))
        return cfg


def scaled_alpha_delta(cfg, env, episodes):
    """Decrement that reaches zero after 80% of the worst-case interval budget.

    The budget assumes every episode runs to the step cap, so it is an upper
    bound on the number of learning intervals.
    """
    step_cap = cfg.step_cap or 10 * env.n_states
    intervals = episodes * step_cap // cfg.learning_interval
    return cfg.alpha0 / max(ANNEAL_FRACTION * intervals, 1.0)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _check_keys(block, allowed, where, errors):
    for key in sorted(set(block) - set(allowed)):
        errors.append(f"{where}.{key}: unknown field" if where else f"{key}: unknown field")


def _typed(value, kind, where, errors):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    errors.append(f"{where}: expected {kind.__name__}, got {type(value).__name__}")
    return None


def _parse_env(doc, errors):
    if not isinstance(doc, dict):
        errors.append("env: expected an object")
        return None
    family = doc.get("family", "chain")
    if family not in _ENV_KEYS:
        errors.append(f"env.family: unknown family {family!r} (expected one of {sorted(_ENV_KEYS)})")
        return None
    _check_keys(doc, {"family", *_ENV_KEYS[family]}, "env", errors)
    out = {"family": family}
    for key in _ENV_REQUIRED[family]:
        if key not in doc:
            errors.append(f"env.{key}: required for family {family!r}")
    for key, kind in _ENV_KEYS[family].items():
        if key in doc:
            val = _typed(doc[key], kind, f"env.{key}", errors)
            if val is not None:
                out[key] = val
    if family == "chain" and out.get("n", 2) < 2:
        errors.append("env.n: chain needs at least 2 states")
    if "gamma" in out and not 0 <= out["gamma"] < 1:
        errors.append("env.gamma: must lie in [0, 1)")
    return out


def _parse_learner_block(block, where, extra, errors):
    if not isinstance(block, dict):
        errors.append(f"{where}: expected an object")
        return {}
    _check_keys(block, _LEARNER_FIELDS | extra, where, errors)
    return {k: (tuple(v) if k == "hidden_dims" else v) for k, v in block.items() if k in _LEARNER_FIELDS}


def parse_config_dict(doc):
    """Validate a parsed experiment document; raises :class:`ConfigError`."""
    errors = []
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    _check_keys(doc, _TOP_KEYS, "", errors)
    if "env" not in doc:
        errors.append("env: required field is missing")
        env = None
    else:
        env = _parse_env(doc["env"], errors)

    algorithms = doc.get("algorithm", ["bqetr"])
    if isinstance(algorithms, str):
        algorithms = [algorithms]
    if not isinstance(algorithms, list) or not algorithms:
        errors.append("algorithm: expected a name or a non-empty list of names")
        algorithms = []
    for name in algorithms:
        if name not in ALGORITHMS:
            errors.append(f"algorithm: unknown algorithm {name!r} (expected one of {list(ALGORITHMS)})")

    episodes = doc.get("episodes", 300)
    if not isinstance(episodes, int) or isinstance(episodes, bool) or episodes < 1:
        errors.append("episodes: expected a positive integer")
    seeds = doc.get("seeds", list(DEFAULT_SEEDS))
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        errors.append("seeds: expected a non-empty list of integers")
        seeds = list(DEFAULT_SEEDS)
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        errors.append("output: expected a path string")
    scale = doc.get("scale_alpha_delta", True)
    if not isinstance(scale, bool):
        errors.append("scale_alpha_delta: expected true or false")

    overrides = {"learner": _parse_learner_block(doc.get("learner", {}), "learner", set(), errors)}
    for name in ALGORITHMS:
        if name in doc:
            overrides[name] = _parse_learner_block(doc[name], name, _EXTRA_KEYS[name], errors)

    learner = None
    try:
        learner = LearnerConfig(**overrides["learner"])
        for name in ALGORITHMS:
            if overrides.get(name):
                replace(learner, **overrides[name])
    except (TypeError, ParameterError) as exc:
        errors.append(f"learner: {exc}")

    ensemble = None
    bq = doc.get("bqetr", {}) if isinstance(doc.get("bqetr", {}), dict) else {}
    try:
        k = bq.get("k", len(DEFAULT_Q_VALUES))
        if "q_values" in bq:
            q_values = tuple(bq["q_values"])
            if "k" in bq and k != len(q_values):
                errors.append(f"bqetr.k: {k} disagrees with {len(q_values)} q_values")
        elif k == len(DEFAULT_Q_VALUES):
            q_values = DEFAULT_Q_VALUES
        else:
            q_values = tuple(np.round(np.linspace(1.5, 2.4, k), 6)) if k > 1 else (2.0,)
        mask_doc = bq.get("mask", {})
        if not isinstance(mask_doc, dict):
            raise ParameterError("mask must be an object")
        _check_keys(mask_doc, {"family", "parameter"}, "bqetr.mask", errors)
        mask = MaskDistribution(**{k_: v for k_, v in mask_doc.items() if k_ in ("family", "parameter")})
        ensemble = EnsembleConfig(q_values, mask, learner or LearnerConfig())
    except (TypeError, ParameterError) as exc:
        errors.append(f"bqetr: {exc}")

    eps = doc.get("epsilon_greedy", {}).get("epsilon", 0.1) if isinstance(doc.get("epsilon_greedy", {}), dict) else 0.1
    if not isinstance(eps, (int, float)) or not 0 <= eps <= 1:
        errors.append("epsilon_greedy.epsilon: expected a number in [0, 1]")

    residue = doc.get("residue", {})
    res_q, res_alphas, res_tol = (1.5, 2.0, 2.4), DEFAULT_RESIDUE_ALPHAS, DEFAULT_TOL
    if not isinstance(residue, dict):
        errors.append("residue: expected an object")
    else:
        _check_keys(residue, {"q_values", "alphas", "tol"}, "residue", errors)
        res_q = tuple(residue.get("q_values", res_q))
        res_alphas = tuple(residue.get("alphas", res_alphas))
        res_tol = residue.get("tol", res_tol)
        if any(a <= 0 for a in res_alphas) or any(b >= a for a, b in zip(res_alphas, res_alphas[1:])):
            errors.append("residue.alphas: must be positive and strictly decreasing")
        if not isinstance(res_tol, (int, float)) or isinstance(res_tol, bool) or not res_tol > 0:
            errors.append("residue.tol: expected a positive number")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        env=env,
        algorithms=tuple(algorithms),
        episodes=episodes,
        seeds=tuple(seeds),
        output=output,
        learner=learner,
        overrides={
            name: {k: v for k, v in block.items() if k in _LEARNER_FIELDS}
            for name, block in overrides.items()
        },
        ensemble=ensemble,
        epsilon=float(eps),
        scale_alpha_delta=scale,
        residue_q_values=tuple(float(q) for q in res_q),
        residue_alphas=tuple(float(a) for a in res_alphas),
        residue_tol=float(res_tol),
    )


def parse_config(path):
    """Read and validate an experiment document from ``path``."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return parse_config_dict(doc)


def build_env(spec):
    """Materialize a :class:`~bqetr.mdp.TabularMdp` from a parsed env block."""
    family = spec["family"]
    if family == "chain":
        return make_chain(
            spec["n"], spec.get("swim_reward", -0.01), spec.get("goal_reward", 1.0),
            spec.get("gamma", DEFAULT_GAMMA),
        )
    if family == "random":
        return make_random_mdp(
            spec["n_states"], spec["n_actions"], spec["branching"], spec.get("seed", 0),
            spec.get("gamma", DEFAULT_GAMMA),
        )
    return load_mdp(spec["path"])


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------


def run_one(config, algorithm, env, seed):
    """Execute one (algorithm, seed) job; returns ``(records, extras)``."""
    cfg = config.learner_for(algorithm, env)
    if algorithm == "bqetr":
        result = run_algorithm2(env, replace(config.ensemble, base=cfg), config.episodes, seed)
        return result.records, {"members": result.members}
    if algorithm == "algorithm1":
        return run_algorithm1(env, cfg, config.episodes, seed)[1], {}
    if algorithm == "epsilon_greedy":
        return epsilon_greedy_learner(env, cfg, config.epsilon, config.episodes, seed)[1], {}
    if algorithm == "soft_q":
        return soft_q_learner(env, cfg, config.episodes, seed)[1], {}
    raise ParameterError(f"unknown algorithm {algorithm!r}")


def run_comparison(config, out_dir=None):
    """Run every (algorithm, seed) pair and write the result files.

    Returns ``{algorithm: MetricsReport}``. Seeds that raise are recorded in
    the report's ``failures`` and skipped in the aggregates.
    """
    env = build_env(config.env)
    out = Path(out_dir or config.output) if (out_dir or config.output) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows, reports, summary = [], {}, {}
    for algorithm in config.algorithms:
        runs, failures = {}, {}
        for seed in config.seeds:
            try:
                records, extras = run_one(config, algorithm, env, seed)
            except (ConvergenceError, ParameterError, ArithmeticError, RuntimeError) as exc:
                log.error("%s seed %s failed: %s", algorithm, seed, exc)
                failures[seed] = f"{type(exc).__name__}: {exc}"
                continue
            runs[seed] = records
            run_id = f"{algorithm}-seed{seed}"
            rows.extend((run_id, algorithm, seed, r.index, repr(r.ret), r.steps, repr(r.alpha)) for r in records)
            if out is not None and "members" in extras:
                write_member_log(extras["members"], out / f"{run_id}-members.csv")
        reports[algorithm] = summarize(algorithm, runs, failures)
        summary[algorithm] = reports[algorithm].to_dict()
    if out is not None:
        with open(out / "episodes.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run_id", "algorithm", "seed", "episode", "return", "steps", "alpha"])
            writer.writerows(rows)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return reports


@dataclass(frozen=True)
class ResiduePoint:
    alpha: float
    residue: float
    converged: bool = True
    iterations_note: str = ""


def residue_sweep(env, q, alphas, tol=DEFAULT_TOL, max_iters=100_000):
    """Optimality residue of the regularized fixed point at each ``alpha``.

    A non-converged ``alpha`` is flagged (residue of its last iterate) and
    the sweep continues.
    """
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas) or any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ParameterError("alphas must be positive and strictly decreasing")
    points = []
    for alpha in alphas:
        try:
            values = regularized_fixed_point(env, q, alpha, tol, max_iters)
            points.append(ResiduePoint(alpha, bellman_residue(values, env)))
        except ConvergenceError as exc:
            log.warning("q=%s alpha=%s: %s", q, alpha, exc)
            points.append(ResiduePoint(alpha, bellman_residue(exc.values, env), False, str(exc)))
    return points


def validate_experiment(config):
    """Problems with the experiment's environment, empty when runnable."""
    try:
        env = build_env(config.env)
    except (OSError, ParameterError, ValueError, KeyError) as exc:
        return [f"env: {exc}"]
    return validate_mdp(env)
