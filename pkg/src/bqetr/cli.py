"""Command-line entry point: ``bqetr {train,compare,residue,validate}``.

Exit status is 0 on success, 2 when the config (or MDP) is invalid and 3
when a run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .exceptions import ConfigError, ConvergenceError, DivergenceError, ParameterError
from .harness import ALGORITHMS, build_env, parse_config, residue_sweep, run_comparison, validate_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3

log = logging.getLogger("bqetr")


def _apply_flags(config, args, single_algorithm=False):
    changes = {}
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "episodes", None) is not None:
        if args.episodes < 1:
            raise ConfigError(["--episodes: must be >= 1"])
        changes["episodes"] = args.episodes
    if single_algorithm:
        algorithm = args.algorithm or config.algorithms[0]
        if algorithm not in ALGORITHMS:
            raise ConfigError([f"--algorithm: unknown algorithm {algorithm!r}"])
        changes["algorithms"] = (algorithm,)
    return replace(config, **changes)


def _out_dir(config, args):
    return Path(args.out or config.output or "results")


def _run(config, out):
    reports = run_comparison(config, out)
    failed = False
    for name, report in reports.items():
        d = report.to_dict()
        print(
            f"{name}: fast_learning={d['fast_learning']['mean']:.6g} "
            f"final_performance={d['final_performance']['mean']:.6g} "
            f"median_first_solve={d['median_episodes_to_first_solve']}"
        )
        for seed, msg in report.failures.items():
            print(f"{name} seed {seed} FAILED: {msg}", file=sys.stderr)
            failed = True
    print(f"results written to {out}")
    return EXIT_RUN if failed else EXIT_OK


def cmd_train(args):
    config = _apply_flags(parse_config(args.config), args, single_algorithm=True)
    return _run(config, _out_dir(config, args))


def cmd_compare(args):
    config = _apply_flags(parse_config(args.config), args)
    return _run(config, _out_dir(config, args))


def cmd_residue(args):
    config = parse_config(args.config)
    env = build_env(config.env)
    rows, flagged = [], False
    for q in config.residue_q_values:
        for point in residue_sweep(env, q, config.residue_alphas, config.residue_tol):
            rows.append({"q": q, "alpha": point.alpha, "residue": point.residue, "converged": point.converged})
            flagged |= not point.converged
            mark = "" if point.converged else "  (not converged)"
            print(f"q={q:g} alpha={point.alpha:g} residue={point.residue:.6e}{mark}")
    out = _out_dir(config, args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "residue.json").write_text(json.dumps(rows, indent=2))
    return EXIT_RUN if flagged else EXIT_OK


def cmd_validate(args):
    config = parse_config(args.config)
    problems = validate_experiment(config)
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bqetr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", required=True, help="experiment JSON document")
        p.add_argument("--out", help="output directory (default: config 'output' or ./results)")
        if run_flags:
            p.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
            p.add_argument("--episodes", type=int, help="override the episode count")

    p = sub.add_parser("train", help="one algorithm on one environment")
    common(p)
    p.add_argument("--algorithm", help="algorithm to run (default: first one in the config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="every configured algorithm across seeds")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("residue", help="optimality residue of the regularized fixed point over alpha")
    common(p, run_flags=False)
    p.set_defaults(func=cmd_residue)

    p = sub.add_parser("validate", help="check the config and its MDP")
    common(p, run_flags=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParameterError, ValueError, OSError) as exc:
        # bad env parameters or an unreadable MDP file surface here
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, DivergenceError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
