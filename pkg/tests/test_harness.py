import csv
import json

import numpy as np
import pytest

from bqetr import harness
from bqetr.ensemble import DEFAULT_Q_VALUES
from bqetr.exceptions import ConfigError, ParameterError
from bqetr.harness import (
    build_env,
    parse_config,
    parse_config_dict,
    residue_sweep,
    run_comparison,
    scaled_alpha_delta,
    validate_experiment,
)
from bqetr.mdp import TabularMdp, make_random_mdp, save_mdp
from bqetr.metrics import fast_learning_metric, final_performance_metric

SMALL = {"env": {"family": "chain", "n": 4}, "episodes": 12, "seeds": [1, 2]}


def test_minimal_document_fills_defaults():
    cfg = parse_config_dict({"env": {"n": 5}})
    assert cfg.k == 10
    assert cfg.q_values == DEFAULT_Q_VALUES == (1.5, 1.6, 1.7, 1.8, 1.9, 2.0, 2.1, 2.2, 2.3, 2.4)
    assert cfg.alpha0 == 0.5
    assert cfg.alpha_delta == 0.5e-5
    assert cfg.seeds == tuple(range(1, 11))
    assert cfg.algorithms == ("bqetr",)
    assert build_env(cfg.env).discount == 0.99


def test_missing_env_is_one_error_naming_the_field():
    with pytest.raises(ConfigError) as exc:
        parse_config_dict({})
    assert exc.value.errors == ["env: required field is missing"]


def test_unknown_key_is_listed():
    with pytest.raises(ConfigError) as exc:
        parse_config_dict({"env": {"n": 5}, "fo": 1})
    assert exc.value.errors == ["fo: unknown field"]
    with pytest.raises(ConfigError) as exc:
        parse_config_dict({"env": {"n": 5, "fo": 1}, "learner": {"fo": 2}})
    assert set(exc.value.errors) == {"env.fo: unknown field", "learner.fo: unknown field"}


@pytest.mark.parametrize("doc, needle", [
    ({"env": {"n": 5}, "algorithm": "dqn"}, "unknown algorithm 'dqn'"),
    ({"env": {"n": 1}}, "env.n"),
    ({"env": {"n": 5, "gamma": 1.0}}, "env.gamma"),
    ({"env": {"family": "random", "n_states": 3}}, "env.n_actions"),
    ({"env": {"n": 5}, "seeds": []}, "seeds"),
    ({"env": {"n": 5}, "episodes": 0}, "episodes"),
    ({"env": {"n": 5}, "learner": {"gamma": 2.0}}, "learner"),
    ({"env": {"n": 5}, "bqetr": {"k": 3, "q_values": [1.5, 2.0]}}, "bqetr.k"),
    ({"env": {"n": 5}, "bqetr": {"mask": {"family": "beta"}}}, "bqetr"),
    ({"env": {"n": 5}, "epsilon_greedy": {"epsilon": 2}}, "epsilon"),
    ({"env": {"n": 5}, "residue": {"alphas": [0.1, 1.0]}}, "residue.alphas"),
])
def test_field_level_errors(doc, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config_dict(doc)
    assert any(needle in e for e in exc.value.errors), exc.value.errors


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"env\": ")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config(bad)


def test_k_without_q_values_spreads_grid():
    cfg = parse_config_dict({"env": {"n": 5}, "bqetr": {"k": 4}})
    assert cfg.q_values == (1.5, 1.8, 2.1, 2.4)
    assert parse_config_dict({"env": {"n": 5}, "bqetr": {"k": 1}}).q_values == (2.0,)


def test_alpha_delta_scaling():
    cfg = parse_config_dict({"env": {"n": 5}, "episodes": 100})
    env = build_env(cfg.env)
    scaled = cfg.learner_for("bqetr", env)
    # 100 episodes * 50 steps / learning interval 1, zero at 80% of that
    assert scaled.alpha_delta == pytest.approx(0.5 / (0.8 * 100 * 50 / cfg.learner.learning_interval))
    assert scaled.alpha_delta == scaled_alpha_delta(cfg.learner, env, 100)
    verbatim = parse_config_dict({"env": {"n": 5}, "scale_alpha_delta": False})
    assert verbatim.learner_for("bqetr", env).alpha_delta == 0.5e-5
    pinned = parse_config_dict({"env": {"n": 5}, "learner": {"alpha_delta": 1e-3}})
    assert pinned.learner_for("algorithm1", env).alpha_delta == 1e-3


def test_per_algorithm_override():
    cfg = parse_config_dict({"env": {"n": 5}, "learner": {"batch_size": 8}, "algorithm1": {"batch_size": 2}})
    env = build_env(cfg.env)
    assert cfg.learner_for("algorithm1", env).batch_size == 2
    assert cfg.learner_for("bqetr", env).batch_size == 8


def test_build_env_families(tmp_path):
    rnd = build_env({"family": "random", "n_states": 4, "n_actions": 3, "branching": 2, "seed": 5})
    assert (rnd.n_states, rnd.n_actions, rnd.discount) == (4, 3, 0.99)
    save_mdp(make_random_mdp(3, 2, 2, 0), tmp_path / "m.json")
    assert build_env({"family": "file", "path": str(tmp_path / "m.json")}).n_states == 3


def test_single_algorithm_single_seed_has_one_series():
    cfg = parse_config_dict({**SMALL, "seeds": [3]})
    reports = run_comparison(cfg)
    assert list(reports) == ["bqetr"]
    assert list(reports["bqetr"].returns) == [3] and len(reports["bqetr"].returns[3]) == 12


def test_outputs_are_bit_identical_and_match_metrics(tmp_path):
    cfg = parse_config_dict({**SMALL, "algorithm": ["bqetr", "algorithm1", "epsilon_greedy", "soft_q"]})
    run_comparison(cfg, tmp_path / "a")
    run_comparison(cfg, tmp_path / "b")
    for name in ("episodes.csv", "summary.json", "bqetr-seed1-members.csv", "bqetr-seed2-members.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "episodes.csv").open()))
    assert list(rows[0]) == ["run_id", "algorithm", "seed", "episode", "return", "steps", "alpha"]
    assert len(rows) == 4 * 2 * 12
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    for algo in cfg.algorithms:
        per_seed = [[float(r["return"]) for r in rows if r["algorithm"] == algo and r["seed"] == str(s)]
                    for s in cfg.seeds]
        fast = [fast_learning_metric(x) for x in per_seed]
        final = [final_performance_metric(x) for x in per_seed]
        assert summary[algo]["fast_learning"]["mean"] == pytest.approx(np.mean(fast), abs=1e-12)
        assert summary[algo]["fast_learning"]["sample_std"] == pytest.approx(np.std(fast, ddof=1), abs=1e-12)
        assert summary[algo]["final_performance"]["mean"] == pytest.approx(np.mean(final), abs=1e-12)


def test_failed_seed_is_annotated(monkeypatch, tmp_path):
    real = harness.run_one

    def flaky(config, algorithm, env, seed):
        if seed == 2:
            raise RuntimeError("synthetic failure")
        return real(config, algorithm, env, seed)

    monkeypatch.setattr(harness, "run_one", flaky)
    reports = run_comparison(parse_config_dict(SMALL), tmp_path)
    rep = reports["bqetr"]
    assert rep.seeds == [1] and rep.failures == {2: "RuntimeError: synthetic failure"}
    assert json.loads((tmp_path / "summary.json").read_text())["bqetr"]["failures"] == {"2": "RuntimeError: synthetic failure"}


def zero_reward_env():
    mdp = make_random_mdp(4, 3, 2, 1)
    return TabularMdp(mdp.transition, np.zeros_like(mdp.reward), mdp.discount, mdp.terminal_states, mdp.initial_state)


def test_residue_sweep_zero_reward():
    for q in (1.5, 2.0, 3.0):
        points = residue_sweep(zero_reward_env(), q, [1.0, 0.1, 0.01])
        assert [p.alpha for p in points] == [1.0, 0.1, 0.01]
        assert all(p.residue == 0.0 and p.converged for p in points)


def test_residue_sweep_both_indices_vanish():
    env = make_random_mdp(8, 3, 3, 7)
    alphas = [1.0, 0.1, 0.01, 1e-3, 1e-4]
    for q in (2.0, 3.0):
        res = [p.residue for p in residue_sweep(env, q, alphas)]
        assert all(b <= a + 1e-9 for a, b in zip(res, res[1:]))
        assert res[-1] < 1e-2 < res[0]


def test_residue_sweep_rejects_bad_alphas():
    for bad in ([0.1, 1.0], [1.0, 0.0], [1.0, 1.0]):
        with pytest.raises(ParameterError):
            residue_sweep(zero_reward_env(), 2.0, bad)


def test_residue_sweep_flags_and_continues():
    env = make_random_mdp(8, 3, 3, 7)
    points = residue_sweep(env, 2.0, [1.0, 0.1], max_iters=2)
    assert [p.converged for p in points] == [False, False]
    assert all(np.isfinite(p.residue) and p.iterations_note for p in points)


def test_validate_experiment(tmp_path):
    assert validate_experiment(parse_config_dict({"env": {"n": 5}})) == []
    cfg = parse_config_dict({"env": {"family": "file", "path": str(tmp_path / "none.json")}})
    assert validate_experiment(cfg)[0].startswith("env:")
