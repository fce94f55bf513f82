import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bqetr.exceptions import ConvergenceError, ParameterError
from bqetr.mdp import (
    TabularMdp,
    bellman_optimality_operator,
    bellman_residue,
    greedy_actions,
    load_mdp,
    make_chain,
    make_random_mdp,
    mdp_from_dict,
    mdp_to_dict,
    policy_evaluation,
    regularized_fixed_point,
    save_mdp,
    validate_mdp,
    value_iteration,
)
from bqetr.policy import ActionDistribution, softplus_policy_batch


def one_state(rewards, gamma=0.5):
    rewards = np.atleast_1d(np.asarray(rewards, dtype=float))
    return TabularMdp(np.ones((1, rewards.size, 1)), rewards[None], gamma)


def test_validate_reports():
    assert validate_mdp(make_chain(3, -0.01, 1.0, 0.9)) == []
    assert validate_mdp(one_state([1, 0])) == []
    P = np.ones((2, 1, 2)) * 0.5
    P[1, 0] = [0.45, 0.45]
    problems = validate_mdp(TabularMdp(P, np.zeros((2, 1)), 0.9))
    assert len(problems) == 1 and "transition[1,0]" in problems[0]
    problems = validate_mdp(one_state([1.0], gamma=1.0))
    assert len(problems) == 1 and "discount" in problems[0]


def test_validate_terminal_conventions():
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1.0
    assert validate_mdp(TabularMdp(P, np.zeros((2, 1)), 0.9, {1})) == []
    assert len(validate_mdp(TabularMdp(P, np.zeros((2, 1)), 0.9, {0}))) == 1
    assert len(validate_mdp(TabularMdp(P, np.ones((2, 1)), 0.9, {1}))) == 1
    assert len(validate_mdp(TabularMdp(P, np.zeros((2, 1)), 0.9, {5}))) == 1


def test_shape_mismatch_rejected():
    with pytest.raises(ParameterError):
        TabularMdp(np.ones((2, 2, 3)), np.zeros((2, 2)), 0.9)
    with pytest.raises(ParameterError):
        TabularMdp(np.ones((2, 2, 2)), np.zeros((2, 3)), 0.9)


def test_value_iteration_geometric_series():
    sol = value_iteration(one_state([1.0]))
    assert sol.q_star[0, 0] == pytest.approx(2.0, abs=1e-9)
    assert sol.final_sup_change <= 1e-10 * (1 + 2.0)


def test_value_iteration_hand_unrolled_chain():
    # terminal state 2; Q(1,R)=1; Q(0,R)=-0.01+0.9*1; Q(0,L)=0.9*Q(0,R); Q(1,L)=0.9*V(0)
    sol = value_iteration(make_chain(3, -0.01, 1.0, 0.9))
    expected = np.array([[0.9 * 0.89, 0.89], [0.9 * 0.89, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(sol.q_star, expected, atol=1e-9)
    np.testing.assert_array_equal(sol.v_star, sol.q_star.max(axis=1))


def test_value_iteration_zero_rewards_and_failure():
    mdp = make_random_mdp(6, 3, 2, seed=4)
    zero = TabularMdp(mdp.transition, np.zeros_like(mdp.reward), mdp.discount)
    assert np.all(value_iteration(zero).q_star == 0)
    with pytest.raises(ConvergenceError) as info:
        value_iteration(mdp, max_iters=3)
    assert info.value.last_change > 0 and info.value.iterations == 3
    with pytest.raises(ParameterError):
        value_iteration(mdp, tol=0)


def test_policy_evaluation_examples():
    mdp = one_state([1.0, 0.0])
    uniform = [ActionDistribution.from_probs([0.5, 0.5])]
    np.testing.assert_allclose(policy_evaluation(mdp, uniform), [[1.5, 0.5]], atol=1e-9)
    rnd = make_random_mdp(8, 3, 3, seed=2)
    sol = value_iteration(rnd)
    greedy = np.eye(3)[greedy_actions(sol.q_star)]
    np.testing.assert_allclose(policy_evaluation(rnd, greedy), sol.q_star, atol=1e-8)
    zero = TabularMdp(rnd.transition, np.zeros_like(rnd.reward), rnd.discount)
    assert np.all(policy_evaluation(zero, greedy) == 0)
    with pytest.raises(ParameterError):
        policy_evaluation(rnd, greedy[:3])


def test_greedy_actions_tie_low():
    assert greedy_actions([[1, 1], [0, 2]]).tolist() == [0, 1]


def test_bellman_residue_examples():
    mdp = one_state([1.0])
    assert bellman_residue(np.zeros((1, 1)), mdp) == 1.0
    rnd = make_random_mdp(10, 4, 3, seed=7)
    sol = value_iteration(rnd)
    assert bellman_residue(sol.q_star, rnd) <= 1e-10 * (1 + np.abs(sol.q_star).max())
    with pytest.raises(ParameterError):
        bellman_residue(np.full((10, 4), np.inf), rnd)


def test_regularized_fixed_point_alpha_zero_matches_value_iteration():
    for seed in range(5):
        mdp = make_random_mdp(10, 4, 3, seed=seed)
        vi = value_iteration(mdp).q_star
        fp = regularized_fixed_point(mdp, 2.0, 0.0)
        scale = 1 + np.abs(vi).max()
        assert np.max(np.abs(fp - vi)) <= 2 * 1e-10 * scale


def test_regularized_fixed_point_zero_rewards():
    mdp = make_random_mdp(5, 3, 2, seed=1)
    zero = TabularMdp(mdp.transition, np.zeros_like(mdp.reward), mdp.discount)
    for q in (1.5, 2.0, 3.0):
        for alpha in (0.0, 0.1, 2.0):
            assert np.all(regularized_fixed_point(zero, q, alpha) == 0)


def test_regularized_fixed_point_scalar_cross_check():
    # the same map written out by hand for one state, two actions
    r, gamma, alpha = np.array([1.0, 0.0]), 0.5, 0.1
    qa = np.zeros(2)
    for _ in range(5000):
        c = approx_c_two_actions(qa, alpha)
        w = np.log1p(np.exp((qa - c) / alpha))
        pi = w / w.sum()
        qa = r + gamma * float(pi @ qa)
    fp = regularized_fixed_point(one_state(r), 2.0, alpha)
    np.testing.assert_allclose(fp[0], qa, atol=1e-9)


def approx_c_two_actions(row, alpha):
    hi, lo = max(row), min(row)
    if 2 + 2 * lo / alpha > (hi + lo) / alpha:
        return alpha * ((hi + lo) / alpha - 2) / 2
    return alpha * (hi / alpha - 2)


def test_regularized_fixed_point_is_fixed():
    mdp = make_random_mdp(10, 4, 3, seed=3)
    for q in (1.5, 2.4):
        Q = regularized_fixed_point(mdp, q, 0.1)
        pi = softplus_policy_batch(Q, 0.1, q)
        backup = mdp.reward + mdp.discount * mdp.transition @ np.sum(pi * Q, axis=1)
        assert np.max(np.abs(backup - Q)) <= 1e-10 * (1 + np.abs(Q).max())


def test_regularized_fixed_point_reports_non_convergence():
    mdp = make_random_mdp(10, 4, 3, seed=3)
    with pytest.raises(ConvergenceError) as info:
        regularized_fixed_point(mdp, 2.0, 0.1, max_iters=5)
    assert info.value.values.shape == (10, 4)
    with pytest.raises(ParameterError):
        regularized_fixed_point(mdp, 2.0, -1.0)


def test_chain_structure():
    mdp = make_chain(5, -0.01, 1.0, 0.99)
    assert mdp.n_states == 5 and mdp.n_actions == 2
    assert validate_mdp(mdp) == []
    rng = np.random.default_rng(0)
    assert mdp.step(0, 0, rng) == (0, 0.0, False)
    assert mdp.step(2, 0, rng) == (1, 0.0, False)
    assert mdp.step(2, 1, rng) == (3, -0.01, False)
    assert mdp.step(3, 1, rng) == (4, 1.0, True)
    with pytest.raises(ParameterError):
        make_chain(1)


@pytest.mark.parametrize("n", [2, 3, 6, 20])
def test_chain_optimal_policy_is_always_right(n):
    mdp = make_chain(n, -0.01, 1.0, 0.99)
    sol = value_iteration(mdp)
    assert np.all(sol.greedy_policy[: n - 1] == 1)


def test_two_state_chain_single_decision():
    mdp = make_chain(2, -0.01, 1.0, 0.9)
    assert mdp.step(0, 1, np.random.default_rng(0)) == (1, 1.0, True)
    assert greedy_actions(value_iteration(mdp).q_star)[0] == 1


def test_random_mdp_determinism_and_validity():
    a, b = make_random_mdp(10, 4, 3, seed=5), make_random_mdp(10, 4, 3, seed=5)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)
    for seed in range(100):
        mdp = make_random_mdp(10, 4, 3, seed=seed)
        assert validate_mdp(mdp) == []
        assert np.all((mdp.transition > 0).sum(axis=2) <= 3)
        assert np.all((mdp.reward >= 0) & (mdp.reward <= 1))
    with pytest.raises(ParameterError):
        make_random_mdp(3, 2, 4, seed=0)


def test_stochastic_step_frequencies():
    P = np.zeros((2, 1, 2))
    P[0, 0] = [0.3, 0.7]
    P[1, 0] = [0.0, 1.0]
    mdp = TabularMdp(P, np.zeros((2, 1)), 0.9)
    rng = np.random.default_rng(0)
    hits = sum(mdp.step(0, 0, rng)[0] for _ in range(20_000))
    assert abs(hits / 20_000 - 0.7) < 0.015


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_value_iteration_residue_property(seed):
    mdp = make_random_mdp(6, 3, 2, seed=seed)
    sol = value_iteration(mdp)
    assert bellman_residue(sol.q_star, mdp) <= 1e-10 * (1 + np.abs(sol.q_star).max())


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_operator_monotone_and_contracting(seed):
    rng = np.random.default_rng(seed)
    mdp = make_random_mdp(6, 3, 3, seed=seed)
    q1 = rng.normal(size=(6, 3))
    q2 = q1 + np.abs(rng.normal(size=(6, 3)))
    assert np.all(bellman_optimality_operator(q1, mdp) <= bellman_optimality_operator(q2, mdp) + 1e-15)
    q3 = rng.normal(size=(6, 3)) * 3
    lhs = np.max(np.abs(bellman_optimality_operator(q1, mdp) - bellman_optimality_operator(q3, mdp)))
    assert lhs <= mdp.discount * np.max(np.abs(q1 - q3)) + 1e-12


def test_json_roundtrip(tmp_path):
    mdp = make_chain(4, -0.02, 2.0, 0.95)
    path = tmp_path / "chain.json"
    save_mdp(mdp, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"n_states", "n_actions", "gamma", "transition", "reward", "terminals", "initial_state"}
    back = load_mdp(path)
    assert np.array_equal(back.transition, mdp.transition)
    assert np.array_equal(back.reward, mdp.reward)
    assert back.terminal_states == mdp.terminal_states and back.discount == mdp.discount


def test_json_rejects_bad_documents():
    doc = mdp_to_dict(make_chain(3))
    with pytest.raises(ParameterError, match="missing"):
        mdp_from_dict({k: v for k, v in doc.items() if k != "reward"})
    with pytest.raises(ParameterError, match="unknown"):
        mdp_from_dict({**doc, "fo": 1})
    with pytest.raises(ParameterError):
        mdp_from_dict({**doc, "n_states": 4})


def test_json_schema_accepts_serialized_mdp():
    jsonschema = pytest.importorskip("jsonschema")
    from importlib.resources import files

    schema = json.loads(files("bqetr").joinpath("schema/mdp.schema.json").read_text())
    jsonschema.validate(mdp_to_dict(make_random_mdp(4, 2, 2, seed=0)), schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({**mdp_to_dict(make_chain(3)), "fo": 1}, schema)


def test_fixed_point_escapes_cycle():
    # plain iteration settles into a period-4 cycle on this instance
    env = make_random_mdp(10, 4, 3, 16, 0.9)
    values = regularized_fixed_point(env, 1.5, 0.1)
    pi = softplus_policy_batch(values, 0.1, 1.5)
    backup = env.reward + env.discount * env.transition @ np.sum(pi * values, axis=1)
    assert np.max(np.abs(backup - values)) <= 1e-10 * (1 + np.max(np.abs(values)))
