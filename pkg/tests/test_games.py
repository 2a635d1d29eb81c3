"""Payoff rules and environment invariants."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mediated_rl import games
from mediated_rl.errors import ConfigError, ContractError
from mediated_rl.games import (GameKind, GameState, iterative_pgg, make_spec,
                               one_shot_pgg, pd_with_sacrifice, pgg_iter_step,
                               pgg_reward, prisoners_dilemma, two_step_pd)


# ---------------------------------------------------------------------------
# Construction and reset


def test_reset_iterative_pgg_unit_endowments():
    spec = iterative_pgg(3, 2.0)
    state = games.reset(spec)
    np.testing.assert_array_equal(state.endowments, np.ones(3))
    assert state.turn == 0


def test_reset_matrix_game_stateless():
    state = games.reset(prisoners_dilemma())
    assert state.turn == 0
    assert state.endowments is None


def test_reset_two_step_not_terminal():
    spec = two_step_pd()
    state = games.reset(spec)
    assert not games.is_terminal(spec, state)


@pytest.mark.parametrize("n", [1.0, 3.0, 5.0])
def test_invalid_pgg_multiplier_rejected(n):
    with pytest.raises(ConfigError):
        one_shot_pgg(3, n)


def test_make_spec_ids():
    assert make_spec("pd").name == "pd"
    assert make_spec("pgg-iter", 3, 2.0).kind is GameKind.ITERATIVE_PGG
    assert make_spec("pgg_iter", 3, 2.0).horizon == 10
    with pytest.raises(ConfigError):
        make_spec("nope")


# ---------------------------------------------------------------------------
# Matrix payoffs


PD_CASES = [
    ((0, 0), (0.0, 0.0)),
    ((0, 1), (7.0, -5.0)),
    ((1, 0), (-5.0, 7.0)),
    ((1, 1), (2.0, 2.0)),
]


@pytest.mark.parametrize("action,expected", PD_CASES)
def test_pd_payoffs(action, expected):
    spec = prisoners_dilemma()
    _, rewards = games.step(spec, games.reset(spec), np.asarray(action))
    np.testing.assert_array_equal(rewards, expected)


def test_pds_cooperate_sacrifice():
    spec = pd_with_sacrifice()
    _, rewards = games.step(spec, games.reset(spec), np.array([1, 2]))
    np.testing.assert_array_equal(rewards, (5.0, 0.0))


def test_two_step_pd_state0_mutual_cooperation():
    spec = two_step_pd()
    state, rewards = games.step(spec, games.reset(spec), np.array([1, 1]))
    np.testing.assert_array_equal(rewards, (-1.0, 4.0))
    # second state is the plain PD
    state, rewards = games.step(spec, state, np.array([1, 1]))
    np.testing.assert_array_equal(rewards, (2.0, 2.0))
    assert games.is_terminal(spec, state)


def test_matrix_step_deterministic():
    spec = pd_with_sacrifice()
    state = games.reset(spec)
    first = games.step(spec, state, np.array([0, 2]))[1]
    second = games.step(spec, state, np.array([0, 2]))[1]
    np.testing.assert_array_equal(first, second)


def test_step_on_terminal_raises():
    spec = prisoners_dilemma()
    state, _ = games.step(spec, games.reset(spec), np.array([0, 0]))
    with pytest.raises(ContractError):
        games.step(spec, state, np.array([0, 0]))


def test_action_out_of_range_raises():
    spec = prisoners_dilemma()
    with pytest.raises(ContractError):
        games.step(spec, games.reset(spec), np.array([0, 2]))


# ---------------------------------------------------------------------------
# One-shot PGG


def test_pgg_reward_paper_example():
    np.testing.assert_allclose(pgg_reward(np.array([1, 1, 0]), 3, 2.0),
                               (1 / 3, 1 / 3, 4 / 3))


def test_pgg_reward_no_contributions():
    np.testing.assert_array_equal(pgg_reward(np.zeros(3), 3, 2.0), np.zeros(3))


def test_pgg_reward_full_contribution():
    np.testing.assert_allclose(pgg_reward(np.ones(3), 3, 2.0), np.ones(3))


def test_pgg_reward_rejects_non_binary():
    with pytest.raises(ContractError):
        pgg_reward(np.array([0.5, 0, 0]), 3, 2.0)


@pytest.mark.parametrize("n_agents", [2, 3, 5, 10])
def test_pgg_budget_identity_all_vectors(n_agents):
    # sum_i r_i == (n - 1) * sum_j c_j for every contribution vector
    mult = 1.5
    for bits in itertools.product((0, 1), repeat=n_agents):
        c = np.asarray(bits, dtype=float)
        rewards = pgg_reward(c, n_agents, mult)
        assert rewards.sum() == pytest.approx((mult - 1.0) * c.sum(), abs=1e-12)


# ---------------------------------------------------------------------------
# Iterative PGG


def test_pgg_iter_full_contribution_growth():
    spec = iterative_pgg(3, 2.0)
    state = games.reset(spec)
    state, _ = pgg_iter_step(spec, state, np.ones(3))
    np.testing.assert_allclose(state.endowments, np.full(3, 1.5))


def test_pgg_iter_no_contribution_no_change():
    spec = iterative_pgg(3, 2.0)
    state = GameState(turn=4, endowments=np.array([0.7, 2.0, 1.1]))
    new, rewards = pgg_iter_step(spec, state, np.zeros(3))
    np.testing.assert_array_equal(new.endowments, state.endowments)
    np.testing.assert_array_equal(rewards, np.zeros(3))


def test_pgg_iter_partial_contribution_values():
    # Two contributors at unit endowment: pool = 1, doubled and split three
    # ways returns 2/3 to everyone.
    spec = iterative_pgg(3, 2.0)
    state = games.reset(spec)
    new, rewards = pgg_iter_step(spec, state, np.array([1, 1, 0]))
    np.testing.assert_allclose(new.endowments, (7 / 6, 7 / 6, 5 / 3))
    np.testing.assert_allclose(rewards, new.endowments - 1.0)
    # independent scalar cross-check of agent 0's endowment
    assert new.endowments[0] == pytest.approx(1.0 - 0.5 + 2.0 * 1.0 / 3.0)


def test_pgg_iter_step_after_horizon_raises():
    spec = iterative_pgg(3, 2.0)
    state = GameState(turn=10, endowments=np.ones(3))
    with pytest.raises(ContractError):
        pgg_iter_step(spec, state, np.ones(3))


@settings(max_examples=40, deadline=None)
@given(
    bits=st.lists(st.integers(0, 1), min_size=3, max_size=3),
    endow=st.lists(st.floats(0.1, 50.0), min_size=3, max_size=3),
)
def test_pgg_iter_conservation(bits, endow):
    # Total endowment grows by exactly (n - 1) times the pooled contribution.
    spec = iterative_pgg(3, 2.0)
    state = GameState(turn=0, endowments=np.asarray(endow))
    c = np.asarray(bits, dtype=float)
    new, rewards = pgg_iter_step(spec, state, c)
    pooled = float((0.5 * state.endowments * c).sum())
    assert new.endowments.sum() - state.endowments.sum() == pytest.approx(
        (spec.multiplier - 1.0) * pooled, rel=1e-12)
    np.testing.assert_allclose(rewards, new.endowments - state.endowments)


def test_pgg_iter_return_telescopes_to_endowment_delta():
    spec = iterative_pgg(3, 2.0)
    rng = np.random.default_rng(0)
    state = games.reset(spec)
    total = np.zeros(3)
    while not games.is_terminal(spec, state):
        c = rng.integers(0, 2, size=3)
        state, rewards = games.step(spec, state, c)
        total += rewards
    np.testing.assert_allclose(total, state.endowments - 1.0)


# ---------------------------------------------------------------------------
# Batch stepping agrees with the scalar rule


@pytest.mark.parametrize("env", ["pd", "pds", "pd2", "pgg", "pgg-iter"])
def test_step_batch_matches_scalar(env):
    spec = make_spec(env, 3, 2.0)
    rng = np.random.default_rng(1)
    batch = 16
    endow = np.ones((batch, spec.num_agents)) \
        if spec.kind is GameKind.ITERATIVE_PGG else None
    for turn in range(spec.horizon):
        actions = np.stack([rng.integers(0, spec.num_actions[i], size=batch)
                            for i in range(spec.num_agents)], axis=1)
        rewards, new_endow = games.step_batch(spec, turn, endow, actions)
        for b in range(batch):
            state = GameState(turn=turn, endowments=endow[b].copy()
                              if endow is not None else None)
            _, expected = games.step(spec, state, actions[b])
            np.testing.assert_allclose(rewards[b], expected, atol=1e-12)
        endow = new_endow


def test_obs_layouts():
    assert games.obs_dim(prisoners_dilemma()) == 1
    assert games.obs_dim(two_step_pd()) == 1
    assert games.obs_dim(iterative_pgg(3, 2.0)) == 2
    obs = games.base_obs_batch(two_step_pd(), 1, None, 4)
    np.testing.assert_array_equal(obs, np.full((4, 2, 1), 0.5))
    obs = games.base_obs_batch(prisoners_dilemma(), 0, None, 2)
    np.testing.assert_array_equal(obs, np.ones((2, 2, 1)))
    endow = np.array([[1.0, 2.0, 3.0]])
    obs = games.base_obs_batch(iterative_pgg(3, 2.0), 5, endow, 1)
    np.testing.assert_array_equal(obs[0, :, 0], endow[0])
    np.testing.assert_array_equal(obs[0, :, 1], np.full(3, 0.5))
