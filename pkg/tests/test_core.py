import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unpshield.core import (
    ConstantPolicy,
    Continuous,
    Discrete,
    FeatureState,
    RandomPolicy,
    TerminalStateError,
    Transition,
    discounted_return,
    run_episode,
)
from unpshield.envs import make_env
from unpshield.envs.cartpole import RIGHT, CartPole
from unpshield.shield import Shield


def test_feature_state_lookup_and_equality():
    s = FeatureState((1.0, 2.0), ("a", "b"))
    assert s["b"] == 2.0
    assert s == FeatureState([1, 2], ["a", "b"])
    assert len({s, FeatureState((1.0, 2.0), ("a", "b"))}) == 1
    np.testing.assert_array_equal(s.as_array(), [1.0, 2.0])


@pytest.mark.parametrize("values", [(math.nan,), (math.inf,), ()])
def test_feature_state_rejects_bad_values(values):
    with pytest.raises(ValueError):
        FeatureState(values, ("a",) * max(1, len(values)) if values else ())


def test_action_spaces():
    d, c = Discrete(2), Continuous(-1.0, 1.0)
    assert d.contains(1) and not d.contains(2) and not d.contains(0.5)
    assert c.contains(0.3) and not c.contains(1.5)
    rng = np.random.default_rng(0)
    assert all(d.contains(d.sample(rng)) for _ in range(50))
    assert all(c.contains(c.sample(rng)) for _ in range(50))
    with pytest.raises(ValueError):
        Discrete(1)
    with pytest.raises(ValueError):
        Continuous(1.0, 1.0)


def test_failure_transition_must_be_terminal():
    s = FeatureState((0.0,), ("x",))
    with pytest.raises(ValueError):
        Transition(s, 0, 0.0, s, terminal=False, failure=True)


def test_constant_push_right_fails_before_cap():
    env = CartPole()
    log = run_episode(env, ConstantPolicy(RIGHT), None, 200, np.random.default_rng(0))
    assert log.failed
    assert len(log) < 200


def test_max_steps_one_gives_one_transition():
    for name in ("cartpole", "lanekeep", "flappybird"):
        env = make_env(name)
        log = run_episode(env, RandomPolicy(env.action_space), None, 1, np.random.default_rng(1))
        assert len(log) == 1


def test_max_steps_zero_rejected():
    with pytest.raises(ValueError):
        run_episode(CartPole(), ConstantPolicy(0), None, 0, np.random.default_rng(0))


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_shielded_cartpole_never_executes_unp(seed):
    env = CartPole()
    shield = Shield(env.unp_spec(), env.backup)
    log = run_episode(env, RandomPolicy(env.action_space), shield, 200, np.random.default_rng(seed))
    assert not any(log.unsafe_executed)


@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(["cartpole", "lanekeep", "flappybird"]))
@settings(max_examples=20, deadline=None)
def test_episode_log_invariants(seed, name):
    env = make_env(name)
    log = run_episode(env, RandomPolicy(env.action_space), None, 300, np.random.default_rng(seed))
    assert len(log.transitions) == len(log.interventions) == len(log.unsafe_executed)
    assert log.episode_reward == pytest.approx(sum(t.reward for t in log.transitions), abs=1e-9)
    assert not any(log.interventions)
    for prev, nxt in zip(log.transitions, log.transitions[1:]):
        assert prev.next_state == nxt.state


def test_unshielded_runs_audit_unp_actions():
    env = CartPole()
    log = run_episode(env, ConstantPolicy(RIGHT), None, 200, np.random.default_rng(0))
    spec = env.unp_spec()
    assert log.unsafe_executed == [spec.is_unp(t.state, t.action) for t in log.transitions]
    assert any(log.unsafe_executed)


def test_env_rng_separates_streams():
    env = CartPole()
    a = run_episode(env, RandomPolicy(env.action_space), None, 5, np.random.default_rng(1), env_rng=np.random.default_rng(9))
    b = run_episode(env, RandomPolicy(env.action_space), None, 5, np.random.default_rng(2), env_rng=np.random.default_rng(9))
    assert a.transitions[0].state == b.transitions[0].state


def test_stepping_finished_env_raises():
    env = CartPole(max_steps=1)
    env.reset(np.random.default_rng(0))
    env.step(0)
    with pytest.raises(TerminalStateError):
        env.step(0)


@pytest.mark.parametrize(
    "rewards, gamma, expected",
    [([1, 1, 1], 0.99, 2.9701), ([5], 0.3, 5.0), ([5], 1.0, 5.0), ([0] * 7, 0.9, 0.0)],
)
def test_discounted_return(rewards, gamma, expected):
    assert discounted_return(rewards, gamma) == pytest.approx(expected, abs=1e-12)


def test_discounted_return_validates():
    with pytest.raises(ValueError):
        discounted_return([1.0], 0.0)
    with pytest.raises(ValueError):
        discounted_return([1.0], 1.5)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0.01, 1.0))
def test_discounted_return_matches_direct_sum(rewards, gamma):
    direct = sum(r * gamma**i for i, r in enumerate(rewards))
    assert discounted_return(rewards, gamma) == pytest.approx(direct, rel=1e-9, abs=1e-9)
