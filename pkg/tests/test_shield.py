import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unpshield.core import ConstantPolicy, FeatureState, Transition
from unpshield.envs import danger_grid, make_env
from unpshield.envs.cartpole import FEATURES as CP_FEATURES
from unpshield.envs.cartpole import LEFT, RIGHT, CartPole
from unpshield.envs.flappy import FEATURES as FB_FEATURES
from unpshield.envs.flappy import FLAP, NO_FLAP
from unpshield.envs.lanekeep import FEATURES as LK_FEATURES
from unpshield.shield import (
    BackupFailure,
    DangerRule,
    NegateContinuous,
    OtherDiscrete,
    Shield,
    UnpSpec,
    check_backup_safety,
    check_transition,
    interference_rate,
    is_unp,
    shield_act,
    validate_assumption1,
)

RNG = np.random.default_rng(0)


def cp(theta_deg=0.0, theta_dot=0.0, x=0.0, x_dot=0.0) -> FeatureState:
    return FeatureState((x, x_dot, math.radians(theta_deg), theta_dot), CP_FEATURES)


def lk(delta, psi=0.0, kappa=0.0) -> FeatureState:
    return FeatureState((psi, delta, kappa, 20.0), LK_FEATURES)


def fb(y, y_l=250.0, v=0.0, x=100.0) -> FeatureState:
    return FeatureState((y, v, x, y_l + 100.0, y_l), FB_FEATURES)


CP_SPEC = make_env("cartpole").unp_spec()
LK_SPEC = make_env("lanekeep").unp_spec()
FB_SPEC = make_env("flappybird").unp_spec()


def test_cartpole_unp_examples():
    assert is_unp(CP_SPEC, cp(-4, -0.2), LEFT)
    assert is_unp(CP_SPEC, cp(-4, -0.1), LEFT)
    assert not is_unp(CP_SPEC, cp(-4, 0.1), LEFT)
    assert is_unp(CP_SPEC, cp(4, 0.1), RIGHT)
    assert not any(is_unp(CP_SPEC, cp(0, 0), a) for a in (LEFT, RIGHT))
    assert not is_unp(CP_SPEC, cp(3.5, 0.0), RIGHT)


def test_cartpole_threshold_is_strict():
    edge = FeatureState((0.0, 0.0, math.radians(3.0), 1.0), CP_FEATURES)
    assert not is_unp(CP_SPEC, edge, RIGHT)
    assert is_unp(CP_SPEC, FeatureState((0.0, 0.0, math.radians(3.0) + 1e-9, 1.0), CP_FEATURES), RIGHT)


def test_lanekeep_unp_examples():
    assert is_unp(LK_SPEC, lk(-0.7), -0.3)
    assert not any(is_unp(LK_SPEC, lk(0.0), a) for a in np.linspace(-1, 1, 11))
    assert not is_unp(LK_SPEC, lk(0.6), 0.0)
    assert not is_unp(LK_SPEC, lk(0.5), 0.5)


def test_flappy_unp_examples():
    assert is_unp(FB_SPEC, fb(240.0, y_l=250.0), NO_FLAP)
    assert not any(is_unp(FB_SPEC, fb(300.0, y_l=250.0), a) for a in (NO_FLAP, FLAP))
    assert is_unp(FB_SPEC, fb(355.0, y_l=250.0), FLAP)


def test_spec_helpers():
    assert CP_SPEC.matching_rules(cp(4, 0.1), RIGHT) == ["push_right while tipping to +theta"]
    assert CP_SPEC.in_danger(cp(-5, -1)) and not CP_SPEC.in_danger(cp(-5, 1))


def test_shield_act_examples():
    shield = Shield(LK_SPEC, NegateContinuous())
    assert shield_act(shield, ConstantPolicy(0.4), lk(0.8), RNG) == (-0.4, True)
    shield = Shield(CP_SPEC, OtherDiscrete())
    assert shield_act(shield, ConstantPolicy(LEFT), cp(0, 0), RNG) == (LEFT, False)
    shield = Shield(FB_SPEC, OtherDiscrete())
    assert shield_act(shield, ConstantPolicy(NO_FLAP), fb(200.0, y_l=250.0), RNG) == (FLAP, True)
    assert (shield.interventions, shield.queries) == (1, 1)


def test_unsafe_backup_aborts():
    both = UnpSpec((DangerRule("all", lambda s: True, lambda a: True),))
    shield = Shield(both, OtherDiscrete())
    with pytest.raises(BackupFailure):
        shield.filter(cp(), LEFT)
    assert shield.interventions == 0


def test_interference_rate():
    assert interference_rate(Shield(CP_SPEC, OtherDiscrete(), 0, 100)) == 0.0
    assert interference_rate(Shield(CP_SPEC, OtherDiscrete(), 100, 100)) == 1.0
    with pytest.raises(ZeroDivisionError):
        interference_rate(Shield(CP_SPEC, OtherDiscrete()))


cartpole_states = st.builds(
    cp, st.floats(-11.9, 11.9), st.floats(-3, 3), st.floats(-2.3, 2.3), st.floats(-3, 3)
)
lanekeep_states = st.builds(lk, st.floats(-0.999, 0.999), st.floats(-1, 1), st.sampled_from([0.0, 0.01, -0.01]))
flappy_states = st.builds(fb, st.floats(1, 511), st.floats(106, 406), st.floats(-20, 8), st.floats(0, 150))

CASES = [
    ("cartpole", cartpole_states, st.sampled_from([LEFT, RIGHT]), OtherDiscrete()),
    ("lanekeep", lanekeep_states, st.floats(-1, 1), NegateContinuous()),
    ("flappybird", flappy_states, st.sampled_from([NO_FLAP, FLAP]), OtherDiscrete()),
]


@pytest.mark.parametrize("name, states, actions, backup", CASES, ids=[c[0] for c in CASES])
@settings(max_examples=300)
@given(data=st.data())
def test_correctness_and_minimal_interference(name, states, actions, backup, data):
    spec = make_env(name).unp_spec()
    state, proposed = data.draw(states), data.draw(actions)
    shield = Shield(spec, backup, interventions=data.draw(st.integers(0, 50)), queries=50)
    action, intervened = shield_act(shield, ConstantPolicy(proposed), state, RNG)
    assert not spec.is_unp(state, action)
    assert intervened == spec.is_unp(state, proposed)
    if not intervened:
        assert action == proposed
    assert shield.interventions <= shield.queries
    fresh = Shield(spec, backup)
    assert fresh.filter(state, proposed)[0] == action


@pytest.mark.parametrize("name", ["cartpole", "lanekeep", "flappybird"])
def test_backup_is_never_unp_on_dense_grid(name):
    env = make_env(name)
    grid = danger_grid(name)
    assert len(grid) >= 10_000
    if name == "lanekeep":
        actions = list(np.linspace(-1.0, 1.0, 41))
    else:
        actions = [0, 1]
    check = check_backup_safety(env.unp_spec(), env.backup, grid, actions)
    assert check.states_checked == len(grid)
    assert check.unp_proposals > 1000
    assert check.passed


def test_backup_check_reports_failures():
    both = UnpSpec((DangerRule("all", lambda s: True, lambda a: True),))
    check = check_backup_safety(both, OtherDiscrete(), [cp()], [0, 1])
    assert not check.passed and len(check.failures) == 2


def test_check_transition_kinds():
    s = cp()
    assert check_transition(Transition(s, 0, 1.0, s, True, True), 0.0) == "failure reward != r_min"
    assert check_transition(Transition(s, 0, 0.0, s, False), 0.0) == "non-failure reward <= r_min"
    assert check_transition(Transition(s, 0, 1.0, s, True, False), 0.0) is None


class MisrewardedCartPole(CartPole):
    """Pays 1 on failure instead of the minimum reward."""

    def step(self, action):
        tr = super().step(action)
        if tr.failure:
            tr = Transition(tr.state, tr.action, 1.0, tr.next_state, True, True)
        return tr


def probes(name):
    env = make_env(name)
    grid = [s for s in danger_grid(name) if env.is_safe(s)]
    return grid[:: max(1, len(grid) // 200)]


@pytest.mark.parametrize("name", ["cartpole", "lanekeep", "flappybird"])
def test_assumption1_holds(name):
    report = validate_assumption1(make_env(name), probes(name), np.random.default_rng(0))
    assert report.passed, report.summary()
    assert report.failures_seen > 0


def test_assumption1_catches_mutated_reward():
    report = validate_assumption1(MisrewardedCartPole(), probes("cartpole"), np.random.default_rng(0))
    assert not report.passed
    assert report.kinds == {"failure reward != r_min"}
    assert "FAIL" in report.summary()


def test_assumption1_needs_a_failure():
    report = validate_assumption1(make_env("cartpole"), [], np.random.default_rng(0), rollouts=0)
    assert not report.passed
