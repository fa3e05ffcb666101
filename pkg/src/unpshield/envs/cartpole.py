"""Cart-pole balancing with the canonical benchmark constants.

The pole angle is measured counterclockwise: ``theta > 0`` means the pole
leans toward ``-x`` (left). Under this convention the danger rules below
block exactly the push that moves the cart's base away from the direction
the pole is tipping.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from ..core import Discrete, FeatureState, TerminalStateError, Transition
from ..shield import DangerRule, OtherDiscrete, UnpSpec

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
HALF_LENGTH = 0.5
FORCE_MAG = 10.0
DT = 0.02
THETA_LIMIT = math.radians(12.0)
X_LIMIT = 2.4
MAX_STEPS = 200
DANGER_ANGLE = math.radians(3.0)

LEFT, RIGHT = 0, 1
ACTION_NAMES = ("push_left", "push_right")
FEATURES = ("x", "x_dot", "theta", "theta_dot")


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float

    def features(self) -> FeatureState:
        return FeatureState((self.x, self.x_dot, self.theta, self.theta_dot), FEATURES)

    @classmethod
    def from_features(cls, fs: FeatureState) -> "CartPoleState":
        return cls(*(fs[name] for name in FEATURES))


def dynamics(s: CartPoleState, action: int) -> CartPoleState:
    """One explicit Euler step of length ``DT``."""
    force = FORCE_MAG if action == RIGHT else -FORCE_MAG
    total_mass = MASS_CART + MASS_POLE
    pole_ml = MASS_POLE * HALF_LENGTH
    sin, cos = math.sin(s.theta), math.cos(s.theta)
    temp = (force - pole_ml * s.theta_dot**2 * sin) / total_mass
    theta_acc = (GRAVITY * sin + cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos**2 / total_mass))
    x_acc = temp + pole_ml * theta_acc * cos / total_mass
    return CartPoleState(
        s.x + DT * s.x_dot,
        s.x_dot + DT * x_acc,
        s.theta + DT * s.theta_dot,
        s.theta_dot + DT * theta_acc,
    )


def is_failure(s: CartPoleState) -> bool:
    return abs(s.theta) >= THETA_LIMIT or abs(s.x) >= X_LIMIT


def cartpole_step(state: CartPoleState, action: int, steps_done: int = 0, max_steps: int = MAX_STEPS) -> Transition:
    """Advance ``state`` by one action; ``steps_done`` counts earlier steps of the episode."""
    if action not in (LEFT, RIGHT):
        raise ValueError(f"cart-pole action must be 0 or 1, got {action!r}")
    if is_failure(state) or steps_done >= max_steps:
        raise TerminalStateError("cart-pole episode already over")
    nxt = dynamics(state, action)
    failure = is_failure(nxt)
    return Transition(
        state=state.features(),
        action=int(action),
        reward=0.0 if failure else 1.0,
        next_state=nxt.features(),
        terminal=failure or steps_done + 1 >= max_steps,
        failure=failure,
    )


def cartpole_unp() -> UnpSpec:
    return UnpSpec(
        (
            DangerRule(
                "push_left while tipping to -theta",
                lambda s: s["theta"] < -DANGER_ANGLE and s["theta_dot"] < 0.0,
                lambda a: a == LEFT,
            ),
            DangerRule(
                "push_right while tipping to +theta",
                lambda s: s["theta"] > DANGER_ANGLE and s["theta_dot"] > 0.0,
                lambda a: a == RIGHT,
            ),
        )
    )


def danger_grid(per_axis: int = 25) -> list[FeatureState]:
    """A dense grid over (x, x_dot, theta, theta_dot) reaching well into both danger regions."""
    xs = np.linspace(-2.3, 2.3, per_axis)
    vs = np.linspace(-3.0, 3.0, per_axis)
    thetas = np.linspace(-THETA_LIMIT, THETA_LIMIT, per_axis)
    omegas = np.linspace(-3.0, 3.0, per_axis)
    return [
        FeatureState((x, v, t, w), FEATURES)
        for x in xs[:: max(1, per_axis // 5)]
        for v in vs[:: max(1, per_axis // 5)]
        for t in thetas
        for w in omegas
    ]


class CartPole:
    name = "cartpole"
    action_space = Discrete(2)
    feature_names = FEATURES
    reward_min = 0.0
    converged_reward = 200.0

    def __init__(self, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self.state = CartPoleState(0.0, 0.0, 0.0, 0.0)
        self.steps = 0
        self.done = False
        self._spec = cartpole_unp()
        self.backup = OtherDiscrete()

    def reset(self, rng: np.random.Generator) -> FeatureState:
        self.state = CartPoleState(*rng.uniform(-0.05, 0.05, size=4))
        self.steps = 0
        self.done = False
        return self.state.features()

    def restore(self, fs: FeatureState, steps: int = 0) -> None:
        self.state = CartPoleState.from_features(fs)
        self.steps = steps
        self.done = False

    def step(self, action: int) -> Transition:
        if self.done:
            raise TerminalStateError("step() called on a finished cart-pole episode")
        tr = cartpole_step(self.state, int(action), self.steps, self.max_steps)
        self.state = CartPoleState.from_features(tr.next_state)
        self.steps += 1
        self.done = tr.terminal
        return tr

    def observe(self) -> FeatureState:
        return self.state.features()

    def is_safe(self, fs: FeatureState) -> bool:
        return not is_failure(CartPoleState.from_features(fs))

    def clone(self) -> "CartPole":
        return copy.copy(self)

    def unp_spec(self) -> UnpSpec:
        return self._spec
