"""Feature-state FlappyBird with integer-pixel physics.

``y`` grows upward from the ground at 0 to the ceiling at ``SCREEN_HEIGHT``.
Pipes scroll toward the bird; when a pipe reaches the bird the gap test
decides between clearing it and crashing. Leaving the screen is a crash too.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..core import Discrete, FeatureState, TerminalStateError, Transition
from ..shield import DangerRule, OtherDiscrete, UnpSpec

GRAVITY = 1.0
FLAP_IMPULSE = 8.0
SCROLL_SPEED = 4.0
GAP_HEIGHT = 100.0
PIPE_SPACING = 150.0
SCREEN_HEIGHT = 512.0
SCREEN_CENTER = SCREEN_HEIGHT / 2
GAP_BOTTOM_OFFSET = (-50.0, 150.0)
REWARD_CUTOFF = 1000.0
MAX_STEPS = 20000

CLEAR_REWARD = 1.0
ALIVE_REWARD = 0.1
CRASH_REWARD = -1.0

NO_FLAP, FLAP = 0, 1
ACTION_NAMES = ("no_flap", "flap")
FEATURES = ("y_bird", "v_y", "x_dist_to_pipe", "y_upipe", "y_lpipe")


@dataclass(frozen=True)
class FlappyState:
    y_bird: float
    v_y: float
    x_dist_to_pipe: float
    y_lpipe: float
    y_upipe: float

    def features(self) -> FeatureState:
        return FeatureState((self.y_bird, self.v_y, self.x_dist_to_pipe, self.y_upipe, self.y_lpipe), FEATURES)

    @classmethod
    def from_features(cls, fs: FeatureState) -> "FlappyState":
        return cls(fs["y_bird"], fs["v_y"], fs["x_dist_to_pipe"], fs["y_lpipe"], fs["y_upipe"])


def draw_gap_bottom(rng: np.random.Generator) -> float:
    lo, hi = GAP_BOTTOM_OFFSET
    return float(SCREEN_CENTER + rng.integers(int(lo), int(hi) + 1))


def flappy_step(state: FlappyState, action: int, rng: np.random.Generator) -> tuple[Transition, FlappyState]:
    """One frame. ``rng`` is consulted only when a cleared pipe is replaced."""
    if action not in (NO_FLAP, FLAP):
        raise ValueError(f"flappy action must be 0 or 1, got {action!r}")
    v = FLAP_IMPULSE if action == FLAP else state.v_y - GRAVITY
    y = state.y_bird + v
    x_dist = state.x_dist_to_pipe - SCROLL_SPEED
    y_l, y_u = state.y_lpipe, state.y_upipe
    failure = False
    if x_dist <= 0.0:
        if y_l < y < y_u:
            reward = CLEAR_REWARD
            x_dist += PIPE_SPACING
            y_l = draw_gap_bottom(rng)
            y_u = y_l + GAP_HEIGHT
        else:
            reward, failure = CRASH_REWARD, True
    elif y <= 0.0 or y >= SCREEN_HEIGHT:
        reward, failure = CRASH_REWARD, True
    else:
        reward = ALIVE_REWARD
    nxt = FlappyState(y, v, x_dist, y_l, y_u)
    tr = Transition(state.features(), int(action), reward, nxt.features(), failure, failure)
    return tr, nxt


def flappy_unp() -> UnpSpec:
    return UnpSpec(
        (
            DangerRule("no_flap below the gap", lambda s: s["y_bird"] < s["y_lpipe"], lambda a: a == NO_FLAP),
            DangerRule("flap above the gap", lambda s: s["y_bird"] > s["y_upipe"], lambda a: a == FLAP),
        )
    )


def danger_grid() -> list[FeatureState]:
    """Bird heights x velocities x gap positions x distances: 12 800 states."""
    lo, hi = GAP_BOTTOM_OFFSET
    return [
        FeatureState((y, v, x, y_l + GAP_HEIGHT, y_l), FEATURES)
        for y in np.linspace(1.0, SCREEN_HEIGHT - 1.0, 40)
        for v in np.linspace(-20.0, FLAP_IMPULSE, 8)
        for x in np.linspace(4.0, PIPE_SPACING, 4)
        for y_l in np.linspace(SCREEN_CENTER + lo, SCREEN_CENTER + hi, 10)
    ]


class FlappyBird:
    name = "flappybird"
    action_space = Discrete(2)
    feature_names = FEATURES
    reward_min = CRASH_REWARD
    converged_reward = 200.0
    feature_scale = (SCREEN_HEIGHT, 10.0, PIPE_SPACING, SCREEN_HEIGHT, SCREEN_HEIGHT)

    def __init__(self, max_steps: int = MAX_STEPS, reward_cutoff: float = REWARD_CUTOFF):
        self.max_steps = max_steps
        self.reward_cutoff = reward_cutoff
        self.rng = np.random.default_rng(0)
        self.state = FlappyState(SCREEN_CENTER, 0.0, PIPE_SPACING, SCREEN_CENTER - 50, SCREEN_CENTER + 50)
        self.steps = 0
        self.total_reward = 0.0
        self.done = False
        self._spec = flappy_unp()
        self.backup = OtherDiscrete()

    def reset(self, rng: np.random.Generator) -> FeatureState:
        """Start at the gap centre of the first pipe; ``rng`` also drives all later pipes."""
        self.rng = rng
        y_l = draw_gap_bottom(rng)
        self.state = FlappyState(y_l + GAP_HEIGHT / 2, 0.0, PIPE_SPACING, y_l, y_l + GAP_HEIGHT)
        self.steps = 0
        self.total_reward = 0.0
        self.done = False
        return self.state.features()

    def restore(self, fs: FeatureState) -> None:
        self.state = FlappyState.from_features(fs)
        self.steps = 0
        self.total_reward = 0.0
        self.done = False

    def step(self, action: int) -> Transition:
        if self.done:
            raise TerminalStateError("step() called on a finished FlappyBird episode")
        tr, self.state = flappy_step(self.state, int(action), self.rng)
        self.steps += 1
        self.total_reward += tr.reward
        if not tr.terminal and (self.total_reward >= self.reward_cutoff or self.steps >= self.max_steps):
            tr = Transition(tr.state, tr.action, tr.reward, tr.next_state, True, False)
        self.done = tr.terminal
        return tr

    def observe(self) -> FeatureState:
        return self.state.features()

    def is_safe(self, fs: FeatureState) -> bool:
        return 0.0 < fs["y_bird"] < SCREEN_HEIGHT

    def clone(self) -> "FlappyBird":
        twin = copy.copy(self)
        twin.rng = copy.deepcopy(self.rng)
        return twin

    def unp_spec(self) -> UnpSpec:
        return self._spec
