"""Steering-only lane keeping on a kinematic vehicle model.

The car drives at constant speed along a track whose curvature cycles
through straight, left, straight, right segments. The agent steers; the
heading error ``psi`` and the lateral offset ``d`` (left positive) evolve as

    psi <- psi + (a * STEER_GAIN - kappa * SPEED) * DT
    d   <- d + SPEED * sin(psi) * DT

and ``delta = d / HALF_WIDTH`` leaves the road at ``|delta| >= 1``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from ..core import Continuous, FeatureState, TerminalStateError, Transition
from ..shield import DangerRule, NegateContinuous, UnpSpec

SPEED = 20.0
HALF_WIDTH = 4.0
STEER_GAIN = 0.5
DT = 0.05
SEGMENT_STEPS = 250
CURVATURES = (0.0, 0.01, 0.0, -0.01)
MAX_STEPS = 5000
OFFROAD_REWARD = -200.0
DANGER_OFFSET = 0.5

FEATURES = ("psi", "delta", "kappa", "v")
SEGMENT_LENGTH = SEGMENT_STEPS * SPEED * DT


def curvature_at(track_pos: float) -> float:
    return CURVATURES[int(math.floor(track_pos / SEGMENT_LENGTH + 1e-9)) % len(CURVATURES)]


@dataclass(frozen=True)
class LaneKeepState:
    psi: float
    delta: float
    v: float = SPEED
    track_pos: float = 0.0

    def features(self) -> FeatureState:
        return FeatureState((self.psi, self.delta, curvature_at(self.track_pos), self.v), FEATURES)


def is_offroad(delta: float) -> bool:
    return abs(delta) >= 1.0


def lanekeep_step(
    state: LaneKeepState, action: float, steps_done: int = 0, max_steps: int = MAX_STEPS
) -> tuple[Transition, LaneKeepState]:
    """Advance one control period; returns the transition and the full next state."""
    if not -1.0 <= action <= 1.0:
        raise ValueError(f"steering must lie in [-1, 1], got {action!r}")
    if is_offroad(state.delta) or steps_done >= max_steps:
        raise TerminalStateError("lane-keeping episode already over")
    kappa = curvature_at(state.track_pos)
    psi = state.psi + (action * STEER_GAIN - kappa * state.v) * DT
    d = state.delta * HALF_WIDTH + state.v * math.sin(psi) * DT
    nxt = LaneKeepState(psi, d / HALF_WIDTH, state.v, state.track_pos + state.v * DT)
    failure = is_offroad(nxt.delta)
    tr = Transition(
        state=state.features(),
        action=float(action),
        reward=OFFROAD_REWARD if failure else 0.0,
        next_state=nxt.features(),
        terminal=failure or steps_done + 1 >= max_steps,
        failure=failure,
    )
    return tr, nxt


def lanekeep_unp() -> UnpSpec:
    return UnpSpec(
        (
            DangerRule("steer right near the right edge", lambda s: s["delta"] < -DANGER_OFFSET, lambda a: a < 0.0),
            DangerRule("steer left near the left edge", lambda s: s["delta"] > DANGER_OFFSET, lambda a: a > 0.0),
        )
    )


def danger_grid() -> list[FeatureState]:
    """40 headings x 100 offsets x 3 curvatures = 12000 on-road states."""
    return [
        FeatureState((psi, delta, kappa, SPEED), FEATURES)
        for psi in np.linspace(-0.6, 0.6, 40)
        for delta in np.linspace(-0.995, 0.995, 100)
        for kappa in sorted(set(CURVATURES))
    ]


class LaneKeep:
    name = "lanekeep"
    action_space = Continuous(-1.0, 1.0)
    feature_names = FEATURES
    reward_min = OFFROAD_REWARD
    converged_reward = 0.0
    feature_scale = (1.0, 1.0, 0.01, SPEED)

    def __init__(self, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self.state = LaneKeepState(0.0, 0.0)
        self.steps = 0
        self.done = False
        self._spec = lanekeep_unp()
        self.backup = NegateContinuous()

    def reset(self, rng: np.random.Generator) -> FeatureState:
        self.state = LaneKeepState(0.0, float(rng.uniform(-0.1, 0.1)))
        self.steps = 0
        self.done = False
        return self.state.features()

    def restore(self, fs: FeatureState) -> None:
        """Place the car at the start of the first segment with the requested curvature."""
        segment = CURVATURES.index(fs["kappa"])
        self.steps = segment * SEGMENT_STEPS
        self.state = LaneKeepState(fs["psi"], fs["delta"], fs["v"], self.steps * fs["v"] * DT)
        self.done = False

    def step(self, action: float) -> Transition:
        if self.done:
            raise TerminalStateError("step() called on a finished lane-keeping episode")
        tr, self.state = lanekeep_step(self.state, float(action), self.steps, self.max_steps)
        self.steps += 1
        self.done = tr.terminal
        return tr

    def observe(self) -> FeatureState:
        return self.state.features()

    def is_safe(self, fs: FeatureState) -> bool:
        return not is_offroad(fs["delta"])

    def clone(self) -> "LaneKeep":
        return copy.copy(self)

    def unp_spec(self) -> UnpSpec:
        return self._spec
