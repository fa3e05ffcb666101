"""MDP building blocks and the episode loop shared by every environment and agent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Protocol, Sequence, Union

import numpy as np

if TYPE_CHECKING:
    from .shield import UnpSpec


class FeatureState:
    """A named, finite feature vector describing one environment state."""

    __slots__ = ("values", "names")

    def __init__(self, values: Sequence[float], names: Sequence[str]):
        values = tuple(float(v) for v in values)
        names = tuple(names)
        if len(values) != len(names) or not values:
            raise ValueError(f"need matching, non-empty values/names, got {len(values)} and {len(names)}")
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite feature value in {values}")
        self.values = values
        self.names = names

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FeatureState) and self.values == other.values and self.names == other.names

    def __hash__(self) -> int:
        return hash((self.values, self.names))

    def __repr__(self) -> str:
        body = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.names, self.values))
        return f"FeatureState({body})"

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class Discrete:
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("a discrete action space needs at least 2 actions")

    def contains(self, action) -> bool:
        return isinstance(action, (int, np.integer)) and 0 <= action < self.count

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.count))


@dataclass(frozen=True)
class Continuous:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"empty continuous range [{self.low}, {self.high}]")

    def contains(self, action) -> bool:
        return isinstance(action, (float, np.floating)) and self.low <= action <= self.high

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low, self.high))


ActionSpace = Union[Discrete, Continuous]
# Discrete actions are plain ints, continuous ones plain floats.
ActionValue = Union[int, float]


@dataclass(frozen=True)
class Transition:
    state: FeatureState
    action: ActionValue
    reward: float
    next_state: FeatureState
    terminal: bool
    failure: bool = False

    def __post_init__(self):
        if self.failure and not self.terminal:
            raise ValueError("a failure transition must be terminal")


@dataclass
class EpisodeLog:
    transitions: list[Transition] = field(default_factory=list)
    interventions: list[bool] = field(default_factory=list)
    unsafe_executed: list[bool] = field(default_factory=list)
    episode_reward: float = 0.0

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def failed(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].failure


class ActionSource(Protocol):
    """Anything that maps a state to an action: agents, constant or random policies."""

    def act(self, state: FeatureState, rng: np.random.Generator) -> ActionValue: ...


class Environment(Protocol):
    name: str
    action_space: ActionSpace
    feature_names: tuple[str, ...]
    reward_min: float
    max_steps: int

    def reset(self, rng: np.random.Generator) -> FeatureState: ...

    def step(self, action: ActionValue) -> Transition: ...

    def observe(self) -> FeatureState: ...

    def clone(self) -> "Environment": ...

    def restore(self, state: FeatureState) -> None: ...

    def unp_spec(self) -> "UnpSpec": ...


class TerminalStateError(RuntimeError):
    """Raised when an environment is stepped after termination."""


@dataclass
class ConstantPolicy:
    action: ActionValue

    def act(self, state, rng):
        return self.action


@dataclass
class RandomPolicy:
    space: ActionSpace

    def act(self, state, rng):
        return self.space.sample(rng)


class ShieldLike(Protocol):
    def act(self, policy: ActionSource, state: FeatureState, rng: np.random.Generator) -> tuple[ActionValue, bool]: ...


def run_episode(
    env: Environment,
    actor: ActionSource,
    shield: ShieldLike | None,
    max_steps: int,
    rng: np.random.Generator,
    on_step: Callable[[Transition], None] | None = None,
    env_rng: np.random.Generator | None = None,
) -> EpisodeLog:
    """Reset ``env`` and play one episode of at most ``max_steps`` steps.

    Every executed action is audited against the environment's UNP set, with
    or without a shield installed. ``on_step`` sees each transition right
    after it happens (agents use it to store experience and train).
    ``env_rng``, when given, seeds the reset instead of ``rng`` so that the
    environment and the action choices draw from separate streams.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    spec = env.unp_spec()
    state = env.reset(env_rng if env_rng is not None else rng)
    log = EpisodeLog()
    for _ in range(max_steps):
        if shield is None:
            action, intervened = actor.act(state, rng), False
        else:
            action, intervened = shield.act(actor, state, rng)
        unsafe = spec.is_unp(state, action)
        tr = env.step(action)
        log.transitions.append(tr)
        log.interventions.append(intervened)
        log.unsafe_executed.append(unsafe)
        log.episode_reward += tr.reward
        if on_step is not None:
            on_step(tr)
        if tr.terminal:
            break
        state = tr.next_state
    return log


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if len(rewards) == 0:
        raise ValueError("rewards must be non-empty")
    total = 0.0
    for r in reversed(rewards):
        total = r + gamma * total
    return total
