"""Model-based shielding baseline: depth-limited lookahead on a cloned model.

An action is rejected only when every simulated continuation leaves the
safe-state set within ``depth`` further steps. Continuations are exhaustive
over discrete actions and ``branch`` uniform samples per node otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ActionSource, ActionValue, Continuous, Discrete, Environment, FeatureState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MbsConfig:
    safe_state_predicate: Callable[[FeatureState], bool]
    depth: int = 3
    branch: int = 5

    def __post_init__(self):
        if self.depth < 1 or self.branch < 1:
            raise ValueError("depth and branch must both be >= 1")


def default_config(env: Environment, depth: int = 3, branch: int = 5) -> MbsConfig:
    """Safe set = the environment's own bounds (pole/cart limits, road edges, screen)."""
    return MbsConfig(env.is_safe, depth, branch)


def _candidates(space, branch: int, rng: np.random.Generator) -> list[ActionValue]:
    if isinstance(space, Discrete):
        return list(range(space.count))
    assert isinstance(space, Continuous)
    return [float(a) for a in rng.uniform(space.low, space.high, size=branch)]


def _prepare(model: Environment, state: FeatureState) -> Environment:
    sim = model.clone()
    if sim.observe() != state:
        sim.restore(state)
    return sim


def _safe_continuation_exists(sim: Environment, depth: int, cfg: MbsConfig, rng: np.random.Generator) -> bool:
    if depth == 0:
        return True
    for a in _candidates(sim.action_space, cfg.branch, rng):
        child = sim.clone()
        tr = child.step(a)
        if not cfg.safe_state_predicate(tr.next_state):
            continue
        if tr.terminal or _safe_continuation_exists(child, depth - 1, cfg, rng):
            return True
    return False


def mbs_filter(
    model: Environment,
    state: FeatureState,
    action: ActionValue,
    cfg: MbsConfig,
    rng: np.random.Generator | None = None,
) -> bool:
    """True if some simulated trajectory starting with ``action`` stays safe.

    ``model`` is cloned, never stepped. A trajectory that ends in a terminal
    state while still inside the safe set counts as safe.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sim = _prepare(model, state)
    tr = sim.step(action)
    if not cfg.safe_state_predicate(tr.next_state):
        return False
    if tr.terminal:
        return True
    return _safe_continuation_exists(sim, cfg.depth, cfg, rng)


@dataclass
class MbsDecision:
    state: FeatureState
    proposed: ActionValue
    executed: ActionValue
    intervened: bool
    accepted: bool  # whether mbs_filter accepted the executed action


def mbs_shield_act(
    policy: ActionSource,
    state: FeatureState,
    model: Environment,
    cfg: MbsConfig,
    rng: np.random.Generator,
) -> tuple[ActionValue, bool]:
    action, intervened, _ = _mbs_decide(policy.act(state, rng), state, model, cfg, rng)
    return action, intervened


def _mbs_decide(proposed, state, model, cfg, rng) -> tuple[ActionValue, bool, bool]:
    if mbs_filter(model, state, proposed, cfg, rng):
        return proposed, False, True
    space = model.action_space
    if isinstance(space, Discrete):
        alternatives = [a for a in range(space.count) if a != proposed]
    else:
        alternatives = [-proposed] + [float(a) for a in rng.uniform(space.low, space.high, size=cfg.branch)]
    for alt in alternatives:
        if mbs_filter(model, state, alt, cfg, rng):
            return alt, True, True
    log.debug("no-safe-option in %s; executing proposed action %r", state, proposed)
    return proposed, False, False


@dataclass
class MbsShield:
    """Post-posed MBS wrapper bound to the live environment it simulates."""

    env: Environment
    cfg: MbsConfig
    record: bool = False
    interventions: int = 0
    queries: int = 0
    no_safe_option: int = 0
    decisions: list[MbsDecision] = field(default_factory=list)

    def act(self, policy: ActionSource, state: FeatureState, rng: np.random.Generator) -> tuple[ActionValue, bool]:
        proposed = policy.act(state, rng)
        action, intervened, accepted = _mbs_decide(proposed, state, self.env, self.cfg, rng)
        self.queries += 1
        self.interventions += intervened
        self.no_safe_option += not accepted
        if self.record:
            self.decisions.append(MbsDecision(state, proposed, action, intervened, accepted))
        return action, intervened
