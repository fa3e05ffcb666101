"""Unsafe/non-permissible (UNP) action sets and the post-posed shield built on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import ActionSource, ActionValue, Continuous, Discrete, Environment, FeatureState, Transition


@dataclass(frozen=True)
class DangerRule:
    """Inside the region ``state_predicate`` every action matching ``action_predicate`` is UNP."""

    name: str
    state_predicate: Callable[[FeatureState], bool]
    action_predicate: Callable[[ActionValue], bool]

    def matches(self, state: FeatureState, action: ActionValue) -> bool:
        return self.state_predicate(state) and self.action_predicate(action)


@dataclass(frozen=True)
class UnpSpec:
    rules: tuple[DangerRule, ...]

    def is_unp(self, state: FeatureState, action: ActionValue) -> bool:
        return any(rule.matches(state, action) for rule in self.rules)

    def matching_rules(self, state: FeatureState, action: ActionValue) -> list[str]:
        return [rule.name for rule in self.rules if rule.matches(state, action)]

    def in_danger(self, state: FeatureState) -> bool:
        return any(rule.state_predicate(state) for rule in self.rules)


def is_unp(spec: UnpSpec, state: FeatureState, action: ActionValue) -> bool:
    return spec.is_unp(state, action)


class BackupFailure(RuntimeError):
    """The backup policy proposed an action that is itself UNP."""


class OtherDiscrete:
    """Backup for two-action spaces: take the action the agent did not pick."""

    def __call__(self, state: FeatureState, action: ActionValue) -> int:
        return 1 - int(action)

    def __repr__(self):
        return "OtherDiscrete()"


class NegateContinuous:
    """Backup for a symmetric continuous range: same magnitude, opposite sign."""

    def __call__(self, state: FeatureState, action: ActionValue) -> float:
        return -float(action)

    def __repr__(self):
        return "NegateContinuous()"


BackupPolicy = Callable[[FeatureState, ActionValue], ActionValue]


@dataclass
class Shield:
    spec: UnpSpec
    backup: BackupPolicy
    interventions: int = 0
    queries: int = 0

    def act(self, policy: ActionSource, state: FeatureState, rng: np.random.Generator) -> tuple[ActionValue, bool]:
        return shield_act(self, policy, state, rng)

    def filter(self, state: FeatureState, proposed: ActionValue) -> tuple[ActionValue, bool]:
        """Shield decision for an already proposed action."""
        self.queries += 1
        if not self.spec.is_unp(state, proposed):
            return proposed, False
        replacement = self.backup(state, proposed)
        if self.spec.is_unp(state, replacement):
            raise BackupFailure(
                f"backup {self.backup!r} chose UNP action {replacement!r} in {state} "
                f"(rules {self.spec.matching_rules(state, replacement)})"
            )
        self.interventions += 1
        return replacement, True


def shield_act(
    shield: Shield, policy: ActionSource, state: FeatureState, rng: np.random.Generator
) -> tuple[ActionValue, bool]:
    """Ask ``policy`` for an action and swap it for the backup's choice if it is UNP."""
    return shield.filter(state, policy.act(state, rng))


def interference_rate(shield: Shield) -> float:
    if shield.queries == 0:
        raise ZeroDivisionError("shield has not been queried yet")
    return shield.interventions / shield.queries


@dataclass
class BackupCheck:
    states_checked: int
    unp_proposals: int
    failures: list[tuple[FeatureState, ActionValue, ActionValue]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def check_backup_safety(
    spec: UnpSpec,
    backup: BackupPolicy,
    states: Iterable[FeatureState],
    actions: Sequence[ActionValue],
) -> BackupCheck:
    """For every state and every UNP proposal, confirm the backup's replacement is not UNP."""
    n_states = n_unp = 0
    failures = []
    for state in states:
        n_states += 1
        for a in actions:
            if not spec.is_unp(state, a):
                continue
            n_unp += 1
            b = backup(state, a)
            if spec.is_unp(state, b):
                failures.append((state, a, b))
    return BackupCheck(n_states, n_unp, failures)


@dataclass
class Assumption1Report:
    reward_min: float
    transitions_checked: int = 0
    failures_seen: int = 0
    violations: list[tuple[str, Transition]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations and self.failures_seen > 0

    @property
    def kinds(self) -> set[str]:
        return {kind for kind, _ in self.violations}

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        text = (
            f"{status}: {self.transitions_checked} transitions, {self.failures_seen} failures, "
            f"r_min={self.reward_min:g}"
        )
        if self.failures_seen == 0:
            text += "; no failure transition observed"
        for kind in sorted(self.kinds):
            count = sum(1 for k, _ in self.violations if k == kind)
            text += f"; {kind} x{count}"
        return text


def _probe_actions(space) -> list[ActionValue]:
    if isinstance(space, Discrete):
        return list(range(space.count))
    assert isinstance(space, Continuous)
    return [float(a) for a in np.linspace(space.low, space.high, 9)]


def check_transition(tr: Transition, reward_min: float) -> str | None:
    if tr.failure and tr.reward != reward_min:
        return "failure reward != r_min"
    if tr.failure and not tr.terminal:
        return "failure not terminal"
    if not tr.failure and tr.reward <= reward_min:
        return "non-failure reward <= r_min"
    return None


def validate_assumption1(
    env: Environment,
    probe_states: Sequence[FeatureState],
    rng: np.random.Generator | None = None,
    rollouts: int = 20,
) -> Assumption1Report:
    """Check the reward premise behind treating unsafe actions as failures.

    Every action is tried once from each probe state (continuous ranges on a
    9-point grid); ``rollouts`` random episodes from reset add naturally
    reached failures. Failures must pay exactly ``env.reward_min`` and end the
    episode; everything else must pay strictly more.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    report = Assumption1Report(env.reward_min)

    def record(tr: Transition) -> None:
        report.transitions_checked += 1
        report.failures_seen += tr.failure
        kind = check_transition(tr, env.reward_min)
        if kind is not None:
            report.violations.append((kind, tr))

    actions = _probe_actions(env.action_space)
    for state in probe_states:
        for a in actions:
            probe = env.clone()
            probe.restore(state)
            record(probe.step(a))
    for _ in range(rollouts):
        probe = env.clone()
        probe.reset(rng)
        for _ in range(probe.max_steps):
            tr = probe.step(probe.action_space.sample(rng))
            record(tr)
            if tr.terminal:
                break
    return report
