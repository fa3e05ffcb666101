"""DDQN and DDPG learners on top of :mod:`unpshield.nn`."""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from .core import ActionValue, FeatureState, Transition
from .nn import GradientSet, Mlp, forward, make_optimizer, soft_update


class InsufficientData(RuntimeError):
    """Training was requested before the replay buffer finished warming up."""


@dataclass(frozen=True)
class Hyperparameters:
    critic_lr: float
    target_rate: float
    gamma: float
    exploration_steps: int
    exploration_factor: float
    batch_size: int
    buffer_capacity: int
    actor_lr: float | None = None
    exploration_floor: float = 0.01
    optimizer: str = "adam"
    decay_per: str = "episode"  # or "step"
    bootstrap_truncated: bool = True  # time-limit ends are not treated as absorbing

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                raise ValueError(f"hyperparameter {f.name} must be positive, got {v}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.decay_per not in ("episode", "step"):
            raise ValueError(f"decay_per must be 'episode' or 'step', got {self.decay_per!r}")
        if self.gamma > 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.exploration_factor > 1.0 or self.exploration_floor > 1.0:
            raise ValueError("exploration factor and floor must lie in (0, 1]")

    def with_overrides(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)


# Per-environment settings used for every reported experiment.
PRESETS = {
    "cartpole": Hyperparameters(
        critic_lr=0.0005, target_rate=0.001, gamma=0.99, exploration_steps=2000,
        exploration_factor=0.995, batch_size=128, buffer_capacity=50000,
    ),
    "lanekeep": Hyperparameters(
        critic_lr=0.0005, actor_lr=0.0003, target_rate=0.001, gamma=0.99, exploration_steps=2000,
        exploration_factor=0.999, batch_size=128, buffer_capacity=100000, decay_per="step",
    ),
    # The reference rate of 5e-6 was set for a pixel CNN; the feature-state
    # MLP used here does not learn at it and takes the CartPole rate instead.
    "flappybird": Hyperparameters(
        critic_lr=0.0005, target_rate=0.001, gamma=0.99, exploration_steps=30000,
        exploration_factor=0.99985, batch_size=128, buffer_capacity=50000, decay_per="step",
    ),
}


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions kept as flat arrays for fast batch sampling."""

    def __init__(self, capacity: int, state_dim: int, discrete: bool = True):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64 if discrete else np.float64)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state: np.ndarray, action: ActionValue, reward: float, next_state: np.ndarray, terminal: bool) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = float(terminal)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self._next if self._size == self.capacity else 0

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self._size, size=batch_size)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
        )


def _absorbing(tr: Transition, hp: Hyperparameters) -> bool:
    return tr.failure if hp.bootstrap_truncated else tr.terminal


def _store(agent, tr: Transition) -> None:
    agent.buffer.add(agent.inputs(tr.state), tr.action, tr.reward, agent.inputs(tr.next_state), _absorbing(tr, agent.hp))
    agent.step_count += 1


def _end_episode(agent) -> None:
    if agent.hp.decay_per == "episode" and not agent.warming_up:
        decay_exploration(agent)


def _scale_for(n_features: int, feature_scale: Sequence[float] | None) -> np.ndarray:
    if feature_scale is None:
        return np.ones(n_features)
    scale = np.asarray(feature_scale, dtype=np.float64)
    if scale.shape != (n_features,) or np.any(scale <= 0):
        raise ValueError("feature_scale must hold one positive entry per feature")
    return scale


# --------------------------------------------------------------------------
# DDQN
# --------------------------------------------------------------------------


class DdqnAgent:
    def __init__(
        self,
        n_features: int,
        n_actions: int,
        hidden: Sequence[int],
        hp: Hyperparameters,
        rng: np.random.Generator,
        feature_scale: Sequence[float] | None = None,
    ):
        spec = [(w, "relu") for w in hidden] + [(n_actions, "identity")]
        self.online = Mlp.create(n_features, spec, rng)
        self.target = self.online.copy()
        self.hp = hp
        self.n_actions = n_actions
        self.epsilon = 1.0
        self.buffer = ReplayBuffer(hp.buffer_capacity, n_features, discrete=True)
        self.step_count = 0
        self.scale = _scale_for(n_features, feature_scale)
        self.optimizer = make_optimizer(hp.optimizer, self.online, hp.critic_lr)
        self.last_loss: float | None = None

    @property
    def warming_up(self) -> bool:
        return self.step_count < max(self.hp.exploration_steps, self.hp.batch_size)

    def inputs(self, state: FeatureState) -> np.ndarray:
        return state.as_array() / self.scale

    def q_values(self, state: FeatureState) -> np.ndarray:
        return forward(self.online, self.inputs(state))

    def act(self, state: FeatureState, rng: np.random.Generator) -> int:
        return ddqn_select(self, state, rng)

    def greedy(self, state: FeatureState) -> int:
        return int(np.argmax(self.q_values(state)))

    def observe(self, tr: Transition, rng: np.random.Generator) -> None:
        """Store ``tr``, then train (and maybe decay exploration) once warm-up is over."""
        _store(self, tr)
        if not self.warming_up:
            self.last_loss = ddqn_train_step(self, rng)
            if self.hp.decay_per == "step":
                decay_exploration(self)

    def end_episode(self) -> None:
        _end_episode(self)

    def networks(self) -> dict[str, Mlp]:
        return {"online": self.online, "target": self.target}


def ddqn_select(agent: DdqnAgent, state: FeatureState, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the online net; pure random during warm-up; ties go to the lowest index."""
    if agent.warming_up or rng.random() < agent.epsilon:
        return int(rng.integers(agent.n_actions))
    return agent.greedy(state)


def ddqn_target(
    tr: Transition,
    online: Mlp,
    target: Mlp,
    gamma: float,
    scale: np.ndarray | None = None,
    bootstrap_truncated: bool = False,
) -> float:
    """Double-DQN regression target for one transition.

    With ``bootstrap_truncated`` only failures stop the bootstrap; a terminal
    caused by a step or reward cap still adds the discounted next-state value.
    """
    if tr.failure or (tr.terminal and not bootstrap_truncated):
        return tr.reward
    s2 = tr.next_state.as_array()
    if scale is not None:
        s2 = s2 / scale
    best = int(np.argmax(forward(online, s2)))
    return tr.reward + gamma * float(forward(target, s2)[best])


def ddqn_targets(
    rewards: np.ndarray, next_states: np.ndarray, terminals: np.ndarray, online: Mlp, target: Mlp, gamma: float
) -> np.ndarray:
    """Batched form of :func:`ddqn_target`; inputs are already scaled."""
    best = np.argmax(forward(online, next_states), axis=1)
    q_next = forward(target, next_states)[np.arange(len(best)), best]
    return rewards + gamma * (1.0 - terminals) * q_next


def ddqn_train_step(agent: DdqnAgent, rng: np.random.Generator) -> float:
    """One optimiser step on the mean squared TD error, then a soft target update.

    Returns the loss measured before the update.
    """
    hp = agent.hp
    if len(agent.buffer) < max(hp.batch_size, hp.exploration_steps):
        raise InsufficientData(f"buffer holds {len(agent.buffer)} transitions")
    s, a, r, s2, term = agent.buffer.sample(hp.batch_size, rng)
    y = ddqn_targets(r, s2, term, agent.online, agent.target, hp.gamma)
    q, cache = agent.online.forward_train(s)
    rows = np.arange(len(a))
    err = q[rows, a] - y
    grad_out = np.zeros_like(q)
    grad_out[rows, a] = 2.0 * err / len(a)
    grads, _ = agent.online.backward_cached(cache, grad_out)
    agent.optimizer.step(grads)
    soft_update(agent.target, agent.online, hp.target_rate)
    return float(np.mean(err * err))


def decay_exploration(agent) -> None:
    """Multiply epsilon (DDQN) or the noise scale (DDPG) by the exploration factor, floored."""
    hp = agent.hp
    attr = "epsilon" if hasattr(agent, "epsilon") else "noise_scale"
    setattr(agent, attr, max(hp.exploration_floor, getattr(agent, attr) * hp.exploration_factor))


# --------------------------------------------------------------------------
# DDPG
# --------------------------------------------------------------------------


class BranchCritic:
    """Q(s, a): separate state and action branches, concatenated into a shared head.

    Inputs are ``concat(state, action)`` rows so the critic can be probed like
    any other vector function.
    """

    def __init__(self, state_net: Mlp, action_net: Mlp, head: Mlp):
        if head.input_dim != state_net.output_dim + action_net.output_dim:
            raise ValueError("head input must equal the two branch widths")
        self.state_net = state_net
        self.action_net = action_net
        self.head = head

    @classmethod
    def create(
        cls,
        n_features: int,
        n_actions: int,
        rng: np.random.Generator,
        state_hidden: Sequence[int] = (128, 256),
        action_hidden: Sequence[int] = (256,),
        head_hidden: Sequence[int] = (256,),
    ) -> "BranchCritic":
        state_net = Mlp.create(n_features, [(w, "relu") for w in state_hidden], rng)
        action_net = Mlp.create(n_actions, [(w, "relu") for w in action_hidden], rng)
        head = Mlp.create(
            state_hidden[-1] + action_hidden[-1], [(w, "relu") for w in head_hidden] + [(1, "identity")], rng
        )
        return cls(state_net, action_net, head)

    @property
    def nets(self) -> tuple[Mlp, Mlp, Mlp]:
        return (self.state_net, self.action_net, self.head)

    @property
    def input_dim(self) -> int:
        return self.state_net.input_dim + self.action_net.input_dim

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets for p in net.params()]

    def copy(self) -> "BranchCritic":
        return copy.deepcopy(self)

    def _split(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        k = self.state_net.input_dim
        return x[..., :k], x[..., k:]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_train(x)[0]

    def forward_train(self, x: np.ndarray):
        s, a = self._split(x)
        hs, cs = self.state_net.forward_train(s)
        ha, ca = self.action_net.forward_train(a)
        out, ch = self.head.forward_train(np.concatenate([hs, ha], axis=-1))
        return out, (cs, ca, ch, hs.shape[-1])

    def backward_cached(self, cache, output_grad: np.ndarray) -> tuple[GradientSet, np.ndarray]:
        cs, ca, ch, k = cache
        gh, dcat = self.head.backward_cached(ch, output_grad)
        gs, ds = self.state_net.backward_cached(cs, dcat[..., :k])
        ga, da = self.action_net.backward_cached(ca, dcat[..., k:])
        return GradientSet(gs.arrays + ga.arrays + gh.arrays), np.concatenate([ds, da], axis=-1)

    def action_gradient(self, cache, output_grad: np.ndarray) -> np.ndarray:
        """dQ/da only: skips parameter gradients and the state branch."""
        _, ca, ch, k = cache
        _, dcat = self.head.backward_cached(ch, output_grad, param_grads=False)
        _, da = self.action_net.backward_cached(ca, dcat[..., k:], param_grads=False)
        return da

    def relu_preactivations(self, x: np.ndarray) -> list[np.ndarray]:
        _, (cs, ca, ch, _) = self.forward_train(x)
        out = []
        for net, cache in ((self.state_net, cs), (self.action_net, ca), (self.head, ch)):
            out += [z for layer, (_, z, _) in zip(net.layers, cache) if layer.activation == "relu"]
        return out

    def networks(self, prefix: str) -> dict[str, Mlp]:
        return {f"{prefix}.state": self.state_net, f"{prefix}.action": self.action_net, f"{prefix}.head": self.head}


class DdpgAgent:
    def __init__(
        self,
        n_features: int,
        hp: Hyperparameters,
        rng: np.random.Generator,
        actor_hidden: Sequence[int] = (128, 256),
        feature_scale: Sequence[float] | None = None,
        critic: BranchCritic | None = None,
    ):
        if hp.actor_lr is None:
            raise ValueError("DDPG needs an actor learning rate")
        self.actor = Mlp.create(n_features, [(w, "relu") for w in actor_hidden] + [(1, "tanh")], rng)
        self.critic = critic if critic is not None else BranchCritic.create(n_features, 1, rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.hp = hp
        self.noise_scale = 1.0
        self.buffer = ReplayBuffer(hp.buffer_capacity, n_features, discrete=False)
        self.step_count = 0
        self.scale = _scale_for(n_features, feature_scale)
        self.actor_optimizer = make_optimizer(hp.optimizer, self.actor, hp.actor_lr)
        self.critic_optimizer = make_optimizer(hp.optimizer, self.critic, hp.critic_lr)
        self.last_loss: tuple[float, float] | None = None

    @property
    def warming_up(self) -> bool:
        return self.step_count < max(self.hp.exploration_steps, self.hp.batch_size)

    def inputs(self, state: FeatureState) -> np.ndarray:
        return state.as_array() / self.scale

    def policy(self, state: FeatureState) -> float:
        return float(forward(self.actor, self.inputs(state))[0])

    def greedy(self, state: FeatureState) -> float:
        return self.policy(state)

    def act(self, state: FeatureState, rng: np.random.Generator) -> float:
        return ddpg_select(self, state, rng)

    def observe(self, tr: Transition, rng: np.random.Generator) -> None:
        _store(self, tr)
        if not self.warming_up:
            self.last_loss = ddpg_train_step(self, rng)
            if self.hp.decay_per == "step":
                decay_exploration(self)

    def end_episode(self) -> None:
        _end_episode(self)

    def networks(self) -> dict[str, Mlp]:
        nets = {"actor": self.actor, "target_actor": self.target_actor}
        nets.update(self.critic.networks("critic"))
        nets.update(self.target_critic.networks("target_critic"))
        return nets


def ddpg_select(agent: DdpgAgent, state: FeatureState, rng: np.random.Generator) -> float:
    """Actor output plus scaled Gaussian noise, clipped to [-1, 1]; uniform during warm-up."""
    if agent.warming_up:
        return float(rng.uniform(-1.0, 1.0))
    a = agent.policy(state)
    if agent.noise_scale == 0.0:
        return float(np.clip(a, -1.0, 1.0))
    return perturb(a, agent.noise_scale, float(rng.standard_normal()))


def perturb(action: float, noise_scale: float, z: float) -> float:
    """``action + noise_scale * z`` clipped to the steering range."""
    return float(np.clip(action + noise_scale * z, -1.0, 1.0))


def ddpg_targets(agent: DdpgAgent, r: np.ndarray, s2: np.ndarray, term: np.ndarray) -> np.ndarray:
    """``r + gamma * Q'(s2, actor'(s2))`` with the bootstrap cut on absorbing rows."""
    a2 = forward(agent.target_actor, s2)
    q2 = forward(agent.target_critic, np.concatenate([s2, a2], axis=1))[:, 0]
    return r + agent.hp.gamma * (1.0 - term) * q2


def ddpg_critic_update(agent: DdpgAgent, s, a, r, s2, term) -> float:
    y = ddpg_targets(agent, r, s2, term)
    q, cache = agent.critic.forward_train(np.concatenate([s, a.reshape(-1, 1)], axis=1))
    err = q[:, 0] - y
    grads, _ = agent.critic.backward_cached(cache, (2.0 * err / len(err)).reshape(-1, 1))
    agent.critic_optimizer.step(grads)
    return float(np.mean(err * err))


def ddpg_actor_update(agent: DdpgAgent, s: np.ndarray) -> float:
    """Gradient ascent on mean Q(s, actor(s)); returns the objective before the step."""
    pi, acache = agent.actor.forward_train(s)
    q, ccache = agent.critic.forward_train(np.concatenate([s, pi], axis=1))
    dq_da = agent.critic.action_gradient(ccache, np.full_like(q, 1.0 / len(q)))
    grads, _ = agent.actor.backward_cached(acache, -dq_da)
    agent.actor_optimizer.step(grads)
    return float(np.mean(q))


def ddpg_train_step(agent: DdpgAgent, rng: np.random.Generator) -> tuple[float, float]:
    hp = agent.hp
    if len(agent.buffer) < max(hp.batch_size, hp.exploration_steps):
        raise InsufficientData(f"buffer holds {len(agent.buffer)} transitions")
    s, a, r, s2, term = agent.buffer.sample(hp.batch_size, rng)
    critic_loss = ddpg_critic_update(agent, s, a, r, s2, term)
    objective = ddpg_actor_update(agent, s)
    soft_update(agent.target_critic, agent.critic, hp.target_rate)
    soft_update(agent.target_actor, agent.actor, hp.target_rate)
    return critic_loss, objective
