"""Seeded training runs, aggregation and convergence bookkeeping.

Seed splitting: every run seed feeds ``numpy.random.SeedSequence(seed)``,
whose first five children drive, in order, network initialisation, the
environment (initial states, pipe gaps), action selection (epsilon draws,
actor noise, MBS sampling), replay-batch sampling, and the final greedy
test trace. Nothing else draws random numbers, so a seed replays exactly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..agents import DdpgAgent, DdqnAgent, Hyperparameters
from ..core import Discrete, EpisodeLog, Environment, FeatureState, run_episode
from ..envs import make_env
from ..mbs import MbsDecision, MbsShield, default_config
from ..nn import Mlp
from ..shield import Shield
from .config import ExperimentConfig

log = logging.getLogger(__name__)

STREAMS = ("init", "env", "explore", "replay", "trace")

# Hidden widths of the DDQN Q-networks.
DDQN_HIDDEN = {"cartpole": (16, 32), "flappybird": (64, 64)}


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def make_agent(env: Environment, hp: Hyperparameters, rng: np.random.Generator):
    scale = getattr(env, "feature_scale", None)
    n = len(env.feature_names)
    if isinstance(env.action_space, Discrete):
        return DdqnAgent(n, env.action_space.count, DDQN_HIDDEN[env.name], hp, rng, feature_scale=scale)
    return DdpgAgent(n, hp, rng, feature_scale=scale)


def make_shield(mode: str, env: Environment, cfg: ExperimentConfig | None = None):
    if mode == "none":
        return None
    if mode == "unp":
        return Shield(env.unp_spec(), env.backup)
    if mode == "mbs":
        depth = cfg.mbs_depth if cfg else 3
        branch = cfg.mbs_branch if cfg else 5
        return MbsShield(env, default_config(env, depth, branch), record=bool(cfg and cfg.record_mbs))
    raise ValueError(f"unknown shield mode {mode!r}")


class GreedyPolicy:
    """Exploration-free view of a trained agent (or a bare network)."""

    def __init__(self, net: Mlp, scale, discrete: bool):
        self.net = net
        self.scale = np.asarray(scale, dtype=np.float64)
        self.discrete = discrete

    @classmethod
    def of(cls, agent) -> "GreedyPolicy":
        if isinstance(agent, DdqnAgent):
            return cls(agent.online, agent.scale, True)
        return cls(agent.actor, agent.scale, False)

    def act(self, state: FeatureState, rng=None):
        out = self.net(state.as_array() / self.scale)
        if self.discrete:
            return int(np.argmax(out))
        return float(np.clip(out[0], -1.0, 1.0))


@dataclass
class RunResult:
    seed: int
    episode_rewards: list[float] = field(default_factory=list)
    unsafe_action_counts: list[int] = field(default_factory=list)
    intervention_counts: list[int] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    converged_at: int | None = None
    trace: EpisodeLog | None = None
    networks: dict[str, Mlp] = field(default_factory=dict)
    mbs_decisions: list[tuple[int, int, MbsDecision]] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.episode_rewards)


@dataclass
class AggregateCurve:
    mean: np.ndarray
    std: np.ndarray

    def __len__(self) -> int:
        return len(self.mean)


def convergence_episode(rewards, threshold: float, window: int = 10) -> int | None:
    """First 1-based episode whose trailing ``window``-episode mean reaches ``threshold``."""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < window:
        return None
    trailing = np.convolve(r, np.ones(window) / window, mode="valid")
    # Guard against summation round-off right at the threshold.
    hits = np.nonzero(trailing >= threshold - 1e-9 * max(1.0, abs(threshold)))[0]
    return int(hits[0]) + window if len(hits) else None


def _env_for(cfg: ExperimentConfig) -> Environment:
    kwargs = {"max_steps": cfg.episode_steps} if cfg.episode_steps else {}
    return make_env(cfg.env, **kwargs)


def train_run(cfg: ExperimentConfig, seed: int) -> RunResult:
    rngs = seed_streams(seed)
    env = _env_for(cfg)
    agent = make_agent(env, cfg.hyperparameters, rngs["init"])
    shield = make_shield(cfg.shield_mode, env, cfg)
    threshold = env.converged_reward
    result = RunResult(seed)
    start = time.perf_counter()

    def learn(tr):
        agent.observe(tr, rngs["replay"])

    for episode in range(1, cfg.max_episodes + 1):
        mark = len(shield.decisions) if isinstance(shield, MbsShield) else 0
        ep = run_episode(env, agent, shield, env.max_steps, rngs["explore"], on_step=learn, env_rng=rngs["env"])
        agent.end_episode()
        result.episode_rewards.append(ep.episode_reward)
        result.unsafe_action_counts.append(sum(ep.unsafe_executed))
        result.intervention_counts.append(sum(ep.interventions))
        result.episode_lengths.append(len(ep))
        if isinstance(shield, MbsShield) and shield.record:
            result.mbs_decisions.extend((episode, i, d) for i, d in enumerate(shield.decisions[mark:]))
        if result.converged_at is None:
            result.converged_at = convergence_episode(result.episode_rewards, threshold, cfg.convergence_window)
            if result.converged_at is not None:
                log.info("%s/%s seed %d converged at episode %d", cfg.env, cfg.shield_mode, seed, episode)
                if cfg.stop_on_convergence:
                    break
        if episode % 50 == 0:
            log.info(
                "%s/%s seed %d episode %d mean(last 50)=%.2f",
                cfg.env, cfg.shield_mode, seed, episode, np.mean(result.episode_rewards[-50:]),
            )
    result.wall_time = time.perf_counter() - start
    result.networks = agent.networks()
    result.trace = test_trace(env, GreedyPolicy.of(agent), cfg.shield_mode, rngs["trace"], cfg)
    return result


def test_trace(env: Environment, policy, mode: str, rng: np.random.Generator, cfg=None) -> EpisodeLog:
    """One exploration-free episode with the same kind of shield used in training."""
    shield = make_shield(mode, env, cfg)
    if isinstance(shield, MbsShield):
        shield.record = False
    return run_episode(env, policy, shield, env.max_steps, rng)


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    return [train_run(cfg, seed) for seed in cfg.seeds]


def aggregate(results: list[RunResult]) -> AggregateCurve:
    """Per-episode mean and population std across runs, truncated to the shortest run."""
    if not results:
        raise ValueError("cannot aggregate an empty set of runs")
    n = min(r.episodes for r in results)
    rewards = np.array([r.episode_rewards[:n] for r in results], dtype=np.float64)
    return AggregateCurve(rewards.mean(axis=0), rewards.std(axis=0))


def mean_convergence(results: list[RunResult], cap: int) -> float:
    """Average per-seed convergence episode; runs that never converged count as ``cap + 1``."""
    return float(np.mean([r.converged_at if r.converged_at is not None else cap + 1 for r in results]))
