"""Experiment configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..agents import PRESETS, Hyperparameters

SHIELD_MODES = ("none", "unp", "mbs")

# Five seeds per environment, as used for every reported curve.
REFERENCE_SEEDS = {
    "cartpole": (1234, 2000, 3000, 3456, 4500),
    "lanekeep": (1234, 2000, 3000, 3456, 4500),
    "flappybird": (1234, 1500, 2222, 3456, 5000),
}

DEFAULT_EPISODES = {"cartpole": 500, "lanekeep": 100, "flappybird": 2000}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    env: str
    shield_mode: str = "unp"
    seeds: tuple[int, ...] | None = None  # None: the environment's five reference seeds
    max_episodes: int = 0
    hyperparameters: Hyperparameters | None = None
    output_dir: Path = Path("results")
    episode_steps: int | None = None  # overrides the environment's own cap
    stop_on_convergence: bool = False
    convergence_window: int = 10
    mbs_depth: int = 3
    mbs_branch: int = 5
    record_mbs: bool = False

    def __post_init__(self):
        if self.env not in PRESETS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {sorted(PRESETS)}")
        if self.shield_mode not in SHIELD_MODES:
            raise ConfigError(f"unknown shield mode {self.shield_mode!r}; choose from {SHIELD_MODES}")
        if self.seeds is None:
            self.seeds = REFERENCE_SEEDS[self.env]
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if self.max_episodes == 0:
            self.max_episodes = DEFAULT_EPISODES[self.env]
        if self.max_episodes < 1:
            raise ConfigError("max_episodes must be >= 1")
        if self.hyperparameters is None:
            self.hyperparameters = PRESETS[self.env]
        if self.episode_steps is not None and self.episode_steps < 1:
            raise ConfigError("episode_steps must be >= 1")
        if self.convergence_window < 1 or self.mbs_depth < 1 or self.mbs_branch < 1:
            raise ConfigError("window, mbs_depth and mbs_branch must be >= 1")
        self.output_dir = Path(self.output_dir)


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        out[key] = value
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def _as_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


_HP_TYPES = {f.name: f.type for f in fields(Hyperparameters)}


def _hp_value(name: str, value: str):
    if name not in _HP_TYPES:
        raise ConfigError(f"unknown hyperparameter {name!r}; known: {sorted(_HP_TYPES)}")
    if name in ("optimizer", "decay_per"):
        return value
    if name == "bootstrap_truncated":
        return _as_bool(value)
    try:
        return int(value) if name in ("exploration_steps", "batch_size", "buffer_capacity") else float(value)
    except ValueError:
        raise ConfigError(f"hyperparameter {name} expects a number, got {value!r}") from None


def build_config(settings: dict[str, str]) -> ExperimentConfig:
    """Turn string settings (file keys and CLI flags share one namespace) into a config.

    Keys: env, shield, seeds (comma separated), episodes, out, episode_steps,
    stop_on_convergence, window, mbs_depth, mbs_branch, record_mbs, and
    ``hp.<name>`` for any hyperparameter.
    """
    settings = dict(settings)
    env = settings.pop("env", None)
    if env is None:
        raise ConfigError("missing required setting 'env'")
    if env not in PRESETS:
        raise ConfigError(f"unknown env {env!r}; choose from {sorted(PRESETS)}")
    hp_over = {}
    kwargs: dict = {"env": env}
    try:
        for key, value in settings.items():
            if key.startswith("hp."):
                name = key[3:]
                hp_over[name] = _hp_value(name, value)
            elif key == "shield":
                kwargs["shield_mode"] = value
            elif key == "seeds":
                kwargs["seeds"] = tuple(int(s) for s in value.replace(" ", "").split(",") if s)
                if not kwargs["seeds"]:
                    raise ConfigError("seed list is empty")
            elif key == "episodes":
                kwargs["max_episodes"] = int(value)
            elif key == "out":
                kwargs["output_dir"] = Path(value)
            elif key == "episode_steps":
                kwargs["episode_steps"] = int(value)
            elif key == "window":
                kwargs["convergence_window"] = int(value)
            elif key in ("mbs_depth", "mbs_branch"):
                kwargs[key] = int(value)
            elif key in ("stop_on_convergence", "record_mbs"):
                kwargs[key] = _as_bool(value)
            else:
                raise ConfigError(f"unknown setting {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    try:
        kwargs["hyperparameters"] = PRESETS[env].with_overrides(**hp_over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**kwargs)
