from .cartpole import CartPole
from .flappy import FlappyBird
from .lanekeep import LaneKeep

ENVIRONMENTS = {
    "cartpole": CartPole,
    "lanekeep": LaneKeep,
    "flappybird": FlappyBird,
}


def make_env(name: str, **kwargs):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**kwargs)


def danger_grid(name: str):
    from . import cartpole, flappy, lanekeep

    return {"cartpole": cartpole.danger_grid, "lanekeep": lanekeep.danger_grid, "flappybird": flappy.danger_grid}[name]()


__all__ = ["CartPole", "LaneKeep", "FlappyBird", "ENVIRONMENTS", "make_env", "danger_grid"]
