"""Environments: the corridor MDP and small grid-world puzzles."""

from .base import EnvStep, TabularDynamics, success_reward
from .corridor import CorridorConfig, CorridorEnv, corridor_reset
from .grid import ACTIONS, GridConfig, GridWorld

__all__ = [
    "ACTIONS",
    "CorridorConfig",
    "CorridorEnv",
    "EnvStep",
    "GridConfig",
    "GridWorld",
    "TabularDynamics",
    "corridor_reset",
    "success_reward",
]
