"""Environments with vector and pixel faces of the same deterministic dynamics."""
from __future__ import annotations

from obstransfer.envs.cartpole import CartPole
from obstransfer.envs.core import (Env, EpisodeDone, ObservationSpec, Transition,
                                   to_network_batch)
from obstransfer.envs.gridmaze import GridMaze, load_maze, parse_maze
from obstransfer.envs.wrappers import BrokenSensor

# broken-sensor defaults: cartpole loses both velocities, the maze keeps everything
STACK_DEFAULTS = {"cartpole": ((1, 3), 2), "gridmaze": ((), 3)}


def make_env(name: str, face: str = "vector", map_path: str | None = None,
             goal_mode: str = "resample", drop_features=None, stack_depth: int | None = None) -> Env:
    """Build a built-in environment in the requested observation face.

    ``face`` is 'vector', 'pixel' or 'stacked' (broken-sensor frame stack
    over the vector face).
    """
    name = name.lower()
    if name == "gridmaze":
        walls = load_maze(map_path) if map_path else None
        base = lambda f: GridMaze(f, walls=walls, goal_mode=goal_mode)  # noqa: E731
    elif name == "cartpole":
        base = CartPole
    else:
        raise ValueError(f"unknown environment {name!r}")
    if face == "stacked":
        drop, depth = STACK_DEFAULTS[name]
        return BrokenSensor(base("vector"),
                            drop if drop_features is None else drop_features,
                            depth if stack_depth is None else stack_depth)
    return base(face)


__all__ = [
    "BrokenSensor", "CartPole", "Env", "EpisodeDone", "GridMaze", "ObservationSpec",
    "Transition", "load_maze", "make_env", "parse_maze", "to_network_batch",
]
