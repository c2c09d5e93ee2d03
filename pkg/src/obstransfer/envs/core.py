from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class ObservationSpec:
    """Shape contract of one observation face.

    Vector faces hold ``(dim,)`` arrays; image faces hold ``(H, W, C)`` arrays
    with values in [0, 1] (or [-1, 1] for frame differences).
    """

    kind: str
    shape: tuple[int, ...]
    low: float = -np.inf
    high: float = np.inf

    @classmethod
    def vector(cls, dim: int) -> "ObservationSpec":
        if dim < 1:
            raise ValueError("vector dim must be >= 1")
        return cls("vector", (int(dim),))

    @classmethod
    def image(cls, height: int, width: int, channels: int, low: float = 0.0,
              high: float = 1.0) -> "ObservationSpec":
        if min(height, width, channels) < 1:
            raise ValueError("image dims must be >= 1")
        return cls("image", (int(height), int(width), int(channels)), low, high)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            raise ValueError(f"observation shape {values.shape} does not match {self.shape}")
        if self.kind == "image" and ((values < self.low).any() or (values > self.high).any()):
            raise ValueError(f"image values outside [{self.low}, {self.high}]")
        return values

    def network_input_shape(self) -> tuple[int, ...]:
        if self.kind == "image":
            h, w, c = self.shape
            return (c, h, w)
        return self.shape


def to_network_batch(spec: ObservationSpec, obs: np.ndarray) -> np.ndarray:
    """Stack of observations (N, *spec.shape) -> network layout (NCHW for images)."""
    if spec.kind == "image":
        return np.ascontiguousarray(obs.transpose(0, 3, 1, 2))
    return obs


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


class EpisodeDone(RuntimeError):
    """step() called after the episode ended."""


class Env:
    """Common surface of the built-in environments."""

    observation_spec: ObservationSpec
    num_actions: int
    face: str
    # set by step(): the episode ended on the time limit, not a terminal state
    truncated: bool = False

    def reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: int) -> Transition:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def get_state(self) -> Any:
        raise NotImplementedError

    def set_state(self, state: Any) -> None:
        raise NotImplementedError

    def _check_action(self, action: int) -> int:
        a = int(action)
        if not 0 <= a < self.num_actions:
            raise ValueError(f"action {action} outside [0, {self.num_actions})")
        return a
