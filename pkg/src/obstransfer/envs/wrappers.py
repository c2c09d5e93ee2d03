from __future__ import annotations

from collections import deque
from typing import Iterable

import numpy as np

from obstransfer.envs.core import Env, ObservationSpec, Transition


class BrokenSensor(Env):
    """Drop features from a vector face and observe a stack of past frames.

    The observation is the concatenation of the last ``stack_depth`` frames
    (oldest first), each with ``drop_features`` removed. Frames before the
    episode start are zeros. Dropped features must be velocities whose
    position partner is kept, so they can be rebuilt from two frames.
    """

    def __init__(self, env: Env, drop_features: Iterable[int] = (), stack_depth: int = 2):
        if env.observation_spec.kind != "vector":
            raise ValueError("broken-sensor wrapper needs a vector-face base env")
        dim = env.observation_spec.shape[0]
        drop = sorted(set(int(i) for i in drop_features))
        for i in drop:
            if not 0 <= i < dim:
                raise ValueError(f"feature {i} outside [0, {dim})")
            if i not in env.velocity_pairs or env.velocity_pairs[i] in drop:
                raise ValueError(f"feature {i} cannot be rebuilt from stacked frames")
        if drop and stack_depth < 2:
            raise ValueError("dropping a velocity feature needs stack_depth >= 2")
        if stack_depth < 1:
            raise ValueError("stack_depth must be >= 1")
        self.env = env
        self.drop = tuple(drop)
        self.keep = tuple(i for i in range(dim) if i not in drop)
        self.stack_depth = int(stack_depth)
        self.num_actions = env.num_actions
        self.face = "stacked"
        self.source_dim = dim
        self.observation_spec = ObservationSpec.vector(self.stack_depth * len(self.keep))
        self.frames: deque[np.ndarray] = deque(maxlen=self.stack_depth)

    def _frame(self, vec: np.ndarray) -> np.ndarray:
        return vec[list(self.keep)]

    def _blank(self) -> None:
        self.frames.clear()
        for _ in range(self.stack_depth):
            self.frames.append(np.zeros(len(self.keep)))

    def observe(self) -> np.ndarray:
        return np.concatenate(list(self.frames))

    def reset(self, seed: int) -> np.ndarray:
        vec = self.env.reset(seed)
        self._blank()
        self.frames.append(self._frame(vec))
        return self.observe()

    def step(self, action: int) -> Transition:
        obs = self.observe()
        tr = self.env.step(action)
        self.frames.append(self._frame(tr.next_obs))
        return Transition(obs, tr.action, tr.reward, self.observe(), tr.done)

    @property
    def done(self) -> bool:
        return self.env.done

    @property
    def truncated(self) -> bool:
        """Episode ended on the time limit rather than a terminal state."""
        return self.env.truncated

    @property
    def steps_taken(self) -> int:
        return self.env.steps_taken

    def get_state(self):
        return self.env.get_state(), [f.copy() for f in self.frames]

    def set_state(self, state) -> None:
        inner, frames = state
        self.env.set_state(inner)
        self.frames.clear()
        for f in frames:
            self.frames.append(f.copy())

    def observation_map_f(self, target_obs: np.ndarray) -> np.ndarray:
        """Rebuild the base vector observation from the stacked frames.

        Valid once the episode has produced at least two real frames.
        """
        target_obs = np.asarray(target_obs, dtype=np.float64)
        if target_obs.shape != self.observation_spec.shape:
            raise ValueError(f"stacked observation has shape {target_obs.shape}")
        k = len(self.keep)
        last = target_obs[-k:]
        out = np.zeros(self.source_dim)
        out[list(self.keep)] = last
        if self.drop:
            prev = target_obs[-2 * k:-k]
            pos_slot = {feat: slot for slot, feat in enumerate(self.keep)}
            for vel in self.drop:
                j = pos_slot[self.env.velocity_pairs[vel]]
                out[vel] = (last[j] - prev[j]) / self.env.dt
        return out
