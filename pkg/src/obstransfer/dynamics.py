"""Latent transition/reward models, their losses, and the stable encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from obstransfer.nn import tensor as T
from obstransfer.nn.layers import Network
from obstransfer.nn.tensor import Tensor


class LatentModel:
    """Per-action affine maps in representation space.

    ``P[a] @ z + p_bias[a]`` predicts the next representation and
    ``<R[a], z> + r_bias[a]`` the reward. ``use_bias=False`` gives the
    strictly linear variant.
    """

    def __init__(self, encoding_dim: int, num_actions: int, rng: np.random.Generator | None = None,
                 use_bias: bool = True):
        if encoding_dim < 1 or num_actions < 1:
            raise ValueError("encoding_dim and num_actions must be positive")
        d, A = encoding_dim, num_actions
        self.encoding_dim, self.num_actions, self.use_bias = d, A, use_bias
        if rng is None:
            P = np.zeros((A, d, d))
            R = np.zeros((A, d))
        else:
            bound = np.sqrt(6.0 / (2 * d))
            P = rng.uniform(-bound, bound, size=(A, d, d))
            R = rng.uniform(-np.sqrt(6.0 / (d + 1)), np.sqrt(6.0 / (d + 1)), size=(A, d))
        self.P = T.parameter(P)
        self.p_bias = T.parameter(np.zeros((A, d)))
        self.R = T.parameter(R)
        self.r_bias = T.parameter(np.zeros(A))

    @property
    def params(self) -> list[Tensor]:
        if self.use_bias:
            return [self.P, self.p_bias, self.R, self.r_bias]
        return [self.P, self.R]

    @property
    def transition_params(self) -> list[Tensor]:
        return [self.P, self.p_bias] if self.use_bias else [self.P]

    @property
    def reward_params(self) -> list[Tensor]:
        return [self.R, self.r_bias] if self.use_bias else [self.R]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"P": self.P.data, "p_bias": self.p_bias.data, "R": self.R.data,
                "r_bias": self.r_bias.data}

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in (("P", self.P), ("p_bias", self.p_bias), ("R", self.R),
                        ("r_bias", self.r_bias)):
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.shape:
                raise ValueError(f"{name}: shape {a.shape} does not match {t.shape}")
            t.data = a.copy()

    def zero_grad(self) -> None:
        for p in (self.P, self.p_bias, self.R, self.r_bias):
            p.grad = None

    def _check(self, z: Tensor, actions: np.ndarray) -> np.ndarray:
        if z.data.ndim != 2 or z.shape[1] != self.encoding_dim:
            raise ValueError(f"representation batch must be (N, {self.encoding_dim}), got {z.shape}")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (z.shape[0],):
            raise ValueError("need one action per representation row")
        return actions

    def _maybe_frozen(self, t: Tensor, frozen: bool) -> Tensor:
        return T.constant(t.data) if frozen else t

    def predict_next(self, z: Tensor, actions, frozen: bool = False) -> Tensor:
        """Row i: ``P[a_i] z_i + p_bias[a_i]``. ``frozen`` blocks gradients into the model."""
        actions = self._check(z, actions)
        P = self._maybe_frozen(self.P, frozen)
        out = T.batched_matvec(T.gather_rows(P, actions), z)
        if self.use_bias:
            out = T.add(out, T.gather_rows(self._maybe_frozen(self.p_bias, frozen), actions))
        return out

    def predict_reward(self, z: Tensor, actions, frozen: bool = False) -> Tensor:
        actions = self._check(z, actions)
        R = self._maybe_frozen(self.R, frozen)
        out = T.rowwise_dot(T.gather_rows(R, actions), z)
        if self.use_bias:
            out = T.add(out, T.gather_rows(self._maybe_frozen(self.r_bias, frozen), actions))
        return out

    def copy(self) -> "LatentModel":
        other = LatentModel(self.encoding_dim, self.num_actions, None, self.use_bias)
        other.set_arrays(self.arrays())
        return other


def transition_loss(model: LatentModel, z: Tensor, actions, z_next: Tensor,
                    frozen: bool = False) -> Tensor:
    """(1/N) sum_i ||P(z_i, a_i) - stopgrad(z'_i)||^2."""
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    pred = model.predict_next(z, actions, frozen=frozen)
    return T.mean_sq_row_norm(pred, T.stop_gradient(z_next))


def reward_loss(model: LatentModel, z: Tensor, actions, rewards, frozen: bool = False) -> Tensor:
    """(1/N) sum_i (R(z_i, a_i) - r_i)^2."""
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    pred = model.predict_reward(z, actions, frozen=frozen)
    return T.mse(pred, T.constant(np.asarray(rewards, dtype=np.float64)))


def loss_P(encoder: Network, model: LatentModel, obs, actions, next_obs,
           frozen: bool = False) -> Tensor:
    """Transition loss with the encoder applied to both ends; next side is gradient-blocked."""
    z = encoder(obs)
    z_next = encoder(next_obs)
    return transition_loss(model, z, actions, z_next, frozen)


def loss_R(encoder: Network, model: LatentModel, obs, actions, rewards,
           frozen: bool = False) -> Tensor:
    return reward_loss(model, encoder(obs), actions, rewards, frozen)


@dataclass
class StableEncoder:
    """Periodically refreshed frozen copy of the live encoder."""

    network: Network
    period: int = 10

    @classmethod
    def from_live(cls, live: Network, period: int = 10) -> "StableEncoder":
        if period < 1:
            raise ValueError("stable encoder period must be >= 1")
        return cls(live.clone(), period)

    def refresh(self, live: Network, t: int) -> bool:
        """Copy live weights iff ``t`` is a multiple of the period."""
        if t < 0:
            raise ValueError("step must be non-negative")
        if t % self.period == 0:
            self.network.set_weights(live.get_weights())
            return True
        return False

    def encode(self, obs) -> Tensor:
        return T.constant(self.network.predict(obs))
