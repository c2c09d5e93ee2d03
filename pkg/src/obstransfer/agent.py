"""DQN base learner with an explicit encoder / Q-head split."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from obstransfer.envs.core import ObservationSpec, to_network_batch
from obstransfer.nn import tensor as T
from obstransfer.nn.layers import Network, pixel_encoder, q_head, vector_encoder
from obstransfer.nn.optim import Adam
from obstransfer.nn.tensor import Tensor


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 32
    replay_capacity: int = 10000
    target_update_period: int = 10
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 5000
    encoding_dim: int = 16
    lam: float = 18.0
    stable_period: int = 10
    hidden: int = 64

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        for name in ("batch_size", "replay_capacity", "target_update_period", "encoding_dim",
                     "stable_period", "hidden", "epsilon_decay_steps"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")

    def epsilon(self, t: int) -> float:
        """Exponential decay from start to end over ``epsilon_decay_steps``, then flat."""
        if t >= self.epsilon_decay_steps:
            return self.epsilon_end
        frac = t / self.epsilon_decay_steps
        if self.epsilon_end == 0.0:
            # geometric decay to zero is undefined; fall back to linear
            return self.epsilon_start * (1.0 - frac)
        ratio = self.epsilon_end / self.epsilon_start
        return max(self.epsilon_end, self.epsilon_start * ratio ** frac)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...]):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity,) + tuple(obs_shape))
        self.next_obs = np.zeros((capacity,) + tuple(obs_shape))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < n:
            raise ValueError(f"buffer holds {self.size} transitions, need {n}")
        return rng.integers(0, self.size, size=n)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx],
                     self.dones[idx])

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        return self.gather(self.indices(n, rng))


def build_encoder(spec: ObservationSpec, encoding_dim: int, rng: np.random.Generator,
                  hidden: int = 64) -> Network:
    shape = spec.network_input_shape()
    if spec.kind == "image":
        layers = pixel_encoder(shape, encoding_dim)
    else:
        layers = vector_encoder(shape[0], encoding_dim, hidden)
    return Network(layers, shape, rng)


class EncoderQNet:
    """Q(o, .) = q_head(encoder(o)) plus a lagged target copy of both parts."""

    def __init__(self, encoder: Network, head: Network):
        if encoder.output_shape != head.input_shape:
            raise ValueError(f"encoder emits {encoder.output_shape}, head expects {head.input_shape}")
        self.encoder = encoder
        self.head = head
        self.target_encoder = encoder.clone()
        self.target_head = head.clone()

    @classmethod
    def build(cls, spec: ObservationSpec, num_actions: int, encoding_dim: int,
              rng: np.random.Generator, hidden: int = 64) -> "EncoderQNet":
        enc = build_encoder(spec, encoding_dim, rng, hidden)
        head = Network(q_head(encoding_dim, num_actions, hidden), (encoding_dim,), rng)
        return cls(enc, head)

    @property
    def num_actions(self) -> int:
        return self.head.output_shape[0]

    @property
    def params(self) -> list[Tensor]:
        return [p for p in self.encoder.params + self.head.params if p.requires_grad]

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.head.predict(self.encoder.predict(obs))

    def target_q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.target_head.predict(self.target_encoder.predict(obs))

    def refresh_target(self) -> None:
        self.target_encoder.set_weights(self.encoder.get_weights())
        self.target_head.set_weights(self.head.get_weights())


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest action index."""
    return np.argmax(q, axis=-1)


def act(net: EncoderQNet, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """epsilon-greedy on one network-layout observation."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(net.num_actions))
    return int(greedy(net.q_values(obs[None]))[0])


def td_targets(net: EncoderQNet, batch: Batch, gamma: float) -> np.ndarray:
    bootstrap = net.target_q_values(batch.next_obs).max(axis=1)
    return batch.rewards + gamma * (1.0 - batch.dones) * bootstrap


def td_loss(net: EncoderQNet, batch: Batch, gamma: float, z: Tensor | None = None) -> Tensor:
    """mean_i (Q(o_i, a_i) - y_i)^2 with y built from the target copy (no gradient)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if z is None:
        z = net.encoder(batch.obs)
    q = T.pick(net.head(z), batch.actions)
    return T.mse(q, T.constant(td_targets(net, batch, gamma)))


class DQNAgent:
    """Owns the network, its optimizer and the update/refresh counters."""

    def __init__(self, spec: ObservationSpec, num_actions: int, cfg: AgentConfig,
                 rng: np.random.Generator, net: EncoderQNet | None = None):
        self.spec = spec
        self.cfg = cfg
        self.net = net if net is not None else EncoderQNet.build(
            spec, num_actions, cfg.encoding_dim, rng, cfg.hidden)
        self.opt = Adam(self.net.params, lr=cfg.lr)
        self.updates = 0

    def prep(self, obs: np.ndarray) -> np.ndarray:
        """Single env observation -> network layout (no batch axis)."""
        return to_network_batch(self.spec, np.asarray(obs, dtype=np.float64)[None])[0]

    def act(self, obs_net: np.ndarray, t: int, rng: np.random.Generator) -> int:
        return act(self.net, obs_net, self.cfg.epsilon(t), rng)

    def apply(self, loss: Tensor) -> None:
        """Backprop ``loss``, take one Adam step, advance the target schedule."""
        T.backward(loss)
        self.opt.step()
        self.updates += 1
        if self.updates % self.cfg.target_update_period == 0:
            self.net.refresh_target()


def train_step_base(agent: DQNAgent, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
    batch = buffer.sample(agent.cfg.batch_size, rng)
    loss = td_loss(agent.net, batch, agent.cfg.gamma)
    agent.apply(loss)
    return {"loss_base": loss.item()}
