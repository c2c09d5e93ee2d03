"""Finite-difference checks for every layer type and every training loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from obstransfer.agent import Batch, EncoderQNet, td_loss
from obstransfer.dynamics import LatentModel, loss_P, loss_R, transition_loss
from obstransfer.nn import tensor as T
from obstransfer.nn.gradcheck import check_gradients
from obstransfer.nn.layers import Conv2d, Dense, Flatten, Network, UnitNormalize

TOLERANCE = 1e-4


Case = tuple[str, Callable, list, Callable | None]


@dataclass
class GradCase:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _net_case(layers, in_shape, x, rng) -> tuple[Callable, list]:
    net = Network(layers, in_shape, rng)
    y = rng.normal(size=(x.shape[0],) + net.output_shape)
    return (lambda: T.mse(net(x), T.constant(y))), net.params


def _vec_net(rng) -> Network:
    return Network([Dense(5, 7, "tanh"), Dense(7, 4), UnitNormalize()], (5,), rng)


def _head(rng) -> Network:
    return Network([Dense(4, 6, "tanh"), Dense(6, 3)], (4,), rng)


def cases(seed: int = 0) -> list[Case]:
    """(name, loss_fn, params, numeric_fn) tuples; tanh keeps every check smooth.

    numeric_fn is None unless the loss has a stop-gradient barrier.
    """
    rng = np.random.default_rng(seed)
    out = []
    x = rng.normal(size=(4, 5))
    for act in ("linear", "relu", "tanh"):
        f, ps = _net_case([Dense(5, 3, act)], (5,), x, rng)
        out.append((f"dense_{act}", f, ps, None))
    img = rng.normal(size=(2, 2, 6, 6))
    for stride in (1, 2):
        f, ps = _net_case([Conv2d(2, 3, 3, stride, "tanh"), Flatten()], (2, 6, 6), img, rng)
        out.append((f"conv2d_stride{stride}", f, ps, None))
    f, ps = _net_case([Conv2d(2, 3, 3, 1, "tanh"), Flatten(), Dense(48, 4), UnitNormalize()],
                      (2, 6, 6), img, rng)
    out.append(("conv_flatten_dense_unitnorm", f, ps, None))

    # unit normalize on its own, gradient w.r.t. the input
    z = T.parameter(rng.normal(size=(4, 3)))
    w = rng.normal(size=(4, 3))
    out.append(("unit_normalize",
                lambda: T.sum_all(T.mul(T.unit_normalize(z), T.constant(w))), [z], None))

    enc, head = _vec_net(rng), _head(rng)
    net = EncoderQNet(enc, head)
    # nudge the target copy away from the live weights
    net.target_head.set_weights([p + 0.1 for p in head.get_weights()])
    batch = Batch(rng.normal(size=(6, 5)), rng.integers(3, size=6), rng.normal(size=6),
                  rng.normal(size=(6, 5)), np.array([0, 0, 1, 0, 0, 1], dtype=np.float64))
    out.append(("td_loss", lambda: td_loss(net, batch, 0.9), enc.params + head.params, None))

    model = LatentModel(4, 3, rng)
    for p in model.params:
        p.data += rng.normal(scale=0.1, size=p.shape)
    obs, nxt = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    acts, rew = rng.integers(3, size=6), rng.normal(size=6)
    # finite differences see through stop_gradient, so the reference holds
    # the next-observation representation at its current value
    z_next = T.constant(enc.predict(nxt))
    z_now = T.constant(enc.predict(obs))
    fixed_next = lambda: transition_loss(model, enc(obs), acts, z_next)  # noqa: E731
    out.append(("loss_P", lambda: loss_P(enc, model, obs, acts, nxt), enc.params + model.params,
                fixed_next))
    out.append(("loss_R", lambda: loss_R(enc, model, obs, acts, rew), enc.params + model.params,
                None))

    # next-observation branch alone: the analytic encoder gradient must be
    # exactly the zero of a loss whose inputs are all held fixed
    def next_only():
        return transition_loss(model, z_now, acts, enc(nxt))

    out.append(("loss_P_stopgrad_path", next_only, enc.params,
                lambda: transition_loss(model, z_now, acts, z_next)))
    out.append(("loss_P_frozen_model",
                lambda: loss_P(enc, model, obs, acts, nxt, frozen=True), enc.params, fixed_next))
    return out


def stopgrad_zero_path(seed: int = 0) -> float:
    """Largest |grad| reaching the encoder through the blocked branch only."""
    _, fn, params, _ = [c for c in cases(seed) if c[0] == "loss_P_stopgrad_path"][0]
    for p in params:
        p.grad = None
    T.backward(fn())
    return max(0.0 if p.grad is None else float(np.abs(p.grad).max()) for p in params)


def run_gradcheck(seed: int = 0) -> list[GradCase]:
    return [GradCase(name, check_gradients(fn, params, numeric_fn=ref))
            for name, fn, params, ref in cases(seed)]
