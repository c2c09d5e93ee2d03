"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from obstransfer.nn.tensor import Tensor

# Denominator floor for the relative error; keeps near-zero gradients from
# turning ~1e-11 finite-difference noise into a large ratio.
REL_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(loss_fn: Callable[[], Tensor], p: Tensor, h: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss_fn().item()
        flat[i] = old - h
        down = loss_fn().item()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-5, numeric_fn: Callable[[], Tensor] | None = None) -> float:
    """Max relative error between backward() and central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. ``numeric_fn`` (default ``loss_fn``) is the function that is
    differenced; losses with stop-gradient barriers pass a version whose
    blocked inputs are frozen at their current values.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, relative_error(a, numeric_grad(numeric_fn or loss_fn, p, h)))
    return worst
