"""Cart-pole balancing with the classic-control constants.

Integration is semi-implicit Euler (velocity first, then position) and the
velocity is re-derived from the position increment after each step, so the
stored velocity is exactly ``(x_t - x_{t-1}) / tau`` in floating point. That
keeps velocity recoverable bit-for-bit from two stacked position frames.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from obstransfer.envs.core import Env, EpisodeDone, ObservationSpec, Transition

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
X_LIMIT = 2.4
THETA_LIMIT = 12 * 2 * math.pi / 360
MAX_STEPS = 200

# pixel face: 600x400 screen downscaled by 4, 40x90 crop following the cart
SCREEN_W, SCREEN_H = 150, 100
VIEW_H, VIEW_W = 40, 90
VIEW_Y0 = 20.0  # bottom of the crop in screen units (y up)
SCALE = SCREEN_W / (2 * X_LIMIT)
CART_Y = 25.0
CART_HALF_W, CART_HALF_H = 6.25, 3.75
AXLE_Y = CART_Y + 1.875
POLE_LEN = SCALE * 2 * HALF_LENGTH
POLE_HALF_W = 1.25


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps_taken: int = 0


def physics_step(s: CartPoleState, action: int) -> CartPoleState:
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    cos, sin = math.cos(s.theta), math.sin(s.theta)
    temp = (force + POLEMASS_LENGTH * s.theta_dot ** 2 * sin) / TOTAL_MASS
    theta_acc = (GRAVITY * sin - cos * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos ** 2 / TOTAL_MASS))
    x_acc = temp - POLEMASS_LENGTH * theta_acc * cos / TOTAL_MASS
    x_dot = s.x_dot + TAU * x_acc
    theta_dot = s.theta_dot + TAU * theta_acc
    x = s.x + TAU * x_dot
    theta = s.theta + TAU * theta_dot
    # resync so velocity == position increment / tau exactly
    return CartPoleState(x, (x - s.x) / TAU, theta, (theta - s.theta) / TAU, s.steps_taken + 1)


def _pixel_grid():
    cols = np.arange(VIEW_W) + 0.5
    rows = np.arange(VIEW_H)
    ys = VIEW_Y0 + VIEW_H - rows - 0.5  # row 0 is the top of the crop
    return np.meshgrid(cols, ys)


_GX, _GY = _pixel_grid()


def render_frame(s: CartPoleState) -> np.ndarray:
    """Binary (40, 90) frame of cart and pole."""
    cart_x = s.x * SCALE + SCREEN_W / 2
    left = min(max(cart_x - VIEW_W / 2, 0.0), SCREEN_W - VIEW_W)
    gx = _GX + left
    cart = (np.abs(gx - cart_x) <= CART_HALF_W) & (np.abs(_GY - CART_Y) <= CART_HALF_H)
    # pole: segment from the axle, tilted right for positive theta
    ux, uy = math.sin(s.theta), math.cos(s.theta)
    px, py = gx - cart_x, _GY - AXLE_Y
    along = px * ux + py * uy
    across = np.abs(px * uy - py * ux)
    pole = (along >= 0) & (along <= POLE_LEN) & (across <= POLE_HALF_W)
    return (cart | pole).astype(np.float64)


class CartPole(Env):
    num_actions = 2

    def __init__(self, face: str = "vector"):
        if face not in ("vector", "pixel"):
            raise ValueError(f"CartPole face must be 'vector' or 'pixel', got {face!r}")
        self.face = face
        if face == "vector":
            self.observation_spec = ObservationSpec.vector(4)
        else:
            self.observation_spec = ObservationSpec.image(VIEW_H, VIEW_W, 1, -1.0, 1.0)
        # velocity feature index -> position feature index
        self.velocity_pairs = {1: 0, 3: 2}
        self.dt = TAU
        self.state: CartPoleState | None = None
        self.prev_frame = np.zeros((VIEW_H, VIEW_W))
        self.done = True
        self.truncated = False

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        x, x_dot, theta, theta_dot = (float(v) for v in rng.uniform(-0.05, 0.05, size=4))
        self.state = CartPoleState(x, x_dot, theta, theta_dot, 0)
        self.prev_frame = np.zeros((VIEW_H, VIEW_W))
        self.done = False
        self.truncated = False
        return self.observe()

    def _failed(self, s: CartPoleState) -> bool:
        return abs(s.x) > X_LIMIT or abs(s.theta) > THETA_LIMIT

    def _terminal(self, s: CartPoleState) -> bool:
        return self._failed(s) or s.steps_taken >= MAX_STEPS

    def step(self, action: int) -> Transition:
        if self.done or self.state is None:
            raise EpisodeDone("step() after episode end; call reset()")
        a = self._check_action(action)
        obs = self.observe()
        if self.face == "pixel":
            self.prev_frame = render_frame(self.state)
        self.state = physics_step(self.state, a)
        self.done = self._terminal(self.state)
        self.truncated = self.done and not self._failed(self.state)
        return Transition(obs, a, 1.0, self.observe(), self.done)

    def vector_obs(self) -> np.ndarray:
        s = self.state
        return np.array([s.x, s.x_dot, s.theta, s.theta_dot])

    def render_pixel(self) -> np.ndarray:
        """Current frame minus the previous one, shape (40, 90, 1)."""
        return (render_frame(self.state) - self.prev_frame)[:, :, None]

    def observe(self) -> np.ndarray:
        return self.vector_obs() if self.face == "vector" else self.render_pixel()

    def observation_map_f(self, target_obs: np.ndarray) -> np.ndarray:
        raise ValueError("undecodable image: the cart-centred crop hides the cart position")

    def get_state(self):
        return self.state, self.prev_frame.copy(), self.done

    def set_state(self, state) -> None:
        self.state, frame, self.done = state
        self.prev_frame = frame.copy()

    def set_from_vector(self, vec: np.ndarray, steps_taken: int = 0) -> None:
        x, x_dot, theta, theta_dot = (float(v) for v in vec)
        self.state = CartPoleState(x, x_dot, theta, theta_dot, steps_taken)
        self.done = False

    @property
    def steps_taken(self) -> int:
        return self.state.steps_taken
