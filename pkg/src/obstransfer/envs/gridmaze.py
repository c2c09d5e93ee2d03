"""Grid maze with an x-y coordinate face and a top-down one-hot image face."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from obstransfer.envs.core import Env, EpisodeDone, ObservationSpec, Transition

DEFAULT_MAP = """\
........
.##..#..
.#...#..
...#....
.#...##.
.#.#....
...#.#..
........
"""

STEP_REWARD = -0.01
GOAL_REWARD = 1.0
HORIZON = 100

# up, down, left, right as (dx, dy); y grows downward (row index)
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))


def parse_maze(text: str) -> np.ndarray:
    """'#' = wall, '.' = open; returns a boolean wall mask (H, W)."""
    rows = [line.rstrip("\r") for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty maze")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"maze row {i} has length {len(row)}, expected {width}")
        bad = set(row) - {"#", "."}
        if bad:
            raise ValueError(f"maze row {i} has invalid characters {sorted(bad)}")
    walls = np.array([[c == "#" for c in row] for row in rows], dtype=bool)
    if (~walls).sum() < 2:
        raise ValueError("maze needs at least two open cells")
    return walls


def load_maze(path: str | Path) -> np.ndarray:
    return parse_maze(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class GridMazeState:
    agent: tuple[int, int]
    goal: tuple[int, int]
    walls: np.ndarray
    steps_taken: int = 0


class GridMaze(Env):
    """Navigate to the goal cell.

    Reward is -0.01 per step and +1.0 on the step that reaches the goal;
    episodes stop at the goal or after ``horizon`` steps. With
    ``goal_mode='resample'`` the goal is drawn per episode, with ``'fixed'``
    it stays at ``fixed_goal`` (default: last open cell in row-major order).
    """

    num_actions = 4

    def __init__(self, face: str = "vector", walls: np.ndarray | None = None,
                 goal_mode: str = "resample", fixed_goal: tuple[int, int] | None = None,
                 horizon: int = HORIZON):
        if face not in ("vector", "pixel"):
            raise ValueError(f"GridMaze face must be 'vector' or 'pixel', got {face!r}")
        if goal_mode not in ("resample", "fixed"):
            raise ValueError(f"goal_mode must be 'resample' or 'fixed', got {goal_mode!r}")
        self.face = face
        self.walls = parse_maze(DEFAULT_MAP) if walls is None else np.asarray(walls, dtype=bool)
        self.height, self.width = self.walls.shape
        self.goal_mode = goal_mode
        self.horizon = horizon
        ys, xs = np.nonzero(~self.walls)
        self.open_cells = [(int(x), int(y)) for y, x in zip(ys, xs)]
        if fixed_goal is None:
            fixed_goal = self.open_cells[-1]
        if self.walls[fixed_goal[1], fixed_goal[0]]:
            raise ValueError(f"fixed goal {fixed_goal} is a wall")
        self.fixed_goal = tuple(fixed_goal)
        if face == "vector":
            self.observation_spec = ObservationSpec.vector(4)
        else:
            self.observation_spec = ObservationSpec.image(self.height, self.width, 3)
        self.velocity_pairs: dict[int, int] = {}
        self.state: GridMazeState | None = None
        self.done = True
        self.truncated = False

    # ------------------------------------------------------------ dynamics

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        cells = self.open_cells
        if self.goal_mode == "resample":
            goal = cells[int(rng.integers(len(cells)))]
        else:
            goal = self.fixed_goal
        others = [c for c in cells if c != goal]
        agent = others[int(rng.integers(len(others)))]
        self.state = GridMazeState(agent, goal, self.walls, 0)
        self.done = False
        self.truncated = False
        return self.observe()

    def _move(self, cell: tuple[int, int], action: int) -> tuple[int, int]:
        dx, dy = MOVES[action]
        x, y = cell[0] + dx, cell[1] + dy
        if 0 <= x < self.width and 0 <= y < self.height and not self.walls[y, x]:
            return (x, y)
        return cell

    def step(self, action: int) -> Transition:
        if self.done or self.state is None:
            raise EpisodeDone("step() after episode end; call reset()")
        a = self._check_action(action)
        obs = self.observe()
        s = self.state
        agent = self._move(s.agent, a)
        reached = agent == s.goal
        reward = GOAL_REWARD if reached else STEP_REWARD
        steps = s.steps_taken + 1
        self.state = replace(s, agent=agent, steps_taken=steps)
        self.done = reached or steps >= self.horizon
        self.truncated = self.done and not reached
        return Transition(obs, a, reward, self.observe(), self.done)

    # ------------------------------------------------------------ faces

    def vector_obs(self, state: GridMazeState | None = None) -> np.ndarray:
        s = self.state if state is None else state
        return np.array([s.agent[0] / self.width, s.agent[1] / self.height,
                         s.goal[0] / self.width, s.goal[1] / self.height])

    def render_pixel(self, state: GridMazeState | None = None) -> np.ndarray:
        """(H, W, 3) image: agent, goal and wall channels, one-hot cells."""
        s = self.state if state is None else state
        img = np.zeros((self.height, self.width, 3))
        img[s.agent[1], s.agent[0], 0] = 1.0
        img[s.goal[1], s.goal[0], 1] = 1.0
        img[:, :, 2] = self.walls
        return img

    def observe(self) -> np.ndarray:
        return self.vector_obs() if self.face == "vector" else self.render_pixel()

    def observation_map_f(self, target_obs: np.ndarray) -> np.ndarray:
        """Decode a pixel observation to the vector observation of the same state."""
        img = np.asarray(target_obs)
        if img.shape != (self.height, self.width, 3):
            raise ValueError(f"undecodable image of shape {img.shape}")
        agent = np.argwhere(img[:, :, 0] == 1.0)
        goal = np.argwhere(img[:, :, 1] == 1.0)
        if len(agent) != 1 or len(goal) != 1:
            raise ValueError("undecodable image: need exactly one agent and one goal pixel")
        (ay, ax), (gy, gx) = agent[0], goal[0]
        return np.array([ax / self.width, ay / self.height, gx / self.width, gy / self.height])

    # ------------------------------------------------------------ state access

    def get_state(self) -> tuple[GridMazeState, bool]:
        return self.state, self.done

    def set_state(self, state) -> None:
        self.state, self.done = state

    def set_from_vector(self, vec: np.ndarray, steps_taken: int = 0) -> None:
        """Place the env in the state whose vector face is ``vec``."""
        agent = (int(round(vec[0] * self.width)), int(round(vec[1] * self.height)))
        goal = (int(round(vec[2] * self.width)), int(round(vec[3] * self.height)))
        for cell in (agent, goal):
            if self.walls[cell[1], cell[0]]:
                raise ValueError(f"cell {cell} is a wall")
        self.state = GridMazeState(agent, goal, self.walls, steps_taken)
        self.done = False

    @property
    def steps_taken(self) -> int:
        return self.state.steps_taken

    # ------------------------------------------------------------ oracle

    def shortest_path(self, start: tuple[int, int], goal: tuple[int, int]) -> int:
        """BFS distance in moves; -1 when unreachable."""
        if start == goal:
            return 0
        seen = {start}
        queue = deque([(start, 0)])
        while queue:
            cell, d = queue.popleft()
            for a in range(4):
                nxt = self._move(cell, a)
                if nxt == goal:
                    return d + 1
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append((nxt, d + 1))
        return -1

    def optimal_return(self, start: tuple[int, int], goal: tuple[int, int]) -> float:
        d = self.shortest_path(start, goal)
        if d <= 0 or d > self.horizon:
            return STEP_REWARD * self.horizon
        return STEP_REWARD * (d - 1) + GOAL_REWARD
