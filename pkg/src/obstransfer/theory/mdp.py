"""Finite MDPs: exact evaluation, policy iteration, value iteration, file IO."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12
IMPROVE_TOL = 1e-12


@dataclass
class TabularMDP:
    """P[s, a, s'] transition probabilities, R[s, a] rewards, discount gamma."""

    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError(f"P must be S x A x S, got {self.P.shape}")
        if self.R.shape != self.P.shape[:2]:
            raise ValueError(f"R must be S x A = {self.P.shape[:2]}, got {self.R.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not np.isfinite(self.R).all() or not np.isfinite(self.P).all():
            raise ValueError("P and R must be finite")
        if (self.P < 0).any() or np.abs(self.P.sum(axis=2) - 1.0).max() > ROW_TOL:
            raise ValueError("every P[s, a, :] must be a probability vector")

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.P == 0.0) | (self.P == 1.0)))


def greedy(Q: np.ndarray) -> np.ndarray:
    """Per-state argmax with ties going to the lowest action index."""
    return np.argmax(Q, axis=1)


def _check_policy(M: TabularMDP, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=np.int64)
    if pi.shape != (M.num_states,) or (pi < 0).any() or (pi >= M.num_actions).any():
        raise ValueError("policy must give one valid action per state")
    return pi


def policy_eval(M: TabularMDP, policy) -> np.ndarray:
    """Exact Q of a deterministic policy via (I - gamma P_pi) V = R_pi."""
    pi = _check_policy(M, policy)
    idx = np.arange(M.num_states)
    P_pi = M.P[idx, pi]
    R_pi = M.R[idx, pi]
    V = np.linalg.solve(np.eye(M.num_states) - M.gamma * P_pi, R_pi)
    return M.R + M.gamma * M.P @ V


def values(Q: np.ndarray, policy) -> np.ndarray:
    return Q[np.arange(Q.shape[0]), np.asarray(policy)]


def policy_iteration(M: TabularMDP, max_iter: int = 10000) -> tuple[np.ndarray, np.ndarray]:
    """Howard PI from the all-zeros policy; switch only on strict improvement."""
    pi = np.zeros(M.num_states, dtype=np.int64)
    for _ in range(max_iter):
        Q = policy_eval(M, pi)
        best = greedy(Q)
        idx = np.arange(M.num_states)
        better = Q[idx, best] > Q[idx, pi] + IMPROVE_TOL
        if not better.any():
            return greedy(Q), Q
        pi = np.where(better, best, pi)
    raise RuntimeError("policy iteration did not converge")


def bellman_optimality(M: TabularMDP, Q: np.ndarray) -> np.ndarray:
    return M.R + M.gamma * M.P @ Q.max(axis=1)


def value_iteration(M: TabularMDP, tol: float = 1e-13, max_iter: int = 100000) -> np.ndarray:
    Q = np.zeros_like(M.R)
    for _ in range(max_iter):
        nxt = bellman_optimality(M, Q)
        if np.abs(nxt - Q).max() <= tol:
            return nxt
        Q = nxt
    raise RuntimeError("value iteration did not converge")


def optimal_q(M: TabularMDP) -> np.ndarray:
    return policy_iteration(M)[1]


# ------------------------------------------------------------------ generators


def random_mdp(num_states: int, num_actions: int, gamma: float, rng: np.random.Generator,
               deterministic: bool = False) -> TabularMDP:
    """Dirichlet(1) transition rows (or one random successor) and rewards in [0, 1]."""
    S, A = num_states, num_actions
    if deterministic:
        P = np.zeros((S, A, S))
        nxt = rng.integers(S, size=(S, A))
        P[np.arange(S)[:, None], np.arange(A)[None, :], nxt] = 1.0
    else:
        P = rng.dirichlet(np.ones(S), size=(S, A))
        P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(0.0, 1.0, size=(S, A))
    return TabularMDP(P, R, gamma)


# ------------------------------------------------------------------ file IO


class MDPFormatError(ValueError):
    """Malformed MDP or representation file."""


def format_mdp(M: TabularMDP) -> str:
    lines = [f"{M.num_states} {M.num_actions} {M.gamma!r}"]
    for s in range(M.num_states):
        for a in range(M.num_actions):
            lines.append(" ".join([str(s), str(a), repr(float(M.R[s, a]))]
                                  + [repr(float(p)) for p in M.P[s, a]]))
    return "\n".join(lines) + "\n"


def parse_mdp(text: str) -> TabularMDP:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise MDPFormatError("empty MDP file")
    try:
        S, A, gamma = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
    except (IndexError, ValueError) as exc:
        raise MDPFormatError("header must be 'S A gamma'") from exc
    if len(rows) - 1 != S * A:
        raise MDPFormatError(f"expected {S * A} transition lines, found {len(rows) - 1}")
    P = np.full((S, A, S), np.nan)
    R = np.full((S, A), np.nan)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3 + S:
            raise MDPFormatError(f"line {lineno}: expected {3 + S} fields, got {len(row)}")
        try:
            s, a = int(row[0]), int(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise MDPFormatError(f"line {lineno}: {exc}") from exc
        if not (0 <= s < S and 0 <= a < A):
            raise MDPFormatError(f"line {lineno}: (s, a) = ({s}, {a}) out of range")
        if not np.isnan(R[s, a]):
            raise MDPFormatError(f"line {lineno}: duplicate entry for (s, a) = ({s}, {a})")
        R[s, a] = vals[0]
        P[s, a] = vals[1:]
    try:
        return TabularMDP(P, R, gamma)
    except ValueError as exc:
        raise MDPFormatError(str(exc)) from exc


def load_mdp(path: str | Path) -> TabularMDP:
    return parse_mdp(Path(path).read_text(encoding="utf-8"))


def save_mdp(path: str | Path, M: TabularMDP) -> None:
    Path(path).write_text(format_mdp(M), encoding="utf-8")


def parse_repmap(text: str, num_states: int | None = None) -> np.ndarray:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        Phi = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise MDPFormatError(f"representation file: {exc}") from exc
    if Phi.ndim != 2 or Phi.shape[0] == 0:
        raise MDPFormatError("representation rows must all have the same length d >= 1")
    if num_states is not None and Phi.shape[0] != num_states:
        raise MDPFormatError(f"representation has {Phi.shape[0]} rows, MDP has {num_states} states")
    if not np.isfinite(Phi).all():
        raise MDPFormatError("representation must be finite")
    return Phi


def load_repmap(path: str | Path, num_states: int | None = None) -> np.ndarray:
    return parse_repmap(Path(path).read_text(encoding="utf-8"), num_states)


def format_repmap(Phi: np.ndarray) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in np.atleast_2d(Phi))
