"""Representations of finite MDPs: state partitions, the class-table
approximation operator, encoded policies and approximate policy iteration."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from obstransfer.theory.mdp import TabularMDP, greedy, optimal_q, policy_eval

ROUND_DECIMALS = 12
ENUM_CAP = 100_000


class EnumerationCapError(ValueError):
    """Too many encoded policies to enumerate."""


@dataclass(frozen=True)
class RepMap:
    """Phi (S x d); states with equal rows (after rounding) form one class."""

    Phi: np.ndarray
    labels: np.ndarray
    centers: np.ndarray

    @classmethod
    def from_matrix(cls, Phi) -> "RepMap":
        Phi = np.atleast_2d(np.asarray(Phi, dtype=np.float64))
        if Phi.ndim != 2 or Phi.shape[0] == 0 or Phi.shape[1] == 0:
            raise ValueError("Phi must be a non-empty S x d matrix")
        if not np.isfinite(Phi).all():
            raise ValueError("Phi must be finite")
        rounded = np.round(Phi, ROUND_DECIMALS) + 0.0  # +0.0 folds -0.0 into 0.0
        seen: dict[bytes, int] = {}
        labels = np.empty(len(Phi), dtype=np.int64)
        first = []
        for s, row in enumerate(rounded):
            key = row.tobytes()
            if key not in seen:
                seen[key] = len(seen)
                first.append(s)
            labels[s] = seen[key]
        return cls(Phi, labels, Phi[first])

    @property
    def num_states(self) -> int:
        return self.Phi.shape[0]

    @property
    def dim(self) -> int:
        return self.Phi.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.centers)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


def as_repmap(phi) -> RepMap:
    return phi if isinstance(phi, RepMap) else RepMap.from_matrix(phi)


def class_table(phi, Q: np.ndarray) -> np.ndarray:
    """Per (class, action) midpoint of the min and max of Q over the class."""
    rep = as_repmap(phi)
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape[0] != rep.num_states:
        raise ValueError(f"Q has {Q.shape[0]} rows, representation has {rep.num_states}")
    h = np.empty((rep.num_classes, Q.shape[1]))
    for c in range(rep.num_classes):
        block = Q[rep.labels == c]
        h[c] = 0.5 * (block.min(axis=0) + block.max(axis=0))
    return h


def approx_operator(phi, Q: np.ndarray) -> tuple[np.ndarray, float]:
    """Best sup-norm fit of Q by a function of the representation.

    Returns the fitted table broadcast back to states and its sup-norm error.
    """
    rep = as_repmap(phi)
    Q_hat = class_table(rep, Q)[rep.labels]
    return Q_hat, float(np.abs(Q_hat - Q).max())


@dataclass(frozen=True)
class EncodedPolicy:
    """Deterministic policy that acts through the representation class."""

    class_actions: tuple[int, ...]
    labels: np.ndarray

    @property
    def per_state(self) -> np.ndarray:
        return np.asarray(self.class_actions, dtype=np.int64)[self.labels]

    @classmethod
    def from_states(cls, phi, policy) -> "EncodedPolicy":
        rep = as_repmap(phi)
        policy = np.asarray(policy, dtype=np.int64)
        if not is_encoded(rep, policy):
            raise ValueError("policy is not constant on representation classes")
        acts = tuple(int(policy[rep.members(c)[0]]) for c in range(rep.num_classes))
        return cls(acts, rep.labels)


def is_encoded(phi, policy) -> bool:
    rep = as_repmap(phi)
    policy = np.asarray(policy)
    return all(len(set(policy[rep.members(c)].tolist())) == 1 for c in range(rep.num_classes))


def count_encoded_policies(phi, num_actions: int) -> int:
    return num_actions ** as_repmap(phi).num_classes


def enumerate_encoded_policies(phi, num_actions: int, cap: int = ENUM_CAP) -> list[EncodedPolicy]:
    rep = as_repmap(phi)
    n = count_encoded_policies(rep, num_actions)
    if n > cap:
        raise EnumerationCapError(f"{num_actions}^{rep.num_classes} = {n} encoded policies "
                                  f"exceed the cap {cap}")
    return [EncodedPolicy(acts, rep.labels)
            for acts in itertools.product(range(num_actions), repeat=rep.num_classes)]


def epsilon_sufficiency(M: TabularMDP, phi, cap: int = ENUM_CAP) -> float:
    """Worst sup-norm approximation error of Q_pi over all encoded policies."""
    rep = as_repmap(phi)
    if rep.num_states != M.num_states:
        raise ValueError("representation and MDP disagree on the number of states")
    worst = 0.0
    for pol in enumerate_encoded_policies(rep, M.num_actions, cap):
        worst = max(worst, approx_operator(rep, policy_eval(M, pol.per_state))[1])
    return worst


@dataclass
class APIResult:
    policies: list[np.ndarray]
    q_values: list[np.ndarray]
    gaps: list[float]
    limsup_gap: float


def api_run(M: TabularMDP, phi, pi0, K: int = 100, Q_star: np.ndarray | None = None) -> APIResult:
    """Policy iteration with the class-table operator after each evaluation.

    ``limsup_gap`` is the largest ||Q* - Q_pi_k|| over k in [K/2, K]; API on
    a finite MDP settles into a cycle, so the tail maximum is its limsup.
    """
    rep = as_repmap(phi)
    pi = pi0.per_state if isinstance(pi0, EncodedPolicy) else np.asarray(pi0, dtype=np.int64)
    if pi.shape != (M.num_states,) or not is_encoded(rep, pi):
        raise ValueError("initial policy is not an encoded policy of this representation")
    if K < 1:
        raise ValueError("K must be >= 1")
    Q_star = optimal_q(M) if Q_star is None else Q_star
    policies, qs, gaps = [], [], []
    for k in range(K + 1):
        if not is_encoded(rep, pi):
            raise AssertionError(f"iterate {k} left the encoded policy set")
        Q_pi = policy_eval(M, pi)
        policies.append(pi)
        qs.append(Q_pi)
        gaps.append(float(np.abs(Q_star - Q_pi).max()))
        Q_k, _ = approx_operator(rep, Q_pi)
        pi = greedy(Q_k)
    return APIResult(policies, qs, gaps, max(gaps[K // 2:]))


def lemma1_bound(gamma: float, eps: float) -> float:
    return 2.0 * gamma ** 2 * eps / (1.0 - gamma) ** 2
