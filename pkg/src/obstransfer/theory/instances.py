"""Constructed MDP/representation instances used by the checks and tests."""
from __future__ import annotations

import numpy as np

from obstransfer.theory.mdp import TabularMDP


def random_labels(num_states: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Random surjective assignment of states to classes."""
    if not 1 <= num_classes <= num_states:
        raise ValueError("need 1 <= num_classes <= num_states")
    labels = np.concatenate([np.arange(num_classes),
                             rng.integers(num_classes, size=num_states - num_classes)])
    rng.shuffle(labels)
    return labels


def class_embedding(labels: np.ndarray, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Phi with row s = a random Gaussian vector shared by the class of s."""
    C = int(labels.max()) + 1
    return rng.normal(size=(C, dim))[labels]


def random_representation(num_states: int, rng: np.random.Generator, min_classes: int = 2,
                          max_classes: int = 4, dim: int = 2) -> np.ndarray:
    C = int(rng.integers(min_classes, min(max_classes, num_states) + 1))
    return class_embedding(random_labels(num_states, C, rng), dim, rng)


def lifted_mdp(labels: np.ndarray, num_actions: int, gamma: float, rng: np.random.Generator,
               deterministic: bool = True, reward_low: float = 0.0) -> TabularMDP:
    """Lift a random abstract MDP on the classes to the states.

    States of one class share rewards and the class-level successor
    distribution, so the class indicator is an exact (bisimulation)
    abstraction. Deterministic lifts send each (s, a) to one member of the
    successor class.
    """
    labels = np.asarray(labels)
    S, C, A = len(labels), int(labels.max()) + 1, num_actions
    members = [np.flatnonzero(labels == c) for c in range(C)]
    R_abs = rng.uniform(reward_low, 1.0, size=(C, A))
    P = np.zeros((S, A, S))
    if deterministic:
        nxt_abs = rng.integers(C, size=(C, A))
        for s in range(S):
            for a in range(A):
                P[s, a, rng.choice(members[nxt_abs[labels[s], a]])] = 1.0
    else:
        P_abs = rng.dirichlet(np.ones(C), size=(C, A))
        for s in range(S):
            for a in range(A):
                for c in range(C):
                    w = rng.dirichlet(np.ones(len(members[c])))
                    P[s, a, members[c]] = P_abs[labels[s], a, c] * w
        P /= P.sum(axis=2, keepdims=True)
    return TabularMDP(P, R_abs[labels], gamma)


def exact_fit_instance(num_states: int, num_classes: int, num_actions: int, gamma: float,
                       rng: np.random.Generator, dim: int | None = None
                       ) -> tuple[TabularMDP, np.ndarray]:
    """Deterministic MDP plus a representation with an exact linear latent model.

    Class centres are linearly independent (dim >= num_classes), so any
    class-level successor map and reward table is linear in phi.
    """
    dim = num_classes if dim is None else dim
    if dim < num_classes:
        raise ValueError("exact fit needs dim >= num_classes")
    labels = random_labels(num_states, num_classes, rng)
    M = lifted_mdp(labels, num_actions, gamma, rng, deterministic=True)
    while True:
        centers = rng.normal(size=(num_classes, dim))
        if np.linalg.matrix_rank(centers) == num_classes:
            break
    return M, centers[labels]


def prop1_counterexample(gamma: float = 0.9) -> tuple[TabularMDP, np.ndarray, np.ndarray]:
    """Four states in two classes phi = +1 / -1; action 0 stays, action 1
    switches class. Rewards are phi * (1, 0.5), so the latent model
    P_hat = (1, -1), R_hat = (1, 0.5) is exact. Returns (M, Phi, policy);
    the policy (stay on +1, switch on -1) has Q outside span(Phi)."""
    Phi = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    switch = [2, 3, 0, 1]
    P = np.zeros((4, 2, 4))
    for s in range(4):
        P[s, 0, s] = 1.0
        P[s, 1, switch[s]] = 1.0
    R = np.stack([Phi[:, 0] * 1.0, Phi[:, 0] * 0.5], axis=1)
    return TabularMDP(P, R, gamma), Phi, np.array([0, 0, 1, 1])


def lumpable_instance(num_states: int, num_classes: int, num_actions: int, gamma: float,
                      rng: np.random.Generator, deterministic: bool = False
                      ) -> tuple[TabularMDP, np.ndarray]:
    """Lifted MDP with Phi = class indicator matrix (full column rank)."""
    labels = random_labels(num_states, num_classes, rng)
    M = lifted_mdp(labels, num_actions, gamma, rng, deterministic=deterministic)
    return M, np.eye(num_classes)[labels]


def target_from_map(source: TabularMDP, f: np.ndarray, rng: np.random.Generator | None = None
                    ) -> TabularMDP:
    """Target MDP whose states map to source states through ``f``.

    Rewards are pulled back through f; each source successor s' is realized
    by one target preimage of s' (a fixed section of f, or a random one when
    ``rng`` is given), so f pushes target dynamics onto source dynamics.
    Only deterministic sources are supported.
    """
    f = np.asarray(f, dtype=np.int64)
    if not source.deterministic:
        raise ValueError("target construction needs a deterministic source MDP")
    T, A = len(f), source.num_actions
    pre = {s: np.flatnonzero(f == s) for s in range(source.num_states)}
    succ = source.P.argmax(axis=2)
    P = np.zeros((T, A, T))
    for t in range(T):
        for a in range(A):
            options = pre[int(succ[f[t], a])]
            if len(options) == 0:
                raise ValueError(f"source successor {succ[f[t], a]} has no target preimage; "
                                 "the image of f must be closed under the source dynamics")
            P[t, a, options[0] if rng is None else rng.choice(options)] = 1.0
    return TabularMDP(P, source.R[f], source.gamma)


def transfer_instance(num_core: int, num_classes: int, num_actions: int, gamma: float,
                      rng: np.random.Generator, copies: int = 2, extra: int = 2
                      ) -> tuple[TabularMDP, np.ndarray, np.ndarray]:
    """Source MDP with an exact latent model, plus a many-to-one,
    non-surjective map f from target states onto the first ``num_core``
    source states. The ``extra`` source states are never entered from the
    core, so f can skip them. Returns (source, Phi_source, f)."""
    M_core, Phi_core = exact_fit_instance(num_core, num_classes, num_actions, gamma, rng)
    S = num_core + extra
    P = np.zeros((S, num_actions, S))
    P[:num_core, :, :num_core] = M_core.P
    R = np.zeros((S, num_actions))
    R[:num_core] = M_core.R
    Phi = np.zeros((S, Phi_core.shape[1]))
    Phi[:num_core] = Phi_core
    for x in range(num_core, S):
        # copy the behaviour of a random core state: same class, same successors
        twin = int(rng.integers(num_core))
        P[x] = P[twin]
        R[x] = R[twin]
        Phi[x] = Phi_core[twin]
    source = TabularMDP(P, R, gamma)
    f = np.concatenate([np.arange(num_core)] * copies)
    f = np.concatenate([f, rng.integers(num_core, size=int(rng.integers(0, num_core + 1)))])
    rng.shuffle(f)
    return source, Phi, f
