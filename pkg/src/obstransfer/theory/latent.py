"""Strictly linear latent models on a representation, their sufficiency errors,
and the latent MDP they induce."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from obstransfer.theory.mdp import TabularMDP
from obstransfer.theory.representation import ENUM_CAP, EnumerationCapError, as_repmap

PINV_RCOND = 1e-10


def pinv(A: np.ndarray) -> np.ndarray:
    """SVD pseudoinverse, singular values below 1e-10 * sigma_max dropped."""
    return np.linalg.pinv(np.asarray(A, dtype=np.float64), rcond=PINV_RCOND)


@dataclass
class TabularLatentModel:
    """P_hat[a] (d x d) maps phi(s) to the predicted next phi; R_hat[a] (d,)
    gives the reward as <R_hat[a], phi(s)>."""

    P_hat: np.ndarray
    R_hat: np.ndarray

    def __post_init__(self):
        self.P_hat = np.asarray(self.P_hat, dtype=np.float64)
        self.R_hat = np.asarray(self.R_hat, dtype=np.float64)
        A, d, d2 = self.P_hat.shape
        if d != d2 or self.R_hat.shape != (A, d):
            raise ValueError(f"inconsistent latent shapes {self.P_hat.shape}, {self.R_hat.shape}")

    @property
    def num_actions(self) -> int:
        return self.P_hat.shape[0]

    @property
    def dim(self) -> int:
        return self.P_hat.shape[1]

    def next_z(self, z: np.ndarray, a) -> np.ndarray:
        """Row-wise P_hat[a_i] z_i."""
        return np.einsum("nij,nj->ni", self.P_hat[a], z)

    def reward(self, z: np.ndarray, a) -> np.ndarray:
        return np.einsum("ni,ni->n", self.R_hat[a], z)


def fit_latent(M: TabularMDP, phi) -> TabularLatentModel:
    """Least-squares fit: Phi P_hat[a]^T ~ P_a Phi and Phi R_hat[a] ~ R_a."""
    Phi = as_repmap(phi).Phi
    Pp = pinv(Phi)
    P_hat = np.stack([(Pp @ M.P[:, a, :] @ Phi).T for a in range(M.num_actions)])
    R_hat = np.stack([Pp @ M.R[:, a] for a in range(M.num_actions)])
    return TabularLatentModel(P_hat, R_hat)


def model_sufficiency_eps(M: TabularMDP, phi, latent: TabularLatentModel) -> tuple[float, float]:
    """(eps_P, eps_R): worst transition error ||E phi(s') - P_hat_a phi(s)||_2
    and worst reward error |R(s, a) - <R_hat_a, phi(s)>| over all (s, a)."""
    Phi = as_repmap(phi).Phi
    S, d = Phi.shape
    if S != M.num_states or latent.dim != d or latent.num_actions != M.num_actions:
        raise ValueError("MDP, representation and latent model dimensions disagree")
    expected = np.einsum("sat,td->sad", M.P, Phi)
    predicted = np.einsum("aij,sj->sai", latent.P_hat, Phi)
    eps_P = float(np.linalg.norm(expected - predicted, axis=2).max())
    eps_R = float(np.abs(M.R - Phi @ latent.R_hat.T).max())
    return eps_P, eps_R


def latent_horizon(gamma: float, tol: float = 1e-12) -> int:
    return int(np.ceil(np.log(tol) / np.log(gamma)))


def latent_values(rep, latent: TabularLatentModel, class_actions: np.ndarray, gamma: float,
                  horizon: int | None = None) -> np.ndarray:
    """Value of each realized class centre in the latent MDP.

    Latent states evolve deterministically as z' = P_hat_a z with reward
    <R_hat_a, z>. ``class_actions`` (n_policies x C) defines latent policies
    on the realized centres; off the realized set a policy acts as at the
    nearest centre. Rollouts are truncated once gamma^t < 1e-12; diverging
    rollouts are reported as inf.
    """
    rep = as_repmap(rep)
    Z = rep.centers
    pols = np.atleast_2d(np.asarray(class_actions, dtype=np.int64))
    n, C = pols.shape
    H = latent_horizon(gamma) if horizon is None else horizon
    z = np.broadcast_to(Z, (n, C, Z.shape[1])).copy()
    V = np.zeros((n, C))
    disc = 1.0
    rows = np.arange(n)[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(H):
            dist = ((z[:, :, None, :] - Z[None, None, :, :]) ** 2).sum(axis=3)
            nearest = np.argmin(dist, axis=2)
            a = pols[rows, nearest]
            V += disc * np.einsum("pci,pci->pc", latent.R_hat[a], z)
            z = np.einsum("pcij,pcj->pci", latent.P_hat[a], z)
            disc *= gamma
    V[~np.isfinite(V)] = np.inf
    return V


def lipschitz_over_classes(values: np.ndarray, centers: np.ndarray) -> float:
    """max |v(c1) - v(c2)| / ||z_c1 - z_c2|| over class pairs; values (..., C)."""
    C = centers.shape[0]
    if C < 2:
        return 0.0
    i, j = np.triu_indices(C, 1)
    dist = np.linalg.norm(centers[i] - centers[j], axis=1)
    keep = dist > 0.0
    i, j, dist = i[keep], j[keep], dist[keep]
    diff = np.abs(values[..., i] - values[..., j])
    with np.errstate(invalid="ignore"):
        ratio = diff / dist
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    return float(ratio.max()) if ratio.size else 0.0


def value_lipschitz_constant(rep, latent: TabularLatentModel, gamma: float,
                             cap: int = ENUM_CAP) -> float:
    """K_{phi,V}: largest latent-value slope between realized representations
    over every deterministic latent policy on the realized classes."""
    rep = as_repmap(rep)
    A, C = latent.num_actions, rep.num_classes
    if A ** C > cap:
        raise EnumerationCapError(f"{A}^{C} latent policies exceed the cap {cap}")
    pols = np.array(list(itertools.product(range(A), repeat=C)), dtype=np.int64)
    worst = 0.0
    for start in range(0, len(pols), 512):
        V = latent_values(rep, latent, pols[start:start + 512], gamma)
        worst = max(worst, lipschitz_over_classes(V, rep.centers))
    return worst
