"""Executable checks of the sufficiency results and error bounds on tabular
instances, plus the randomized batteries the CLI and tests run."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from obstransfer.theory.instances import (exact_fit_instance, lumpable_instance,
                                          random_representation, target_from_map,
                                          transfer_instance)
from obstransfer.theory.latent import (TabularLatentModel, fit_latent, lipschitz_over_classes,
                                       model_sufficiency_eps, pinv, value_lipschitz_constant)
from obstransfer.theory.mdp import (TabularMDP, bellman_optimality, greedy, optimal_q,
                                    policy_eval, random_mdp, values)
from obstransfer.theory.representation import (api_run, as_repmap, class_table,
                                               enumerate_encoded_policies, epsilon_sufficiency,
                                               lemma1_bound)

BOUND_SLACK = 1e-9
EXACT_TOL = 1e-10
LINEAR_TOL = 1e-8
RESIDUAL_TOL = 1e-9
AVI_TOL = 1e-12


class PreconditionError(ValueError):
    """The instance does not satisfy the hypotheses of the check."""


def _initial_policy(M: TabularMDP) -> np.ndarray:
    return np.zeros(M.num_states, dtype=np.int64)


# ---------------------------------------------------------------- Lemma 1


@dataclass
class Lemma1Report:
    gamma: float
    eps: float
    bound: float
    observed_gap: float
    holds: bool


def check_lemma1(M: TabularMDP, phi, K: int = 100) -> Lemma1Report:
    rep = as_repmap(phi)
    eps = epsilon_sufficiency(M, rep)
    gap = api_run(M, rep, _initial_policy(M), K).limsup_gap
    bound = lemma1_bound(M.gamma, eps)
    return Lemma1Report(M.gamma, eps, bound, gap, gap <= bound + BOUND_SLACK)


# ---------------------------------------------------------------- Theorem 1


def thm1_bound(gamma: float, eps_P: float, eps_R: float, K: float) -> float:
    lip = 0.0 if eps_P == 0.0 else gamma * eps_P * K  # 0 * inf counts as 0
    return 2.0 * gamma ** 2 / (1.0 - gamma) ** 3 * (eps_R + lip)


@dataclass
class Thm1Report:
    eps_P: float
    eps_R: float
    K_phi_V: float
    bound: float
    observed_gap: float
    holds: bool
    deterministic: bool


def check_thm1(M: TabularMDP, phi, latent: TabularLatentModel, K: int = 100) -> Thm1Report:
    """Model-error bound on the API gap. ``holds`` is only meaningful for
    deterministic M; stochastic instances are reported, not judged."""
    rep = as_repmap(phi)
    eps_P, eps_R = model_sufficiency_eps(M, rep, latent)
    Kv = value_lipschitz_constant(rep, latent, M.gamma)
    bound = thm1_bound(M.gamma, eps_P, eps_R, Kv)
    gap = api_run(M, rep, _initial_policy(M), K).limsup_gap
    return Thm1Report(eps_P, eps_R, Kv, bound, gap, gap <= bound + BOUND_SLACK, M.deterministic)


# ---------------------------------------------------------------- Proposition 1


def colspace_residual(Phi: np.ndarray, Q: np.ndarray) -> float:
    """Sup-norm distance of the columns of Q from span(Phi)."""
    return float(np.abs(Q - Phi @ (pinv(Phi) @ Q)).max())


@dataclass
class Prop1Report:
    eps_P: float
    eps_R: float
    eps: float
    sufficient: bool
    outside_colspace: bool
    worst_colspace_residual: float
    holds: bool


def check_prop1(M: TabularMDP, phi, latent: TabularLatentModel) -> Prop1Report:
    rep = as_repmap(phi)
    if not M.deterministic:
        raise PreconditionError("check_prop1 needs deterministic transitions")
    eps_P, eps_R = model_sufficiency_eps(M, rep, latent)
    if max(eps_P, eps_R) > EXACT_TOL:
        raise PreconditionError(f"latent model is not exact: eps_P={eps_P:.3g}, eps_R={eps_R:.3g}")
    eps = 0.0
    worst = 0.0
    for pol in enumerate_encoded_policies(rep, M.num_actions):
        Q = policy_eval(M, pol.per_state)
        eps = max(eps, float(np.abs(class_table(rep, Q)[rep.labels] - Q).max()))
        worst = max(worst, colspace_residual(rep.Phi, Q))
    sufficient = eps <= EXACT_TOL
    return Prop1Report(eps_P, eps_R, eps, sufficient, worst > LINEAR_TOL, worst, sufficient)


# ---------------------------------------------------------------- Proposition 2


@dataclass
class Prop2PolicyReport:
    class_actions: tuple[int, ...]
    residuals: dict[str, float]
    constraints_hold: bool
    value_error: float | None = None
    q_error: float | None = None


@dataclass
class Prop2Report:
    policies: list[Prop2PolicyReport] = field(default_factory=list)

    @property
    def violated(self) -> list[tuple[tuple[int, ...], str]]:
        return [(p.class_actions, k) for p in self.policies for k, v in p.residuals.items()
                if v >= RESIDUAL_TOL]

    @property
    def holds(self) -> bool:
        """Every policy meeting the constraints is linearly represented."""
        return all(p.value_error <= LINEAR_TOL and p.q_error <= LINEAR_TOL
                   for p in self.policies if p.constraints_hold)

    @property
    def all_constrained(self) -> bool:
        return all(p.constraints_hold for p in self.policies)


def check_prop2(M: TabularMDP, phi) -> Prop2Report:
    """Column convention: Phi P_hat ~ P Phi, Phi R_hat ~ R."""
    rep = as_repmap(phi)
    Phi = rep.Phi
    if np.linalg.matrix_rank(Phi) < Phi.shape[1]:
        raise PreconditionError("Phi must have full column rank")
    Pp = pinv(Phi)
    idx = np.arange(M.num_states)
    per_action = []
    res_a = {}
    for a in range(M.num_actions):
        P_a, R_a = M.P[:, a, :], M.R[:, a]
        Ph, Rh = Pp @ P_a @ Phi, Pp @ R_a
        per_action.append((Ph, Rh))
        res_a[f"P_{a}"] = float(np.abs(Phi @ Ph - P_a @ Phi).max())
        res_a[f"R_{a}"] = float(np.abs(Phi @ Rh - R_a).max())
    report = Prop2Report()
    gamma = M.gamma
    for pol in enumerate_encoded_policies(rep, M.num_actions):
        pi = pol.per_state
        P_pi, R_pi = M.P[idx, pi], M.R[idx, pi]
        Ph_pi, Rh_pi = Pp @ P_pi @ Phi, Pp @ R_pi
        res = {"P_pi": float(np.abs(Phi @ Ph_pi - P_pi @ Phi).max()),
               "R_pi": float(np.abs(Phi @ Rh_pi - R_pi).max()), **res_a}
        entry = Prop2PolicyReport(pol.class_actions, res, max(res.values()) < RESIDUAL_TOL)
        if entry.constraints_hold:
            omega = pinv(np.eye(Phi.shape[1]) - gamma * Ph_pi) @ Rh_pi
            Q = policy_eval(M, pi)
            entry.value_error = float(np.abs(values(Q, pi) - Phi @ omega).max())
            Q_lin = np.stack([Phi @ (Rh + gamma * Ph @ omega) for Ph, Rh in per_action], axis=1)
            entry.q_error = float(np.abs(Q - Q_lin).max())
        report.policies.append(entry)
    return report


# ---------------------------------------------------------------- Theorem 2


@dataclass
class Thm2Report:
    num_target_states: int
    surjective: bool
    eps_P: float
    eps_R: float
    eps: float
    api_gap: float
    holds: bool


def check_thm2_transfer(source: TabularMDP, f, phi_source, latent: TabularLatentModel,
                        rng: np.random.Generator | None = None, K: int = 100) -> Thm2Report:
    """Reuse the source representation and latent model on a target built
    from ``f``; the composed representation must stay exactly sufficient."""
    f = np.asarray(f, dtype=np.int64)
    rep_s = as_repmap(phi_source)
    if not source.deterministic:
        raise PreconditionError("source MDP must be deterministic")
    se = model_sufficiency_eps(source, rep_s, latent)
    if max(se) > EXACT_TOL:
        raise PreconditionError(f"source representation is not exactly model-sufficient: {se}")
    if f.ndim != 1 or len(f) == 0 or f.min() < 0 or f.max() >= source.num_states:
        raise PreconditionError("f must map every target state to a source state")
    target = target_from_map(source, f, rng)
    phi_t = as_repmap(rep_s.Phi[f])
    eps_P, eps_R = model_sufficiency_eps(target, phi_t, latent)
    eps = epsilon_sufficiency(target, phi_t)
    pi0 = (np.zeros(phi_t.num_classes, dtype=np.int64) if rng is None
           else rng.integers(target.num_actions, size=phi_t.num_classes))[phi_t.labels]
    gap = api_run(target, phi_t, pi0, K).gaps[-1]
    holds = max(eps_P, eps_R, eps, gap) <= EXACT_TOL
    surjective = len(np.unique(f)) == source.num_states
    return Thm2Report(len(f), surjective, eps_P, eps_R, eps, gap, holds)


# ---------------------------------------------------------------- AVI


@dataclass
class AVIReport:
    eps_P: float
    eps_R: float
    K_phi_h: float
    iterations: int
    step_errors: list[float]
    step_bound: float
    final_gap: float
    bound: float
    steps_hold: bool
    holds: bool
    deterministic: bool


def avi_run(M: TabularMDP, phi, c: float = 1.0, tol: float = AVI_TOL,
            max_iter: int = 20000) -> tuple[list[np.ndarray], list[float]]:
    """h_{k+1} = class-table fit of T* applied to h_k, from the constant h_0 = c.

    Returns the class tables h_0..h_n and the per-step fit errors
    ||H T* Q_k - T* Q_k||. The map is a gamma-contraction, so it converges.
    """
    rep = as_repmap(phi)
    h = np.full((rep.num_classes, M.num_actions), float(c))
    tables, errors = [h], []
    for _ in range(max_iter):
        TQ = bellman_optimality(M, h[rep.labels])
        nxt = class_table(rep, TQ)
        errors.append(float(np.abs(nxt[rep.labels] - TQ).max()))
        tables.append(nxt)
        if np.abs(nxt - h).max() <= tol:
            return tables, errors
        h = nxt
    raise RuntimeError("approximate value iteration did not converge")


def check_avi(M: TabularMDP, phi, latent: TabularLatentModel, c: float = 1.0) -> AVIReport:
    rep = as_repmap(phi)
    if (M.R < 0).any():
        raise PreconditionError("AVI bound needs nonnegative rewards")
    if c <= 0:
        raise PreconditionError("h_0 must be a positive constant")
    eps_P, eps_R = model_sufficiency_eps(M, rep, latent)
    tables, errors = avi_run(M, rep, c)
    K = max(lipschitz_over_classes(h.T, rep.centers) for h in tables)
    lip = 0.0 if eps_P == 0.0 else M.gamma * eps_P * K
    step_bound = eps_R + lip
    pi = greedy(tables[-1][rep.labels])
    Q_star = optimal_q(M)
    gap = float(np.abs(Q_star.max(axis=1) - values(policy_eval(M, pi), pi)).max())
    bound = 2.0 * step_bound / (1.0 - M.gamma) ** 2
    steps_hold = max(errors) <= step_bound + BOUND_SLACK
    return AVIReport(eps_P, eps_R, K, len(errors), errors, step_bound, gap, bound, steps_hold,
                     steps_hold and gap <= bound + BOUND_SLACK, M.deterministic)


# ---------------------------------------------------------------- random batteries


GAMMAS = (0.5, 0.9)


def _sizes(rng: np.random.Generator, min_states: int = 4) -> tuple[int, int]:
    return int(rng.integers(min_states, 9)), int(rng.integers(2, 4))


def random_lemma1_case(rng: np.random.Generator, i: int):
    S, A = _sizes(rng)
    M = random_mdp(S, A, GAMMAS[i % 2], rng)
    return M, random_representation(S, rng)


def random_thm1_case(rng: np.random.Generator, i: int):
    S, A = _sizes(rng)
    M = random_mdp(S, A, GAMMAS[i % 2], rng, deterministic=True)
    Phi = random_representation(S, rng)
    return M, Phi, fit_latent(M, Phi)


def random_prop1_case(rng: np.random.Generator, i: int):
    S, A = _sizes(rng)
    C = int(rng.integers(2, min(4, S) + 1))
    M, Phi = exact_fit_instance(S, C, A, GAMMAS[i % 2], rng)
    return M, Phi, fit_latent(M, Phi)


def random_prop2_case(rng: np.random.Generator, i: int):
    S, A = _sizes(rng)
    C = int(rng.integers(2, min(4, S) + 1))
    return lumpable_instance(S, C, A, GAMMAS[i % 2], rng, deterministic=bool(i % 3 == 0))


def random_thm2_case(rng: np.random.Generator, i: int):
    core, A = _sizes(rng, min_states=3)
    C = int(rng.integers(2, min(4, core) + 1))
    source, Phi, f = transfer_instance(core, C, A, GAMMAS[i % 2], rng,
                                       copies=int(rng.integers(1, 3)),
                                       extra=int(rng.integers(1, 3)))
    return source, f, Phi, fit_latent(source, Phi)


def random_avi_case(rng: np.random.Generator, i: int):
    S, A = _sizes(rng)
    M = random_mdp(S, A, GAMMAS[i % 2], rng)
    Phi = random_representation(S, rng)
    return M, Phi, fit_latent(M, Phi)


@dataclass
class BatteryResult:
    name: str
    total: int
    passed: int
    failures: list[int]
    reports: list = field(repr=False, default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def summary(self) -> dict:
        return {"check": self.name, "passed": self.passed, "total": self.total,
                "failures": self.failures}


def _battery(name: str, n: int, seed: int, make, judge) -> BatteryResult:
    # one child stream per instance so instance i is fixed by (seed, i)
    children = np.random.SeedSequence([seed, sum(map(ord, name))]).spawn(n)
    reports, failures = [], []
    for i, child in enumerate(children):
        rep = judge(*make(np.random.default_rng(child), i))
        reports.append(rep)
        if not rep.holds:
            failures.append(i)
    return BatteryResult(name, n, n - len(failures), failures, reports)


def battery_lemma1(n: int, seed: int) -> BatteryResult:
    return _battery("lemma1", n, seed, random_lemma1_case, check_lemma1)


def battery_thm1(n: int, seed: int) -> BatteryResult:
    return _battery("thm1", n, seed, random_thm1_case, check_thm1)


def battery_prop1(n: int, seed: int) -> BatteryResult:
    return _battery("prop1", n, seed, random_prop1_case, check_prop1)


def battery_prop2(n: int, seed: int) -> BatteryResult:
    return _battery("prop2", n, seed, random_prop2_case, check_prop2)


def battery_thm2(n: int, seed: int) -> BatteryResult:
    return _battery("thm2", n, seed, random_thm2_case,
                    lambda s, f, Phi, lat: check_thm2_transfer(s, f, Phi, lat))


def battery_avi(n: int, seed: int) -> BatteryResult:
    return _battery("avi", n, seed, random_avi_case, check_avi)


BATTERIES = {
    "lemma1": battery_lemma1,
    "thm1": battery_thm1,
    "prop1": battery_prop1,
    "prop2": battery_prop2,
    "thm2": battery_thm2,
    "avi": battery_avi,
}


def run_batteries(n: int, seed: int, names=None) -> list[BatteryResult]:
    return [BATTERIES[k](n, seed) for k in (names or BATTERIES)]


def report_dict(report) -> dict:
    return asdict(report)
