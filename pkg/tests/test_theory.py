import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obstransfer.theory.checks import (PreconditionError, avi_run, check_avi, check_lemma1,
                                       check_prop1, check_prop2, check_thm1,
                                       check_thm2_transfer, colspace_residual, run_batteries,
                                       thm1_bound)
from obstransfer.theory.instances import (exact_fit_instance, lumpable_instance,
                                          prop1_counterexample, random_representation,
                                          target_from_map, transfer_instance)
from obstransfer.theory.latent import (TabularLatentModel, fit_latent, latent_values,
                                       lipschitz_over_classes, model_sufficiency_eps)
from obstransfer.theory.mdp import (MDPFormatError, TabularMDP, format_mdp, format_repmap,
                                    greedy, load_mdp, optimal_q, parse_mdp, parse_repmap,
                                    policy_eval, policy_iteration, random_mdp, save_mdp,
                                    value_iteration, values)
from obstransfer.theory.representation import (EncodedPolicy, EnumerationCapError, RepMap,
                                               api_run, approx_operator, class_table,
                                               count_encoded_policies,
                                               enumerate_encoded_policies, epsilon_sufficiency,
                                               is_encoded, lemma1_bound)

seeds = st.integers(0, 2**32 - 1)


def rng_for(seed):
    return np.random.default_rng(seed)


def small_mdp(rng, deterministic=False, max_states=8):
    S, A = int(rng.integers(2, max_states + 1)), int(rng.integers(1, 4))
    return random_mdp(S, A, float(rng.choice([0.5, 0.9])), rng, deterministic=deterministic)


def iterative_q(M, pi, tol=1e-13):
    """Fixed-point iteration of the policy Bellman operator."""
    Q = np.zeros_like(M.R)
    idx = np.arange(M.num_states)
    while True:
        nxt = M.R + M.gamma * M.P @ Q[idx, pi]
        if np.abs(nxt - Q).max() <= tol:
            return nxt
        Q = nxt


def self_loop_mdp(R, gamma):
    S, A = R.shape
    P = np.zeros((S, A, S))
    P[np.arange(S), :, np.arange(S)] = 1.0
    return TabularMDP(P, R, gamma)


# ---------------------------------------------------------------- exact solvers

def test_single_state_value_is_geometric_series():
    M = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    np.testing.assert_allclose(policy_eval(M, [0]), [[2.0]], rtol=0, atol=1e-14)


def test_zero_rewards_give_zero_q():
    rng = rng_for(3)
    M = random_mdp(5, 2, 0.9, rng)
    M = TabularMDP(M.P, np.zeros_like(M.R), 0.9)
    np.testing.assert_array_equal(policy_eval(M, np.zeros(5, dtype=int)), 0.0)


def test_policy_eval_matches_fixed_point_iteration():
    rng = rng_for(11)
    for _ in range(50):
        M = small_mdp(rng)
        pi = rng.integers(M.num_actions, size=M.num_states)
        np.testing.assert_allclose(policy_eval(M, pi), iterative_q(M, pi), rtol=0, atol=1e-10)


def test_policy_eval_rejects_bad_policy():
    M = random_mdp(3, 2, 0.9, rng_for(0))
    with pytest.raises(ValueError):
        policy_eval(M, [0, 2, 0])
    with pytest.raises(ValueError):
        policy_eval(M, [0, 1])


def test_policy_and_value_iteration_agree():
    rng = rng_for(12)
    for _ in range(100):
        M = small_mdp(rng)
        pi, Q = policy_iteration(M)
        np.testing.assert_allclose(value_iteration(M), Q, rtol=0, atol=1e-8)
        np.testing.assert_array_equal(pi, greedy(Q))


def test_two_state_chain_moves_toward_reward():
    # action 0 stays, action 1 switches; reward only in state 1
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = P[0, 1, 1] = P[1, 1, 0] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    pi, Q = policy_iteration(TabularMDP(P, R, 0.9))
    np.testing.assert_array_equal(pi, [1, 0])
    np.testing.assert_allclose(Q[1, 0], 10.0, atol=1e-10)


def test_greedy_ties_go_to_lowest_action():
    np.testing.assert_array_equal(greedy(np.array([[1.0, 1.0], [0.0, 2.0], [3.0, 3.0]])), [0, 1, 0])


@pytest.mark.parametrize("P, R, gamma", [
    (np.ones((2, 1, 2)), np.zeros((2, 1)), 0.9),         # rows sum to 2
    (np.full((1, 1, 1), 1.0), np.zeros((1, 1)), 1.0),    # gamma outside (0, 1)
    (np.ones((1, 1, 1)), np.zeros((2, 1)), 0.5),         # R shape
    (-np.ones((1, 1, 1)), np.zeros((1, 1)), 0.5),        # negative probability
])
def test_mdp_validation(P, R, gamma):
    with pytest.raises(ValueError):
        TabularMDP(P, R, gamma)


# ---------------------------------------------------------------- representation

def test_repmap_partitions_equal_rows():
    rep = RepMap.from_matrix([[1.0, 0.0], [0.0, 1.0], [1.0, 1e-14], [-0.0, 1.0]])
    np.testing.assert_array_equal(rep.labels, [0, 1, 0, 1])
    assert rep.num_classes == 2 and rep.dim == 2


@pytest.mark.parametrize("Phi", [np.zeros((0, 2)), [[np.nan]], [[np.inf, 1.0]]])
def test_repmap_rejects_bad_matrices(Phi):
    with pytest.raises(ValueError):
        RepMap.from_matrix(Phi)


def test_approx_operator_injective_is_exact():
    Q = rng_for(1).normal(size=(5, 3))
    Q_hat, err = approx_operator(np.eye(5), Q)
    np.testing.assert_array_equal(Q_hat, Q)
    assert err == 0.0


def test_approx_operator_midpoint():
    Q_hat, err = approx_operator([[1.0], [1.0]], np.array([[0.0], [2.0]]))
    np.testing.assert_array_equal(Q_hat, [[1.0], [1.0]])
    assert err == 1.0


def grid_fit_error(Q, labels):
    """Best class-constant sup error by coarse grid search then a 1e-6 refinement."""
    worst = 0.0
    for c in np.unique(labels):
        for a in range(Q.shape[1]):
            col = Q[labels == c, a]
            grid = np.arange(col.min() - 0.01, col.max() + 0.01, 1e-3)
            errs = np.abs(grid[:, None] - col[None]).max(axis=1)
            centre = grid[errs.argmin()]
            fine = centre + np.arange(-1e-3, 1e-3, 1e-6)
            worst = max(worst, np.abs(fine[:, None] - col[None]).max(axis=1).min())
    return worst


@given(seeds)
def test_approx_operator_error_matches_grid_search(seed):
    rng = rng_for(seed)
    Phi = random_representation(4, rng)
    Q = rng.uniform(-2, 2, size=(4, 2))
    _, err = approx_operator(Phi, Q)
    assert abs(err - grid_fit_error(Q, RepMap.from_matrix(Phi).labels)) <= 1e-6


@given(seeds)
def test_approx_operator_is_idempotent(seed):
    rng = rng_for(seed)
    S = int(rng.integers(2, 9))
    Phi = random_representation(S, rng)
    Q_hat, _ = approx_operator(Phi, rng.normal(size=(S, 3)))
    again, err = approx_operator(Phi, Q_hat)
    np.testing.assert_array_equal(again, Q_hat)
    assert err == 0.0


def test_class_table_row_mismatch():
    with pytest.raises(ValueError):
        class_table(np.eye(3), np.zeros((4, 2)))


def test_enumeration_counts():
    two_classes = [[0.0], [1.0], [0.0]]
    pols = enumerate_encoded_policies(two_classes, 2)
    assert len(pols) == count_encoded_policies(two_classes, 2) == 4
    assert len(enumerate_encoded_policies(np.eye(3), 2)) == 2 ** 3
    assert {p.per_state.tobytes() for p in enumerate_encoded_policies(np.eye(3), 2)} == {
        np.array(p, dtype=np.int64).tobytes() for p in itertools.product(range(2), repeat=3)}
    for p in pols:
        assert is_encoded(two_classes, p.per_state)
        assert p.per_state[0] == p.per_state[2]


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError):
        enumerate_encoded_policies(np.eye(10), 3, cap=1000)
    with pytest.raises(EnumerationCapError):
        epsilon_sufficiency(random_mdp(10, 3, 0.9, rng_for(0)), np.eye(10), cap=1000)


def test_encoded_policy_from_states():
    phi = [[0.0], [1.0], [0.0]]
    assert EncodedPolicy.from_states(phi, [2, 1, 2]).class_actions == (2, 1)
    with pytest.raises(ValueError):
        EncodedPolicy.from_states(phi, [0, 1, 2])


@given(seeds)
def test_injective_representation_is_exactly_sufficient(seed):
    M = small_mdp(rng_for(seed), max_states=6)
    assert epsilon_sufficiency(M, np.eye(M.num_states)) == 0.0


def test_merging_states_with_different_q_is_not_sufficient():
    M = self_loop_mdp(np.array([[0.0], [1.0]]), 0.5)
    assert epsilon_sufficiency(M, [[1.0], [1.0]]) > 0.0


def test_epsilon_sufficiency_hand_computed():
    # self loops: Q_pi(s, a) = R[s, a] + gamma R[s, pi(s)] / (1 - gamma)
    R = np.array([[0.0, 1.0], [0.5, 0.2], [1.0, 0.0], [0.3, 0.3]])
    gamma = 0.5
    M = self_loop_mdp(R, gamma)
    groups = [[0, 1], [2, 3]]
    expected = 0.0
    for acts in itertools.product(range(2), repeat=2):
        for g, act in zip(groups, acts):
            for a in range(2):
                q = [R[s, a] + gamma * R[s, act] / (1 - gamma) for s in g]
                expected = max(expected, abs(q[0] - q[1]) / 2)
    phi = [[1.0], [1.0], [2.0], [2.0]]
    assert epsilon_sufficiency(M, phi) == pytest.approx(expected, abs=1e-12)


def test_api_injective_is_exact_policy_iteration():
    M = random_mdp(6, 3, 0.9, rng_for(4))
    res = api_run(M, np.eye(6), np.zeros(6, dtype=int), K=20)
    assert res.gaps[-1] <= 1e-10 and res.limsup_gap <= 1e-10


@given(seeds)
def test_api_iterates_stay_encoded(seed):
    rng = rng_for(seed)
    M = small_mdp(rng)
    Phi = random_representation(M.num_states, rng)
    pi0 = rng.integers(M.num_actions, size=RepMap.from_matrix(Phi).num_classes)
    res = api_run(M, Phi, EncodedPolicy(tuple(pi0), RepMap.from_matrix(Phi).labels), K=20)
    assert len(res.policies) == 21
    assert all(is_encoded(Phi, p) for p in res.policies)


def test_api_rejects_unencoded_start():
    M = random_mdp(3, 2, 0.9, rng_for(0))
    with pytest.raises(ValueError):
        api_run(M, [[0.0], [0.0], [1.0]], [0, 1, 0])
    with pytest.raises(ValueError):
        api_run(M, np.eye(3), [0, 0, 0], K=0)


def test_lemma1_bound_holds_on_random_instances():
    rng = rng_for(5)
    for i in range(30):
        M = random_mdp(int(rng.integers(3, 9)), int(rng.integers(2, 4)), (0.5, 0.9)[i % 2], rng)
        rep = check_lemma1(M, random_representation(M.num_states, rng))
        assert rep.holds, rep
        assert rep.bound == lemma1_bound(M.gamma, rep.eps)


# ---------------------------------------------------------------- latent models

@given(seeds)
def test_exact_fit_gives_zero_model_error(seed):
    rng = rng_for(seed)
    M, Phi = exact_fit_instance(int(rng.integers(3, 9)), 2, 2, 0.9, rng)
    eps_P, eps_R = model_sufficiency_eps(M, Phi, fit_latent(M, Phi))
    assert eps_P <= 1e-10 and eps_R <= 1e-10


def test_zero_reward_model_error_is_max_reward():
    rng = rng_for(6)
    M = random_mdp(4, 2, 0.9, rng)
    R = M.R / np.abs(M.R).max()
    M = TabularMDP(M.P, R, 0.9)
    Phi = rng.normal(size=(4, 3))
    Phi /= np.linalg.norm(Phi, axis=1, keepdims=True)
    latent = TabularLatentModel(np.zeros((2, 3, 3)), np.zeros((2, 3)))
    assert model_sufficiency_eps(M, Phi, latent)[1] == 1.0


def brute_model_error(M, Phi, latent):
    eps_P = eps_R = 0.0
    for s in range(M.num_states):
        for a in range(M.num_actions):
            mean_next = sum(M.P[s, a, t] * Phi[t] for t in range(M.num_states))
            eps_P = max(eps_P, float(np.sqrt(((mean_next - latent.P_hat[a] @ Phi[s]) ** 2).sum())))
            eps_R = max(eps_R, abs(M.R[s, a] - float(latent.R_hat[a] @ Phi[s])))
    return eps_P, eps_R


@given(seeds)
def test_model_error_matches_brute_force(seed):
    rng = rng_for(seed)
    M = small_mdp(rng)
    d = int(rng.integers(1, 4))
    Phi = rng.normal(size=(M.num_states, d))
    latent = TabularLatentModel(rng.normal(size=(M.num_actions, d, d)),
                                rng.normal(size=(M.num_actions, d)))
    np.testing.assert_allclose(model_sufficiency_eps(M, Phi, latent),
                               brute_model_error(M, Phi, latent), rtol=1e-12, atol=1e-12)


def test_model_error_dimension_checks():
    M = random_mdp(3, 2, 0.9, rng_for(0))
    with pytest.raises(ValueError):
        model_sufficiency_eps(M, np.eye(3), TabularLatentModel(np.zeros((2, 2, 2)), np.zeros((2, 2))))
    with pytest.raises(ValueError):
        TabularLatentModel(np.zeros((2, 2, 2)), np.zeros((2, 3)))


def test_latent_values_geometric():
    # z' = 0.5 z, reward z: V(1) = sum (0.5 gamma)^t
    latent = TabularLatentModel(np.full((1, 1, 1), 0.5), np.ones((1, 1)))
    V = latent_values([[1.0], [2.0]], latent, [[0, 0]], 0.9)
    np.testing.assert_allclose(V, [[1 / (1 - 0.45), 2 / (1 - 0.45)]], rtol=1e-10)


def test_latent_values_report_divergence_as_inf():
    latent = TabularLatentModel(np.full((1, 1, 1), 1e200), np.ones((1, 1)))
    assert np.isinf(latent_values([[1.0]], latent, [[0]], 0.9)).all()


def test_lipschitz_over_classes():
    centers = np.array([[0.0], [1.0], [3.0]])
    assert lipschitz_over_classes(np.array([0.0, 2.0, 3.0]), centers) == 2.0
    assert lipschitz_over_classes(np.array([5.0]), centers[:1]) == 0.0


def test_thm1_exact_latent_is_zero_case():
    rng = rng_for(7)
    M, Phi = exact_fit_instance(6, 3, 2, 0.9, rng)
    rep = check_thm1(M, Phi, fit_latent(M, Phi))
    assert rep.eps_P <= 1e-10 and rep.eps_R <= 1e-10
    assert rep.observed_gap <= 1e-9 and rep.holds


def test_thm1_bound_zero_times_inf_counts_as_zero():
    assert thm1_bound(0.9, 0.0, 0.0, np.inf) == 0.0
    assert thm1_bound(0.5, 0.1, 0.2, 1.0) == pytest.approx(2 * 0.25 / 0.125 * (0.2 + 0.05))


@given(seeds, st.floats(1e-3, 1.0))
def test_reward_perturbation_moves_eps_r_by_at_most_delta_norm(seed, delta):
    rng = rng_for(seed)
    M = small_mdp(rng, deterministic=True)
    Phi = rng.normal(size=(M.num_states, 2))
    latent = fit_latent(M, Phi)
    u = rng.normal(size=latent.R_hat.shape)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    bumped = TabularLatentModel(latent.P_hat, latent.R_hat + delta * u)
    before = model_sufficiency_eps(M, Phi, latent)[1]
    after = model_sufficiency_eps(M, Phi, bumped)[1]
    assert abs(after - before) <= delta * np.linalg.norm(Phi, axis=1).max() + 1e-12


def test_thm1_holds_on_random_deterministic_instances():
    rng = rng_for(8)
    for _ in range(15):
        M = small_mdp(rng, deterministic=True)
        Phi = random_representation(M.num_states, rng)
        rep = check_thm1(M, Phi, fit_latent(M, Phi))
        assert rep.deterministic and rep.holds, rep


# ---------------------------------------------------------------- sufficiency propositions

def test_prop1_counterexample_is_sufficient_but_not_linear():
    M, Phi, pi = prop1_counterexample()
    latent = TabularLatentModel(np.array([[[1.0]], [[-1.0]]]), np.array([[1.0], [0.5]]))
    assert model_sufficiency_eps(M, Phi, latent) == (0.0, 0.0)
    rep = check_prop1(M, Phi, latent)
    assert rep.sufficient and rep.holds and rep.outside_colspace
    # the named policy alone already leaves span(Phi): rank test
    Q = policy_eval(M, pi)
    assert np.linalg.matrix_rank(np.column_stack([Phi, Q[:, 0]])) == 2
    assert colspace_residual(Phi, Q) > 1e-8


def test_prop1_injective_holds():
    rng = rng_for(9)
    M = random_mdp(4, 2, 0.9, rng, deterministic=True)
    rep = check_prop1(M, np.eye(4), fit_latent(M, np.eye(4)))
    assert rep.holds and not rep.outside_colspace


def test_prop1_random_exact_fits_are_sufficient():
    rng = rng_for(10)
    for _ in range(20):
        M, Phi = exact_fit_instance(int(rng.integers(3, 8)), 2, 2, 0.9, rng)
        assert check_prop1(M, Phi, fit_latent(M, Phi)).eps <= 1e-10


def test_prop1_preconditions():
    rng = rng_for(0)
    M = random_mdp(4, 2, 0.9, rng)
    with pytest.raises(PreconditionError):
        check_prop1(M, np.eye(4), fit_latent(M, np.eye(4)))
    D = random_mdp(4, 2, 0.9, rng, deterministic=True)
    with pytest.raises(PreconditionError):
        check_prop1(D, np.eye(4), TabularLatentModel(np.zeros((2, 4, 4)), np.zeros((2, 4))))


def test_prop2_identity_representation():
    M = random_mdp(4, 2, 0.9, rng_for(1))
    rep = check_prop2(M, np.eye(4))
    assert rep.all_constrained and rep.holds and not rep.violated


@pytest.mark.parametrize("deterministic", [False, True])
def test_prop2_lumpable_instance(deterministic):
    M, Phi = lumpable_instance(7, 3, 2, 0.9, rng_for(2), deterministic=deterministic)
    rep = check_prop2(M, Phi)
    assert rep.all_constrained and rep.holds


def test_prop2_flags_perturbed_dynamics():
    M, Phi = lumpable_instance(6, 2, 2, 0.9, rng_for(3))
    labels = Phi.argmax(axis=1)
    s = 0
    other = np.flatnonzero(labels != labels[s])[0]
    P = M.P.copy()
    P[s, 1] = 0.0
    P[s, 1, other] = 1.0
    # make the class-level successor of s under action 1 differ from its classmates
    mates = np.flatnonzero(labels == labels[s])
    if len(mates) == 1 or np.allclose(M.P[mates[1], 1] @ Phi, P[s, 1] @ Phi):
        P[s, 1] = 0.0
        P[s, 1, s] = 1.0
    rep = check_prop2(TabularMDP(P, M.R, 0.9), Phi)
    assert ("P_1" in {k for _, k in rep.violated})
    assert not rep.all_constrained


def test_prop2_rank_deficient():
    with pytest.raises(PreconditionError):
        check_prop2(random_mdp(3, 2, 0.9, rng_for(0)), [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])


# ---------------------------------------------------------------- transfer

def test_thm2_identity_map():
    rng = rng_for(4)
    M, Phi = exact_fit_instance(5, 2, 2, 0.9, rng)
    rep = check_thm2_transfer(M, np.arange(5), Phi, fit_latent(M, Phi))
    assert rep.holds and rep.surjective


def check_target_construction(source, f, target):
    """f pushes target dynamics and rewards onto the source ones."""
    succ_s = source.P.argmax(axis=2)
    succ_t = target.P.argmax(axis=2)
    assert target.deterministic
    np.testing.assert_array_equal(f[succ_t], succ_s[f])
    np.testing.assert_array_equal(target.R, source.R[f])


def test_thm2_many_to_one_map():
    rng = rng_for(5)
    M, Phi = exact_fit_instance(4, 2, 2, 0.9, rng)
    f = np.repeat(np.arange(4), 2)
    check_target_construction(M, f, target_from_map(M, f))
    rep = check_thm2_transfer(M, f, Phi, fit_latent(M, Phi))
    assert rep.holds and rep.num_target_states == 8
    assert max(rep.eps_P, rep.eps_R) <= 1e-10


def test_thm2_non_surjective_map():
    rng = rng_for(6)
    source, Phi, f = transfer_instance(4, 2, 2, 0.9, rng, copies=1, extra=2)
    check_target_construction(source, f, target_from_map(source, f))
    rep = check_thm2_transfer(source, f, Phi, fit_latent(source, Phi))
    assert rep.holds and not rep.surjective


@given(seeds)
def test_thm2_zero_model_error_for_many_to_one_maps(seed):
    rng = rng_for(seed)
    source, Phi, f = transfer_instance(int(rng.integers(3, 7)), 2, 2, 0.9, rng,
                                       copies=int(rng.integers(1, 4)))
    rep = check_thm2_transfer(source, f, Phi, fit_latent(source, Phi), rng=rng)
    assert rep.eps_P <= 1e-10 and rep.eps_R <= 1e-10 and rep.holds


def test_thm2_preconditions():
    rng = rng_for(7)
    M, Phi = exact_fit_instance(4, 2, 2, 0.9, rng)
    lat = fit_latent(M, Phi)
    with pytest.raises(PreconditionError):
        check_thm2_transfer(M, np.array([0, 4]), Phi, lat)
    with pytest.raises(PreconditionError):
        check_thm2_transfer(M, np.arange(4), Phi, TabularLatentModel(lat.P_hat, lat.R_hat + 1.0))
    S = random_mdp(4, 2, 0.9, rng)
    with pytest.raises(PreconditionError):
        check_thm2_transfer(S, np.arange(4), np.eye(4), fit_latent(S, np.eye(4)))


def test_target_needs_closed_image():
    M = TabularMDP(np.array([[[0.0, 1.0]], [[0.0, 1.0]]]), np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        target_from_map(M, np.array([0]))


# ---------------------------------------------------------------- approximate value iteration

def test_avi_injective_is_exact():
    M = random_mdp(5, 2, 0.9, rng_for(8))
    rep = check_avi(M, np.eye(5), fit_latent(M, np.eye(5)))
    assert rep.final_gap <= 1e-9 and rep.holds


@given(seeds)
def test_avi_per_step_error_within_bound(seed):
    rng = rng_for(seed)
    M = small_mdp(rng)
    Phi = random_representation(M.num_states, rng)
    rep = check_avi(M, Phi, fit_latent(M, Phi))
    assert max(rep.step_errors) <= rep.step_bound + 1e-9
    assert rep.final_gap <= rep.bound + 1e-9


def test_avi_tables_contract():
    rng = rng_for(9)
    M = random_mdp(6, 2, 0.5, rng)
    tables, errors = avi_run(M, random_representation(6, rng))
    assert len(tables) == len(errors) + 1
    diffs = [np.abs(b - a).max() for a, b in zip(tables[:-1], tables[1:])]
    for d0, d1 in zip(diffs[:-1], diffs[1:]):
        assert d1 <= 0.5 * d0 + 1e-15


def test_avi_preconditions():
    M = random_mdp(3, 2, 0.9, rng_for(0))
    neg = TabularMDP(M.P, -M.R, 0.9)
    with pytest.raises(PreconditionError):
        check_avi(neg, np.eye(3), fit_latent(neg, np.eye(3)))
    with pytest.raises(PreconditionError):
        check_avi(M, np.eye(3), fit_latent(M, np.eye(3)), c=0.0)


# ---------------------------------------------------------------- batteries and files

def test_batteries_small_run():
    results = run_batteries(5, seed=1)
    assert [r.name for r in results] == ["lemma1", "thm1", "prop1", "prop2", "thm2", "avi"]
    for r in results:
        assert r.ok, r.summary()
        assert r.summary()["total"] == 5


def test_battery_is_reproducible():
    a = run_batteries(3, seed=2, names=["lemma1"])[0]
    b = run_batteries(3, seed=2, names=["lemma1"])[0]
    assert [r.observed_gap for r in a.reports] == [r.observed_gap for r in b.reports]


@given(seeds)
def test_mdp_text_round_trip(seed):
    M = small_mdp(rng_for(seed))
    back = parse_mdp(format_mdp(M))
    np.testing.assert_array_equal(back.P, M.P)
    np.testing.assert_array_equal(back.R, M.R)
    assert back.gamma == M.gamma


def test_mdp_file_round_trip(tmp_path):
    M = random_mdp(3, 2, 0.9, rng_for(0))
    save_mdp(tmp_path / "m.txt", M)
    np.testing.assert_array_equal(load_mdp(tmp_path / "m.txt").P, M.P)


def test_parse_mdp_with_comments():
    M = parse_mdp("# tiny\n1 1 0.5\n0 0 1.0 1.0\n")
    np.testing.assert_allclose(optimal_q(M), [[2.0]])


@pytest.mark.parametrize("text, msg", [
    ("", "empty"),
    ("1 x 0.5\n", "header"),
    ("1 1 0.5\n", "expected 1 transition"),
    ("1 1 0.5\n0 0 1.0\n", "fields"),
    ("1 1 0.5\n0 1 1.0 1.0\n", "out of range"),
    ("2 1 0.5\n0 0 1 1 0\n0 0 1 1 0\n", "duplicate"),
    ("1 1 0.5\n0 0 1.0 0.7\n", "probability"),
    ("1 1 0.5\n0 0 a 1.0\n", "line 2"),
])
def test_parse_mdp_errors(text, msg):
    with pytest.raises(MDPFormatError, match=msg):
        parse_mdp(text)


def test_repmap_text_round_trip():
    Phi = rng_for(0).normal(size=(4, 3))
    np.testing.assert_array_equal(parse_repmap(format_repmap(Phi), 4), Phi)


@pytest.mark.parametrize("text, n", [("1 2\n3\n", None), ("1\n2\n", 3), ("nan\n", None),
                                     ("a b\n", None), ("", None)])
def test_parse_repmap_errors(text, n):
    with pytest.raises(MDPFormatError):
        parse_repmap(text, n)


def test_values_picks_policy_column():
    np.testing.assert_array_equal(values(np.array([[1.0, 2.0], [3.0, 4.0]]), [1, 0]), [2.0, 3.0])
