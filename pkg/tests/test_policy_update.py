import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epo.divergence import DomainError
from epo.policy_update import (
    exact_primal_policy,
    improvement_weights,
    pearson_equivalence_weights,
    tabular_policy_update,
)
from epo.proximal_core import DualSolution, solve_dual, solve_dual_exact
from epo.tabular_mdp import TabularMDP, TabularPolicy, TransitionBatch, build_chain, sample_batch, uniform_policy


def dual(lam, eta, V=(0.0,)):
    return DualSolution(np.array(V, dtype=float), lam, np.zeros(0), eta, 0.0)


def one_state_mdp(q):
    A = len(q)
    return TabularMDP(np.ones((1, A, 1)), np.array([q], dtype=float))


def arm_batch(actions, rewards):
    actions = np.asarray(actions)
    zeros = np.zeros(actions.size, dtype=int)
    return TransitionBatch(zeros, actions, rewards, zeros, n_states=1)


class TestWeights:
    def test_neutral(self):
        b = TransitionBatch.from_rewards([0.7, 0.7, 0.7])
        for alpha in [-2.0, 0.0, 1.0, 3.0]:
            np.testing.assert_allclose(improvement_weights(alpha, b, dual(0.7, 1.0)), 1.0)

    def test_kl_is_exponential(self):
        adv = np.array([0.3, -1.0, 2.0])
        w = improvement_weights(1.0, TransitionBatch.from_rewards(adv), dual(0.5, 2.0))
        np.testing.assert_allclose(w, np.exp((adv - 0.5) / 2.0), rtol=1e-15)

    def test_pearson_clipped(self):
        w = improvement_weights(2.0, TransitionBatch.from_rewards([-2.0, 0.0, 1.0]), dual(0.0, 1.0))
        np.testing.assert_array_equal(w, [0.0, 1.0, 2.0])

    def test_domain_violation_reports_sample(self):
        with pytest.raises(DomainError, match="sample 2"):
            improvement_weights(0.0, TransitionBatch.from_rewards([0.0, 0.2, 3.0]), dual(0.0, 1.0))

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=20), st.sampled_from([-3.0, 0.0, 0.5, 1.0, 2.0, 10.0]))
    def test_monotone_in_advantage(self, adv, alpha):
        b = TransitionBatch.from_rewards(adv)
        sol = solve_dual(alpha, b, 3.0, freeze_value=True)
        w = improvement_weights(alpha, b, sol)
        order = np.argsort(adv, kind="stable")
        assert np.all(np.diff(w[order]) >= -1e-12)
        assert np.all(w >= 0)


class TestTabularUpdate:
    def test_equal_weights_give_empirical_frequencies(self):
        b = sample_batch(build_chain(), uniform_policy(8, 2), 500, 0)
        pi = tabular_policy_update(uniform_policy(8, 2), b, np.ones(len(b)))
        counts = b.counts(2)
        visited = counts.sum(axis=1) > 0
        np.testing.assert_allclose(pi.probs[visited], (counts / counts.sum(axis=1, keepdims=True))[visited])

    def test_weighted_counts(self):
        b = arm_batch([0, 0, 1, 1], np.zeros(4))
        pi = tabular_policy_update(uniform_policy(1, 2), b, [2.0, 2.0, 1.0, 1.0])
        np.testing.assert_allclose(pi.probs[0], [2 / 3, 1 / 3])

    def test_unvisited_and_zero_mass_rows_kept(self):
        pi0 = TabularPolicy([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]])
        b = TransitionBatch([0, 1], [1, 0], [0.0, 0.0], [1, 0], n_states=3)
        pi = tabular_policy_update(pi0, b, [0.0, 3.0])
        np.testing.assert_array_equal(pi.probs[0], pi0.probs[0])
        np.testing.assert_array_equal(pi.probs[1], [1.0, 0.0])
        np.testing.assert_array_equal(pi.probs[2], pi0.probs[2])

    def test_weight_shape_checked(self):
        with pytest.raises(ValueError):
            tabular_policy_update(uniform_policy(1, 2), arm_batch([0], [0.0]), [1.0, 2.0])


class TestExactPrimal:
    def test_pearson_three_actions(self):
        m = one_state_mdp([1.0, 0.0, -1.0])
        pi0 = uniform_policy(1, 3)
        sol = solve_dual_exact(2.0, m, pi0, 10.0)
        np.testing.assert_allclose(exact_primal_policy(m, pi0, 2.0, sol).probs[0], [11 / 30, 10 / 30, 9 / 30], atol=1e-10)

    def test_kl_tilts_exponentially(self):
        q = np.array([0.5, -0.2, 1.3, 0.0])
        p0 = np.array([0.1, 0.2, 0.3, 0.4])
        m = one_state_mdp(q)
        pi0 = TabularPolicy(p0[None, :])
        sol = solve_dual_exact(1.0, m, pi0, 0.7)
        want = p0 * np.exp(q / 0.7)
        np.testing.assert_allclose(exact_primal_policy(m, pi0, 1.0, sol).probs[0], want / want.sum(), atol=1e-10)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
    def test_infinite_temperature_freezes(self, alpha):
        m = build_chain()
        pi0 = TabularPolicy(np.random.default_rng(0).dirichlet([1, 1], size=8))
        for eta in [1e3, 1e4]:
            pi = exact_primal_policy(m, pi0, alpha, solve_dual_exact(alpha, m, pi0, eta))
            assert np.abs(pi.probs - pi0.probs).max() < 50.0 / eta

    @pytest.mark.parametrize("alpha", [-1.0, 0.5, 1.0, 4.0])
    def test_rows_normalized(self, alpha):
        m = build_chain()
        pi = exact_primal_policy(m, uniform_policy(8, 2), alpha, solve_dual_exact(alpha, m, uniform_policy(8, 2), 3.0))
        np.testing.assert_allclose(pi.probs.sum(axis=1), 1.0, atol=1e-10)

    def test_weights_average_to_one_on_exact_model(self):
        from epo.proximal_core import DualProblem, _conj_args
        from epo.divergence import GeneratorSpec

        m = build_chain()
        pi0 = uniform_policy(8, 2)
        for alpha in [0.5, 2.0]:
            sol = solve_dual_exact(alpha, m, pi0, 4.0)
            p = DualProblem.from_model(m, pi0)
            y = _conj_args(GeneratorSpec(alpha), p.advantages(sol.value_table), sol.baseline_lambda, sol.eta)
            assert np.dot(p.weights, GeneratorSpec(alpha).f_star_prime(y)) == pytest.approx(1.0, abs=1e-4)

    def test_sparsity_direction(self):
        m = one_state_mdp([1.0, 0.0, -1.0])
        pi0 = uniform_policy(1, 3)
        for alpha in [2.0, 4.0, 10.0]:
            pi = exact_primal_policy(m, pi0, alpha, solve_dual_exact(alpha, m, pi0, 0.3))
            assert pi.probs[0, 2] == 0.0
        for alpha in [-2.0, 0.0, 0.5, 1.0]:
            pi = exact_primal_policy(m, pi0, alpha, solve_dual_exact(alpha, m, pi0, 0.3))
            assert np.all(pi.probs > 0)

    def test_sampled_update_converges_to_exact(self):
        q = np.array([1.0, 0.0, -1.0])
        m = one_state_mdp(q)
        pi0 = uniform_policy(1, 3)
        rng = np.random.default_rng(5)
        n = 100_000
        actions = rng.integers(0, 3, n)
        b = arm_batch(actions, q[actions])
        for alpha in [0.5, 2.0]:
            sol = solve_dual(alpha, b, 2.0)
            pi = tabular_policy_update(pi0, b, improvement_weights(alpha, b, sol))
            exact = exact_primal_policy(m, pi0, alpha, solve_dual_exact(alpha, m, pi0, 2.0))
            assert np.abs(pi.probs - exact.probs).max() < 0.02

    def test_zero_mass_state_rejected(self):
        m = one_state_mdp([1.0, 0.0])
        bad = DualSolution(np.zeros(1), 100.0, np.zeros(0), 1.0, 0.0)
        with pytest.raises(ValueError, match="zero mass"):
            exact_primal_policy(m, uniform_policy(1, 2), 2.0, bad)


class TestPearsonEquivalence:
    def test_example(self):
        b = TransitionBatch.from_rewards([1.0, 3.0])
        np.testing.assert_allclose(pearson_equivalence_weights(b, dual(2.0, 1.0)), [0.0, 2.0], atol=1e-15)

    def test_constant_advantages(self):
        b = TransitionBatch.from_rewards([4.0] * 5)
        np.testing.assert_array_equal(pearson_equivalence_weights(b, dual(4.0, 1.0)), 1.0)

    def test_proportional_when_eta_is_mean(self):
        b = TransitionBatch.from_rewards([2.0, 4.0])
        w = pearson_equivalence_weights(b, dual(3.0, 3.0))
        np.testing.assert_allclose(w / w.sum(), [2 / 6, 4 / 6], atol=1e-15)

    def test_clipping_rejected(self):
        with pytest.raises(ValueError, match="kappa"):
            pearson_equivalence_weights(TransitionBatch.from_rewards([0.0, 10.0]), dual(5.0, 1.0))

    def test_matches_solved_alpha_two(self):
        rng = np.random.default_rng(9)
        b = TransitionBatch.from_rewards(rng.standard_normal(50))
        sol = solve_dual(2.0, b, 20.0, freeze_value=True)
        np.testing.assert_allclose(
            pearson_equivalence_weights(b, sol), improvement_weights(2.0, b, sol), atol=1e-12
        )
