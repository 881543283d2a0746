"""scikit-learn style wrappers around the dual critic and the policy-iteration loop.

Transition data is passed as an (n, 4) array with columns (s, a, r, s').
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .divergence import GeneratorSpec
from .policy_update import improvement_weights, tabular_policy_update
from .proximal_core import TemperatureSchedule, dual_objective, solve_dual, solve_dual_with_epsilon
from .tabular_mdp import TabularMDP, TransitionBatch, sample_batch, uniform_policy

__all__ = ["DualCritic", "ProximalPolicyIteration"]


def _batch(X, n_states=None):
    X = check_array(X, dtype=float)
    if X.shape[1] != 4:
        raise ValueError(f"expected 4 columns (s, a, r, s'), got {X.shape[1]}")
    return TransitionBatch.from_array(X, n_states=n_states)


class DualCritic(TransformerMixin, BaseEstimator):
    """Fit V and lambda by minimizing the sample dual; transform to improvement weights.

    With ``epsilon`` set, the temperature is optimized too and ``eta`` is
    only the starting point of that search.
    """

    def __init__(self, alpha=1.0, eta=1.0, epsilon=None, n_states=None, tol=1e-8, max_iter=5000):
        self.alpha = alpha
        self.eta = eta
        self.epsilon = epsilon
        self.n_states = n_states
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        batch = _batch(X, self.n_states)
        spec = GeneratorSpec(self.alpha)
        if self.epsilon is None:
            dual = solve_dual(spec, batch, self.eta, tol=self.tol, max_iters=self.max_iter)
        else:
            dual = solve_dual_with_epsilon(
                spec, batch, self.epsilon, eta0=self.eta, tol=self.tol, max_iters=self.max_iter
            )
        self.dual_ = dual
        self.value_table_ = dual.value_table
        self.baseline_ = dual.baseline_lambda
        self.eta_ = dual.eta
        self.n_states_ = batch.n_states
        return self

    def transform(self, X):
        """Per-sample weights f*'(y_t), as an (n, 1) column."""
        check_is_fitted(self, "dual_")
        batch = _batch(X, self.n_states_)
        return improvement_weights(GeneratorSpec(self.alpha), batch, self.dual_)[:, None]

    def score(self, X, y=None):
        """Negative dual objective at the fitted (V, lambda); higher is better."""
        check_is_fitted(self, "dual_")
        batch = _batch(X, self.n_states_)
        return -dual_objective(
            GeneratorSpec(self.alpha), batch, self.value_table_, self.baseline_, self.eta_
        )


class ProximalPolicyIteration(BaseEstimator):
    """Sample, evaluate, reweight, repeat on a tabular MDP.

    ``fit`` takes the environment itself; ``predict`` maps states to greedy
    actions of the learned policy.
    """

    def __init__(self, alpha=1.0, eta0=1.0, decay=0.9, n_iter=30, n_samples=800, random_state=None):
        self.alpha = alpha
        self.eta0 = eta0
        self.decay = decay
        self.n_iter = n_iter
        self.n_samples = n_samples
        self.random_state = random_state

    def fit(self, mdp: TabularMDP, y=None):
        if not isinstance(mdp, TabularMDP):
            raise TypeError("fit expects a TabularMDP")
        spec = GeneratorSpec(self.alpha)
        rng = np.random.default_rng(self.random_state)
        schedule = TemperatureSchedule(self.eta0, self.decay)
        policy = uniform_policy(mdp.n_states, mdp.n_actions)
        V = np.zeros(mdp.n_states)
        rewards = []
        for i in range(int(self.n_iter)):
            batch = sample_batch(mdp, policy, self.n_samples, rng)
            rewards.append(batch.rewards.mean())
            dual = solve_dual(spec, batch, schedule(i), init=V)
            V = dual.value_table
            policy = tabular_policy_update(policy, batch, improvement_weights(spec, batch, dual))
        self.policy_ = policy
        self.value_table_ = V
        self.rewards_ = np.array(rewards)
        self.n_states_ = mdp.n_states
        return self

    def _states(self, states):
        states = np.asarray(states).reshape(-1)
        if states.size and (states.min() < 0 or states.max() >= self.n_states_):
            raise ValueError(f"states must lie in [0, {self.n_states_})")
        return states.astype(np.intp)

    def predict_proba(self, states):
        check_is_fitted(self, "policy_")
        return self.policy_.probs[self._states(states)]

    def predict(self, states):
        return np.argmax(self.predict_proba(states), axis=1)
