"""Stochastic multi-armed bandits with alpha-divergence policy updates.

Without states the dual reduces to the baseline lambda alone: arm value
estimates play the role of advantages, and the next policy is the current
one reweighted by f*'((Q_hat - lambda + kappa) / eta).

Simulations run all repetitions side by side as (runs, arms) arrays.  Each
run owns three independent random streams (arm means, arm-selection
uniforms, reward noise) derived from (seed, run), so different algorithms
see common random numbers.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .divergence import FiniteDistribution, _as_spec
from .proximal_core import baseline_and_weights

__all__ = [
    "BanditEnv",
    "BanditState",
    "RegretRecord",
    "bandit_policy_update",
    "run_bandit_experiment",
    "ucb_baseline",
]

Z95 = 1.959963984540054
BANDIT_CSV_HEADER = ("t", "mean_regret", "ci95", "alpha", "runs", "seed")


@dataclass
class BanditEnv:
    """Gaussian bandit.  With ``arm_means=None`` every run draws Q(a) ~ N(0, 1)."""

    arm_means: np.ndarray | None = None
    n_arms: int = 20
    reward_noise_std: float = 0.5

    def __post_init__(self):
        if self.arm_means is not None:
            self.arm_means = np.asarray(self.arm_means, dtype=float).reshape(-1)
            self.n_arms = self.arm_means.size
        if self.reward_noise_std < 0:
            raise ValueError("reward_noise_std must be non-negative")
        if self.n_arms < 1:
            raise ValueError("need at least one arm")


@dataclass
class BanditState:
    value_estimates: np.ndarray
    policy: np.ndarray
    eta: float
    pull_counts: np.ndarray | None = None
    timestep: int = 0

    def __post_init__(self):
        self.value_estimates = np.asarray(self.value_estimates, dtype=float)
        self.policy = np.asarray(self.policy, dtype=float)
        if self.pull_counts is None:
            self.pull_counts = np.zeros(self.value_estimates.size, dtype=np.int64)
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass
class RegretRecord:
    """Mean cumulative (pseudo-)regret after t = 1..horizon pulls, with 95% half-widths."""

    mean_regret: np.ndarray
    ci95: np.ndarray
    runs: int
    seed: int
    alpha: float | str = ""
    final_per_run: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def horizon(self) -> int:
        return self.mean_regret.size

    def at(self, n: int) -> tuple[float, float]:
        """(mean, ci95) of the regret after n pulls."""
        if n == 0:
            return 0.0, 0.0
        return float(self.mean_regret[n - 1]), float(self.ci95[n - 1])

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(BANDIT_CSV_HEADER)
        for t, (m, c) in enumerate(zip(self.mean_regret, self.ci95), start=1):
            writer.writerow([t, repr(float(m)), repr(float(c)), self.alpha, self.runs, self.seed])
        return out.getvalue()


def _update_policies(spec, policies, q_hat, eta):
    """Row-wise policy update; returns the new (runs, arms) policy array."""
    _, w = baseline_and_weights(spec, q_hat, eta, weights=policies)
    with np.errstate(invalid="ignore"):
        new = np.where(policies > 0, policies * w, 0.0)
    new /= new.sum(axis=1, keepdims=True)
    return new


def bandit_policy_update(spec, state: BanditState) -> FiniteDistribution:
    """One proximal update of the arm distribution from the current value estimates."""
    spec = _as_spec(spec)
    new = _update_policies(spec, state.policy[None, :], state.value_estimates[None, :], state.eta)[0]
    # push the rounding residue onto the largest entry so the sum is 1 to the last bit
    new[np.argmax(new)] += 1.0 - new.sum()
    return FiniteDistribution(new)


def _run_streams(seed, run):
    ss = np.random.SeedSequence([int(seed), int(run)])
    means, select, noise = ss.spawn(3)
    return np.random.default_rng(means), np.random.default_rng(select), np.random.default_rng(noise)


class _Simulation:
    """Shared state of a batch of bandit runs."""

    def __init__(self, env: BanditEnv, runs: int, seed: int):
        self.env = env
        self.runs = int(runs)
        self.seed = int(seed)
        streams = [_run_streams(seed, r) for r in range(self.runs)]
        self.select_rngs = [s[1] for s in streams]
        self.noise_rngs = [s[2] for s in streams]
        if env.arm_means is None:
            self.means = np.array([s[0].standard_normal(env.n_arms) for s in streams]).reshape(
                self.runs, env.n_arms
            )
        else:
            self.means = np.tile(env.arm_means, (self.runs, 1))
        self.best = self.means.max(axis=1)
        K = env.n_arms
        self.counts = np.zeros((self.runs, K))
        self.sums = np.zeros((self.runs, K))
        self.cum = np.zeros(self.runs)
        self.chunks_mean = []
        self.chunks_ci = []

    def draws(self, n):
        u = np.array([g.random(n) for g in self.select_rngs]).reshape(self.runs, n)
        z = np.array([g.standard_normal(n) for g in self.noise_rngs]).reshape(self.runs, n)
        return u, z

    @property
    def q_hat(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / self.counts, 0.0)

    def record(self, arms, z):
        """Book-keep pulls ``arms`` (runs, n) with noise ``z``; accumulate regret."""
        rows = np.arange(self.runs)[:, None]
        true = self.means[rows, arms]
        rewards = true + self.env.reward_noise_std * z
        np.add.at(self.counts, (np.broadcast_to(rows, arms.shape), arms), 1.0)
        np.add.at(self.sums, (np.broadcast_to(rows, arms.shape), arms), rewards)
        self.book_regret(arms)

    def book_regret(self, arms):
        rows = np.arange(self.runs)[:, None]
        cum = self.cum[:, None] + np.cumsum(self.best[:, None] - self.means[rows, arms], axis=1)
        self.cum = cum[:, -1].copy()
        self.chunks_mean.append(cum.mean(axis=0))
        if self.runs > 1:
            self.chunks_ci.append(Z95 * cum.std(axis=0, ddof=1) / np.sqrt(self.runs))
        else:
            self.chunks_ci.append(np.zeros(cum.shape[1]))

    def result(self, alpha) -> RegretRecord:
        mean = np.concatenate(self.chunks_mean) if self.chunks_mean else np.zeros(0)
        ci = np.concatenate(self.chunks_ci) if self.chunks_ci else np.zeros(0)
        return RegretRecord(mean, ci, self.runs, self.seed, alpha, self.cum.copy())


def _sample_arms(policies, u):
    cdf = np.cumsum(policies, axis=1)
    cdf /= cdf[:, -1:]
    cdf[:, -1] = 1.0
    return (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)


def run_bandit_experiment(
    spec,
    env: BanditEnv | None = None,
    horizon: int = 1000,
    update_every: int = 20,
    eta0: float = 1.0,
    beta: float = 0.8,
    runs: int = 400,
    seed: int = 0,
) -> RegretRecord:
    """Regret of alpha-divergence policy iteration on a Gaussian bandit.

    Every ``update_every`` pulls the policy is updated from the running
    means and the temperature is multiplied by ``beta``.
    """
    spec = _as_spec(spec)
    env = env or BanditEnv()
    if horizon % update_every:
        raise ValueError("horizon must be a multiple of update_every")
    sim = _Simulation(env, runs, seed)
    K = env.n_arms
    policies = np.full((sim.runs, K), 1.0 / K)
    eta = float(eta0)
    for _ in range(horizon // update_every):
        u, z = sim.draws(update_every)
        arms = _sample_arms(policies, u)
        sim.record(arms, z)
        policies = _update_policies(spec, policies, sim.q_hat, eta)
        eta *= beta
    return sim.result(spec.alpha)


def ucb_baseline(
    env: BanditEnv | None = None, horizon: int = 1000, runs: int = 400, seed: int = 0
) -> RegretRecord:
    """UCB1 with index Q_hat + c sqrt(2 ln n / n_a), c = reward noise std.

    Each arm is pulled once before the index is used.
    """
    env = env or BanditEnv()
    sim = _Simulation(env, runs, seed)
    K = env.n_arms
    c = env.reward_noise_std
    rows = np.arange(sim.runs)
    t = 0
    chunk = 20
    while t < horizon:
        n = min(chunk, horizon - t)
        _, z = sim.draws(n)
        arms = np.empty((sim.runs, n), dtype=np.intp)
        for j in range(n):
            if t < K:
                arms[:, j] = t
            else:
                bonus = c * np.sqrt(2.0 * np.log(t) / sim.counts)
                arms[:, j] = np.argmax(sim.q_hat + bonus, axis=1)
            a = arms[:, j]
            sim.counts[rows, a] += 1.0
            sim.sums[rows, a] += sim.means[rows, a] + c * z[:, j]
            t += 1
        sim.book_regret(arms)
    return sim.result("ucb")

