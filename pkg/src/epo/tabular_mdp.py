"""Ergodic tabular MDPs, benchmark environments, sampling and exact oracles.

Terminal and absorbing events are folded into the transition tensor: a goal,
hole or cliff cell is an ordinary state whose every action leads back to the
restart distribution.  This keeps the chain irreducible so the average-reward
quantities (stationary distribution, gain) are well defined.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "BACK",
    "FORWARD",
    "NotErgodicError",
    "TabularMDP",
    "TabularPolicy",
    "TransitionBatch",
    "brute_force_gain",
    "build_chain",
    "build_cliffwalking",
    "build_env",
    "build_frozenlake",
    "policy_gain",
    "optimal_gain",
    "sample_batch",
    "stationary_distribution",
    "uniform_policy",
]

FORWARD, BACK = 0, 1
# Grid moves: up, right, down, left.
_MOVES = np.array([(-1, 0), (0, 1), (1, 0), (0, -1)])

FROZENLAKE_MAP = ("SFFF", "FHFH", "FFFH", "HFFG")


class NotErgodicError(ValueError):
    """The chain induced by a policy is not irreducible."""


@dataclass
class TabularMDP:
    """Finite MDP with transition tensor ``P[s, a, s']`` and rewards.

    ``reward`` holds the expected one-step reward R(s, a).  When the reward
    depends on the landing state (slippery dynamics), ``next_reward[s, a, s']``
    carries the per-outcome value used by the sampler and ``reward`` is its
    expectation under P.
    """

    transition: np.ndarray
    reward: np.ndarray = None
    restart_distribution: np.ndarray = None
    next_reward: np.ndarray | None = None
    name: str = "mdp"
    action_names: tuple = ()

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be non-negative")
        row_err = np.abs(P.sum(axis=2) - 1.0).max()
        if row_err > 1e-12:
            raise ValueError(f"transition rows must sum to 1 (max error {row_err:.3g})")
        self.transition = P
        if self.next_reward is not None:
            self.next_reward = np.asarray(self.next_reward, dtype=float)
            if self.next_reward.shape != P.shape:
                raise ValueError("next_reward must match the transition shape")
            expected = np.einsum("ijk,ijk->ij", P, self.next_reward)
            if self.reward is None:
                self.reward = expected
        if self.reward is None:
            raise ValueError("reward is required")
        self.reward = np.asarray(self.reward, dtype=float)
        if self.reward.shape != P.shape[:2]:
            raise ValueError(f"reward must have shape {P.shape[:2]}, got {self.reward.shape}")
        if self.restart_distribution is None:
            restart = np.zeros(self.n_states)
            restart[0] = 1.0
        else:
            restart = np.asarray(self.restart_distribution, dtype=float)
        if restart.shape != (self.n_states,) or abs(restart.sum() - 1.0) > 1e-12:
            raise ValueError("restart_distribution must be a distribution over states")
        self.restart_distribution = restart

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def is_ergodic(self) -> bool:
        """Irreducibility of the chain under any strictly positive policy."""
        graph = (self.transition.sum(axis=1) > 0).astype(int)
        n, _ = connected_components(graph, directed=True, connection="strong")
        return n == 1

    def check_ergodic(self):
        if not self.is_ergodic():
            raise NotErgodicError(f"{self.name}: positive-policy chain is reducible")

    def dump(self) -> str:
        """Plain-text matrix dump, one row per (s, a): probabilities then reward."""
        out = io.StringIO()
        out.write(f"# {self.name} states={self.n_states} actions={self.n_actions}\n")
        for s in range(self.n_states):
            for a in range(self.n_actions):
                row = " ".join(f"{p:.12g}" for p in self.transition[s, a])
                out.write(f"{s} {a} {row} {self.reward[s, a]:.12g}\n")
        return out.getvalue()

    @classmethod
    def from_dump(cls, text: str) -> "TabularMDP":
        rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
        S = max(int(r[0]) for r in rows) + 1
        A = max(int(r[1]) for r in rows) + 1
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for r in rows:
            s, a = int(r[0]), int(r[1])
            P[s, a] = [float(v) for v in r[2 : 2 + S]]
            R[s, a] = float(r[2 + S])
        return cls(P, R)


@dataclass
class TabularPolicy:
    """Row-stochastic table ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("policy table must be 2-D (states, actions)")
        if np.any(probs < 0):
            raise ValueError("policy probabilities must be non-negative")
        err = np.abs(probs.sum(axis=1) - 1.0).max()
        if err > 1e-12:
            raise ValueError(f"policy rows must sum to 1 (max error {err:.3g})")
        self.probs = probs

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def support(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.probs[s] > 0)

    def greedy(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    def dump(self) -> str:
        return "".join(" ".join(f"{p:.12g}" for p in row) + "\n" for row in self.probs)

    @classmethod
    def from_dump(cls, text: str) -> "TabularPolicy":
        return cls(np.array([[float(v) for v in line.split()] for line in text.splitlines() if line]))


def uniform_policy(n_states: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass
class TransitionBatch:
    """One-step experience tuples (s, a, r, s') stored column-wise."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    behavior_policy_id: str = ""
    n_states: int | None = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.intp).reshape(-1)
        self.actions = np.asarray(self.actions, dtype=np.intp).reshape(-1)
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        self.next_states = np.asarray(self.next_states, dtype=np.intp).reshape(-1)
        n = self.states.size
        if not (self.actions.size == self.rewards.size == self.next_states.size == n):
            raise ValueError("batch columns must have equal length")
        if self.n_states is None:
            self.n_states = int(max(self.states.max(initial=-1), self.next_states.max(initial=-1)) + 1)

    def __len__(self):
        return self.states.size

    @classmethod
    def from_rewards(cls, rewards, **kwargs) -> "TransitionBatch":
        """Single-state batch whose advantages under V = 0 equal ``rewards``."""
        rewards = np.asarray(rewards, dtype=float)
        zeros = np.zeros(rewards.size, dtype=np.intp)
        return cls(zeros, zeros, rewards, zeros, n_states=1, **kwargs)

    @classmethod
    def from_array(cls, X, n_states=None) -> "TransitionBatch":
        """Build from an (n, 4) array of (s, a, r, s') rows."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 4:
            raise ValueError(f"expected an (n, 4) array of (s, a, r, s'), got shape {X.shape}")
        return cls(X[:, 0], X[:, 1], X[:, 2], X[:, 3], n_states=n_states)

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.states, self.actions, self.rewards, self.next_states]).astype(float)

    def counts(self, n_actions: int) -> np.ndarray:
        """Visit counts per (s, a) cell."""
        c = np.zeros((self.n_states, n_actions), dtype=np.int64)
        np.add.at(c, (self.states, self.actions), 1)
        return c

    def tobytes(self) -> bytes:
        return b"".join(
            col.tobytes() for col in (self.states, self.actions, self.rewards, self.next_states)
        )


# -- environments -----------------------------------------------------------


def build_chain(n_states=8, success=0.9, small=2.0, large=10.0) -> TabularMDP:
    """N-Chain: FORWARD walks right (paying ``large`` while looping at the end),
    BACK returns to state 0 paying ``small``.  With probability 1 - success the
    executed action is the other one."""
    if not 0 < success <= 1:
        raise ValueError(f"success must be in (0, 1], got {success}")
    S = int(n_states)
    P = np.zeros((S, 2, S))
    Rn = np.zeros((S, 2, S))
    for s in range(S):
        fwd = min(s + 1, S - 1)
        fwd_reward = large if s == S - 1 else 0.0
        for intended in (FORWARD, BACK):
            for executed, prob in ((intended, success), (1 - intended, 1.0 - success)):
                if prob == 0:
                    continue
                nxt, r = (fwd, fwd_reward) if executed == FORWARD else (0, small)
                P[s, intended, nxt] += prob
                # next states of the two outcomes differ whenever S > 1
                Rn[s, intended, nxt] = r
    return TabularMDP(P, next_reward=Rn, name="chain", action_names=("forward", "back"))


def _grid_index(r, c, ncols):
    return r * ncols + c


def build_cliffwalking(fall=-10.0, goal=100.0, step=-1.0) -> TabularMDP:
    """4x12 CliffWalking with deterministic moves and restart through cliff/goal cells."""
    nrows, ncols = 4, 12
    S = nrows * ncols
    start = _grid_index(3, 0, ncols)
    goal_cell = _grid_index(3, 11, ncols)
    cliff = {_grid_index(3, c, ncols) for c in range(1, 11)}
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    for r in range(nrows):
        for c in range(ncols):
            s = _grid_index(r, c, ncols)
            for a, (dr, dc) in enumerate(_MOVES):
                if s in cliff or s == goal_cell:
                    P[s, a, start] = 1.0
                    continue
                nr = min(max(r + dr, 0), nrows - 1)
                nc = min(max(c + dc, 0), ncols - 1)
                nxt = _grid_index(nr, nc, ncols)
                P[s, a, nxt] = 1.0
                R[s, a] = fall if nxt in cliff else goal if nxt == goal_cell else step
    restart = np.zeros(S)
    restart[start] = 1.0
    return TabularMDP(
        P, R, restart, name="cliffwalking", action_names=("up", "right", "down", "left")
    )


def build_frozenlake(success=0.8, goal_reward=1.0) -> TabularMDP:
    """Standard 4x4 FrozenLake.  The intended move happens with probability
    ``success``; each perpendicular move with (1 - success) / 2."""
    if not 0 < success <= 1:
        raise ValueError(f"success must be in (0, 1], got {success}")
    grid = FROZENLAKE_MAP
    nrows, ncols = len(grid), len(grid[0])
    S = nrows * ncols
    start = 0
    P = np.zeros((S, 4, S))
    Rn = np.zeros((S, 4, S))
    slip = (1.0 - success) / 2.0
    for r in range(nrows):
        for c in range(ncols):
            s = _grid_index(r, c, ncols)
            for a in range(4):
                if grid[r][c] in "HG":
                    P[s, a, start] = 1.0
                    continue
                for move, prob in ((a, success), ((a - 1) % 4, slip), ((a + 1) % 4, slip)):
                    if prob == 0:
                        continue
                    dr, dc = _MOVES[move]
                    nr = min(max(r + dr, 0), nrows - 1)
                    nc = min(max(c + dc, 0), ncols - 1)
                    nxt = _grid_index(nr, nc, ncols)
                    P[s, a, nxt] += prob
                    Rn[s, a, nxt] = goal_reward if grid[nr][nc] == "G" else 0.0
    restart = np.zeros(S)
    restart[start] = 1.0
    return TabularMDP(
        P, restart_distribution=restart, next_reward=Rn, name="frozenlake",
        action_names=("up", "right", "down", "left"),
    )


ENVIRONMENTS = {
    "chain": build_chain,
    "cliffwalking": build_cliffwalking,
    "frozenlake": build_frozenlake,
}


def build_env(name: str, **kwargs) -> TabularMDP:
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


# -- sampling ---------------------------------------------------------------


def sample_batch(mdp: TabularMDP, policy: TabularPolicy, n: int, rng_seed=None) -> TransitionBatch:
    """Roll out a single trajectory of ``n`` steps starting from the restart distribution."""
    probs = policy.probs
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = int(n)
    states = np.empty(n, dtype=np.intp)
    actions = np.empty(n, dtype=np.intp)
    next_states = np.empty(n, dtype=np.intp)
    rewards = np.empty(n)
    if n > 0:
        u = rng.random((n, 2))
        policy_cdf = np.cumsum(probs, axis=1)
        trans_cdf = np.cumsum(mdp.transition, axis=2)
        s = int(np.searchsorted(np.cumsum(mdp.restart_distribution), rng.random(), side="right"))
        last_a, last_s = mdp.n_actions - 1, mdp.n_states - 1
        for t in range(n):
            a = min(int(np.searchsorted(policy_cdf[s], u[t, 0], side="right")), last_a)
            s2 = min(int(np.searchsorted(trans_cdf[s, a], u[t, 1], side="right")), last_s)
            states[t], actions[t], next_states[t] = s, a, s2
            rewards[t] = mdp.next_reward[s, a, s2] if mdp.next_reward is not None else mdp.reward[s, a]
            s = s2
    return TransitionBatch(
        states, actions, rewards, next_states,
        behavior_policy_id=f"{mdp.name}:{id(policy):x}", n_states=mdp.n_states,
    )


# -- oracles ----------------------------------------------------------------


def _state_chain(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def stationary_distribution(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """rho(s, a) = mu(s) pi(a|s), with mu the stationary law of the state chain."""
    chain = _state_chain(mdp, policy)
    n, _ = connected_components((chain > 0).astype(int), directed=True, connection="strong")
    if n != 1:
        raise NotErgodicError("policy induces a reducible state chain")
    S = chain.shape[0]
    # mu (P - I) = 0 with sum(mu) = 1; replace one balance equation by normalization.
    system = chain.T - np.eye(S)
    system[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    mu = np.linalg.solve(system, rhs)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = np.abs(mu @ chain - mu).max()
    if residual > 1e-10:
        # refine with a few power steps on the lazy chain
        lazy = 0.5 * (chain + np.eye(S))
        for _ in range(1000):
            mu = mu @ lazy
            if np.abs(mu @ chain - mu).max() < 1e-12:
                break
    return mu[:, None] * policy.probs


def policy_gain(mdp: TabularMDP, policy: TabularPolicy) -> float:
    """Average reward of a policy on an ergodic MDP."""
    rho = stationary_distribution(mdp, policy)
    return float(np.sum(rho * mdp.reward))


def optimal_gain(mdp: TabularMDP, tolerance=1e-10, max_iters=200_000, h0=None) -> float:
    """Optimal average reward by relative value iteration.

    Runs on the lazy transform 0.5 (I + P), which has the same gain and
    removes periodicity.  Stops when the span of successive differences is
    below ``tolerance``.
    """
    P = 0.5 * (mdp.transition + np.eye(mdp.n_states)[:, None, :])
    R = mdp.reward
    h = np.zeros(mdp.n_states) if h0 is None else np.asarray(h0, dtype=float).copy()
    for _ in range(int(max_iters)):
        h_new = (R + P @ h).max(axis=1)
        diff = h_new - h
        lo, hi = diff.min(), diff.max()
        if hi - lo < tolerance:
            return float(0.5 * (lo + hi))
        h = h_new - h_new[0]
    raise RuntimeError(f"relative value iteration did not converge in {max_iters} iterations")


def brute_force_gain(mdp: TabularMDP) -> float:
    """Best gain over all deterministic stationary policies (small MDPs only)."""
    S, A = mdp.n_states, mdp.n_actions
    if A**S > 1 << 16:
        raise ValueError("too many deterministic policies to enumerate")
    best = -np.inf
    for idx in np.ndindex(*(A,) * S):
        probs = np.zeros((S, A))
        probs[np.arange(S), idx] = 1.0
        chain = _state_chain(mdp, TabularPolicy(probs))
        # deterministic policies may leave transient states; solve on the unichain directly
        system = chain.T - np.eye(S)
        system[-1, :] = 1.0
        rhs = np.zeros(S)
        rhs[-1] = 1.0
        mu = np.linalg.lstsq(system, rhs, rcond=None)[0]
        best = max(best, float(mu @ mdp.reward[np.arange(S), idx]))
    return best
