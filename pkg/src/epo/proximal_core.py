"""Dual policy evaluation for f-divergence penalized policy iteration.

For a batch of transitions collected under the current policy, the dual
variables (V, lambda, kappa) minimize

    g(V, lambda, kappa) = eta * E[f*((A_V - lambda + kappa) / eta)] + lambda,

where A_V(s, a) = r + V(s') - V(s).  kappa is eliminated in closed form:
it is zero for alpha <= 1 and, for alpha > 1, it lifts every argument that
falls below the conjugate domain onto its boundary.  The remaining problem in
(V, lambda) is smooth and convex and is solved by damped Newton steps with a
backtracking line search.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .divergence import DomainError, GeneratorSpec, _as_spec
from .tabular_mdp import TabularMDP, TabularPolicy, TransitionBatch, stationary_distribution

__all__ = [
    "DualDivergenceError",
    "DualProblem",
    "DualSolution",
    "TemperatureSchedule",
    "advantages",
    "closed_form_kl_dual",
    "closed_form_pearson_dual",
    "dual_objective",
    "high_temp_gap",
    "kappa_star",
    "solve_baseline",
    "solve_dual",
    "solve_dual_exact",
    "solve_dual_with_epsilon",
]

logger = logging.getLogger(__name__)

BISECTION_STEPS = 200


class DualDivergenceError(RuntimeError):
    """The dual objective became non-finite; usually eta is too small."""


@dataclass(frozen=True)
class TemperatureSchedule:
    """eta_i = eta0 * decay**i."""

    eta0: float
    decay: float = 1.0

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")

    def __call__(self, i: int) -> float:
        return self.eta0 * self.decay**i


@dataclass
class DualSolution:
    value_table: np.ndarray
    baseline_lambda: float
    kappa: np.ndarray
    eta: float
    dual_value: float
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0

    def report(self) -> str:
        out = io.StringIO()
        out.write(f"eta {self.eta:.17g}\n")
        out.write(f"lambda {self.baseline_lambda:.17g}\n")
        out.write(f"dual_value {self.dual_value:.17g}\n")
        out.write(f"iterations {self.iterations}\n")
        out.write(f"converged {int(self.converged)}\n")
        for s, v in enumerate(self.value_table):
            out.write(f"V[{s}] {v:.17g}\n")
        return out.getvalue()

    @classmethod
    def from_report(cls, text: str) -> "DualSolution":
        fields = {}
        values = []
        for line in text.splitlines():
            key, val = line.split()
            if key.startswith("V["):
                values.append(float(val))
            else:
                fields[key] = val
        return cls(
            value_table=np.array(values),
            baseline_lambda=float(fields["lambda"]),
            kappa=np.zeros(0),
            eta=float(fields["eta"]),
            dual_value=float(fields["dual_value"]),
            converged=bool(int(fields["converged"])),
            iterations=int(fields["iterations"]),
        )


@dataclass
class DualProblem:
    """Linear advantage model A = rewards + flow @ V with sample weights.

    ``flow`` rows are e_{s'} - e_s for sampled transitions, or
    P(.|s, a) - e_s when the model is known exactly.
    """

    rewards: np.ndarray
    flow: np.ndarray
    weights: np.ndarray

    @property
    def n_states(self) -> int:
        return self.flow.shape[1]

    @classmethod
    def from_batch(cls, batch: TransitionBatch, n_states=None) -> "DualProblem":
        n = len(batch)
        S = int(n_states or batch.n_states)
        flow = np.zeros((n, S))
        rows = np.arange(n)
        np.add.at(flow, (rows, batch.next_states), 1.0)
        np.add.at(flow, (rows, batch.states), -1.0)
        return cls(batch.rewards.copy(), flow, np.full(n, 1.0 / n))

    @classmethod
    def from_model(cls, mdp: TabularMDP, policy0: TabularPolicy) -> "DualProblem":
        rho0 = stationary_distribution(mdp, policy0)
        S, A = mdp.n_states, mdp.n_actions
        flow = (mdp.transition - np.eye(S)[:, None, :]).reshape(S * A, S)
        keep = rho0.reshape(-1) > 0
        return cls(mdp.reward.reshape(-1)[keep], flow[keep], rho0.reshape(-1)[keep])

    def advantages(self, value_table) -> np.ndarray:
        return self.rewards + self.flow @ np.asarray(value_table, dtype=float)


def advantages(batch: TransitionBatch, value_table) -> np.ndarray:
    """Single-sample advantages r_t + V(s'_t) - V(s_t)."""
    V = np.asarray(value_table, dtype=float)
    return batch.rewards + V[batch.next_states] - V[batch.states]


def kappa_star(spec, advantage, lam, eta):
    """Smallest kappa >= 0 keeping (advantage - lam + kappa) / eta in the closed conjugate domain."""
    spec = _as_spec(spec)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    scalar = np.ndim(advantage) == 0
    adv = np.asarray(advantage, dtype=float)
    if spec.alpha > 1.0 and not spec.is_kl:
        out = np.maximum(0.0, eta * spec.boundary - (adv - lam))
    else:
        out = np.zeros_like(adv)
    return float(out) if scalar else out


def _conj_args(spec: GeneratorSpec, adv, lam, eta):
    y = (adv - lam) / eta
    return spec.clip_to_domain(y)


def solve_baseline(spec, adv, eta, weights=None):
    """lambda solving sum_i q_i f*'((adv_i - lambda) / eta) = 1 by bisection.

    Works row-wise on 2-D input.  Entries with zero weight are ignored.  The
    root is bracketed by [min adv, max adv] (tightened to the conjugate
    domain for alpha < 1) because f*' crosses 1 at 0 and is increasing.
    """
    lam, _ = baseline_and_weights(spec, adv, eta, weights)
    return lam


def baseline_and_weights(spec, adv, eta, weights=None):
    """Normalizing baseline together with the weights f*'(y) it induces.

    For alpha < 1 the root can sit within a few ulps of the domain edge
    (steep f*' for very negative alpha), so the search runs on the gap
    delta = lambda - (max adv - eta / (1 - alpha)) in log space, and the
    weights are formed from delta directly to avoid cancellation.
    """
    spec = _as_spec(spec)
    adv = np.asarray(adv, dtype=float)
    squeeze = adv.ndim == 1
    adv = np.atleast_2d(adv)
    if weights is None:
        q = np.full_like(adv, 1.0 / adv.shape[1])
    else:
        q = np.atleast_2d(np.broadcast_to(np.asarray(weights, dtype=float), adv.shape))
    on = q > 0
    top = np.where(on, adv, -np.inf).max(axis=1)
    bottom = np.where(on, adv, np.inf).min(axis=1)

    def mass_of(w):
        with np.errstate(invalid="ignore"):
            return np.sum(np.where(on, q * np.nan_to_num(w, nan=np.inf), 0.0), axis=1)

    if spec.alpha < 1.0 and not spec.is_kl:
        a = spec.alpha
        reach = eta * spec.boundary
        gaps = top[:, None] - adv

        def weights_at(delta):
            base = (1.0 - a) * (gaps + delta[:, None]) / eta
            with np.errstate(divide="ignore", over="ignore"):
                return base ** (1.0 / (a - 1.0))

        d_hi = reach * np.ones_like(top)
        d_lo = np.maximum(bottom - (top - reach), 0.0)
        flat = top == bottom
        log_lo = np.log(np.maximum(d_lo, reach * 1e-300))
        log_hi = np.log(d_hi)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (log_lo + log_hi)
            above = mass_of(weights_at(np.exp(mid))) > 1.0
            new_lo = np.where(above, mid, log_lo)
            new_hi = np.where(above, log_hi, mid)
            if np.array_equal(new_lo, log_lo) and np.array_equal(new_hi, log_hi):
                break
            log_lo, log_hi = new_lo, new_hi
        delta = np.where(flat, reach, np.exp(0.5 * (log_lo + log_hi)))
        lam = top - reach + delta
        w = weights_at(delta)
    else:
        lo, hi = bottom, top.copy()
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            _, slope, _ = spec._conjugate_terms(_conj_args(spec, adv, mid[:, None], eta))
            above = mass_of(slope) > 1.0
            new_lo = np.where(above, mid, lo)
            new_hi = np.where(above, hi, mid)
            if np.array_equal(new_lo, lo) and np.array_equal(new_hi, hi):
                break
            lo, hi = new_lo, new_hi
        lam = 0.5 * (lo + hi)
        _, w, _ = spec._conjugate_terms(_conj_args(spec, adv, lam[:, None], eta))
    if squeeze:
        return float(lam[0]), w[0]
    return lam, w


def _objective(spec, problem: DualProblem, V, lam, eta, strict=False):
    adv = problem.advantages(V)
    y = _conj_args(spec, adv, lam, eta)
    if strict:
        try:
            spec._check_conjugate(y)
        except DomainError as exc:
            idx = int(np.flatnonzero(~spec.conjugate_domain().contains(y) | (y > 700))[0])
            raise DomainError(f"sample {idx}: {exc}") from None
    value, slope, curv = spec._conjugate_terms(y)
    g = eta * float(np.dot(problem.weights, value)) + lam
    return g, adv, y, slope, curv


def dual_objective(spec, batch: TransitionBatch, value_table, lam, eta) -> float:
    """Sample-average dual objective with kappa eliminated by ``kappa_star``."""
    spec = _as_spec(spec)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    problem = DualProblem.from_batch(batch, n_states=np.size(value_table))
    g, *_ = _objective(spec, problem, value_table, float(lam), float(eta), strict=True)
    return g


STALL_LIMIT = 25


def _newton(spec, problem: DualProblem, eta, V, lam, tol, max_iters, freeze_value):
    S = problem.n_states
    g, adv, y, slope, curv = _objective(spec, problem, V, lam, eta)
    if not np.isfinite(g):
        raise DualDivergenceError(
            f"dual objective is {g} at the initial point (eta={eta:g}); try a larger eta"
        )
    q = problem.weights
    grad_norm = np.inf
    it = 0
    stalled = 0
    for it in range(1, int(max_iters) + 1):
        qs = q * slope
        grad_lam = 1.0 - qs.sum()
        if freeze_value:
            grad = np.array([grad_lam])
        else:
            grad = np.append(problem.flow.T @ qs, grad_lam)
        grad_norm = float(np.abs(grad).max())
        if grad_norm < tol:
            return V, lam, g, True, it - 1, grad_norm
        qc = q * curv / eta
        if freeze_value:
            H = np.array([[qc.sum()]])
        else:
            J = np.hstack([problem.flow, -np.ones((problem.flow.shape[0], 1))])
            H = (J * qc[:, None]).T @ J
        step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        slope_dir = float(grad @ step)
        if not np.all(np.isfinite(step)) or slope_dir >= 0:
            step, slope_dir = -grad, -float(grad @ grad)
        t = 1.0
        improved = False
        for _ in range(60):
            if freeze_value:
                V_try, lam_try = V, lam + t * step[0]
            else:
                V_try, lam_try = V + t * step[:S], lam + t * step[S]
            g_try, adv_t, y_t, slope_t, curv_t = _objective(spec, problem, V_try, lam_try, eta)
            if np.isfinite(g_try) and g_try <= g + 1e-4 * t * slope_dir:
                improved = True
                break
            t *= 0.5
        if not improved:
            # at the floating-point floor: no representable decrease left
            break
        if not freeze_value:
            # pin the additive gauge of V to its mean
            V_try = V_try - V_try.mean()
        # kinks from the kappa clipping can trap Newton in tiny steps
        stalled = stalled + 1 if g - g_try <= 1e-15 * (1.0 + abs(g)) else 0
        if stalled >= STALL_LIMIT:
            break
        V, lam, g = V_try, lam_try, g_try
        adv, y, slope, curv = adv_t, y_t, slope_t, curv_t
    return V, lam, g, grad_norm < tol, it, grad_norm


def _solve(spec, problem, eta, init, tol, max_iters, freeze_value):
    spec = _as_spec(spec)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if problem.rewards.size == 0:
        raise ValueError("cannot solve the dual on an empty batch")
    S = problem.n_states
    if init is None:
        V = np.zeros(S)
    else:
        V = np.asarray(getattr(init, "value_table", init), dtype=float).copy()
        if V.shape != (S,):
            raise ValueError(f"initial value table must have shape ({S},)")
    lam = solve_baseline(spec, problem.advantages(V), eta, problem.weights)
    with np.errstate(over="ignore", invalid="ignore"):
        V, lam, g, converged, iters, grad_norm = _newton(
            spec, problem, eta, V, lam, tol, max_iters, freeze_value
        )
    if not np.isfinite(g):
        raise DualDivergenceError(f"dual objective diverged (eta={eta:g}); try a larger eta")
    adv = problem.advantages(V)
    return DualSolution(
        value_table=V,
        baseline_lambda=float(lam),
        kappa=kappa_star(spec, adv, lam, eta),
        eta=float(eta),
        dual_value=float(g),
        converged=bool(converged),
        iterations=int(iters),
        grad_norm=grad_norm,
    )


def solve_dual(
    spec,
    batch: TransitionBatch,
    eta: float,
    init=None,
    tol: float = 1e-8,
    max_iters: int = 5000,
    freeze_value: bool = False,
    n_states: int | None = None,
) -> DualSolution:
    """Minimize the sample-based dual over (V, lambda).

    ``init`` may be a previous ``DualSolution`` or a value table.  With
    ``freeze_value=True`` only lambda is optimized and V stays at ``init``.
    """
    if len(batch) == 0:
        raise ValueError("cannot solve the dual on an empty batch")
    if n_states is None and init is not None:
        n_states = np.size(getattr(init, "value_table", init))
    problem = DualProblem.from_batch(batch, n_states=n_states)
    return _solve(spec, problem, eta, init, tol, max_iters, freeze_value)


def solve_dual_exact(
    spec, mdp: TabularMDP, policy0: TabularPolicy, eta: float, init=None, tol=1e-10, max_iters=5000
) -> DualSolution:
    """Dual with exact expectations: stationary weights rho0 and E[V(s')] from the model."""
    problem = DualProblem.from_model(mdp, policy0)
    return _solve(spec, problem, eta, init, tol, max_iters, freeze_value=False)


def implied_divergence(spec, problem: DualProblem, sol: DualSolution) -> float:
    """D_f(rho || rho0) of the primal recovered from ``sol``, via Fenchel's equality."""
    spec = _as_spec(spec)
    y = _conj_args(spec, problem.advantages(sol.value_table), sol.baseline_lambda, sol.eta)
    value, slope, _ = spec._conjugate_terms(y)
    return float(np.dot(problem.weights, y * slope - value))


def solve_dual_with_epsilon(
    spec,
    batch: TransitionBatch,
    epsilon: float,
    eta0: float = 1.0,
    tol: float = 1e-8,
    max_iters: int = 5000,
    eta_min: float = 1e-8,
    eta_max: float = 1e8,
) -> DualSolution:
    """Trust-region variant: minimize g + eta * epsilon over (V, lambda, eta >= 0).

    The derivative of min_{V,lambda} g in eta is -D_f(rho || rho0), so the
    optimal temperature is the root of D(eta) = epsilon.  D decreases in eta;
    the root is found on log eta.
    """
    spec = _as_spec(spec)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    problem = DualProblem.from_batch(batch)
    cache = {}

    def solve_at(log_eta):
        if log_eta not in cache:
            warm = min(cache.items(), key=lambda kv: abs(kv[0] - log_eta))[1] if cache else None
            sol = _solve(spec, problem, float(np.exp(log_eta)), warm, tol, max_iters, False)
            cache[log_eta] = sol
        return cache[log_eta]

    def excess(log_eta):
        return implied_divergence(spec, problem, solve_at(log_eta)) - epsilon

    step = np.log(4.0)
    start = float(np.log(eta0))
    if excess(start) > 0:
        hi = start
        while excess(hi) > 0:
            hi += step
            if hi > np.log(eta_max):
                raise DualDivergenceError("no temperature below eta_max meets the divergence bound")
        lo = hi - step
    else:
        if excess(np.log(eta_min)) <= 0:
            if implied_divergence(spec, problem, solve_at(start)) < 1e-14:
                # flat advantages: every temperature gives a zero-divergence update
                return _with_eps(solve_at(start), epsilon)
            raise DualDivergenceError(
                f"temperature collapsed below {eta_min:g}: the divergence bound {epsilon:g} "
                "is never active (unconstrained greedy improvement)"
            )
        lo = start
        while excess(lo) <= 0:
            lo -= step
        hi = lo + step
    root = brentq(excess, lo, hi, xtol=1e-12, rtol=1e-12)
    return _with_eps(solve_at(root), epsilon)


def _with_eps(sol: DualSolution, epsilon: float) -> DualSolution:
    return replace(sol, dual_value=sol.dual_value + sol.eta * epsilon)


def closed_form_kl_dual(batch: TransitionBatch, value_table, eta: float) -> float:
    """eta * log mean exp(A / eta), the KL dual with lambda and kappa eliminated."""
    adv = advantages(batch, value_table)
    top = adv.max()
    # shift by the max before scaling so the low-temperature limit is exact
    return float(top + eta * (logsumexp((adv - top) / eta) - np.log(adv.size)))


def closed_form_pearson_dual(batch: TransitionBatch, value_table, eta: float) -> float:
    """Centered second moment of the advantages over 2 eta.

    The eliminated baseline, mean(A), is not included; the Pearson dual
    optimum is this value plus ``pearson_baseline``.
    """
    adv = advantages(batch, value_table)
    return float(np.mean((adv - adv.mean()) ** 2) / (2.0 * eta))


def pearson_baseline(batch: TransitionBatch, value_table) -> float:
    return float(advantages(batch, value_table).mean())


def high_temp_gap(spec, batch: TransitionBatch, value_table, eta: float) -> float:
    """|g_alpha - g_2| at the respective optimal baselines, V held fixed."""
    spec = _as_spec(spec)
    adv = advantages(batch, value_table)
    lam = solve_baseline(spec, adv, eta)
    y = _conj_args(spec, adv, lam, eta)
    value, _, _ = spec._conjugate_terms(y)
    g_alpha = eta * float(np.mean(value)) + lam
    g_pearson = closed_form_pearson_dual(batch, value_table, eta) + adv.mean()
    return abs(g_alpha - g_pearson)
