"""Primal recovery and weighted maximum-likelihood policy improvement."""
from __future__ import annotations

import numpy as np

from .divergence import DomainError, _as_spec
from .proximal_core import DualSolution, _conj_args, advantages, kappa_star
from .tabular_mdp import TabularMDP, TabularPolicy, TransitionBatch, stationary_distribution

__all__ = [
    "exact_primal_policy",
    "improvement_weights",
    "pearson_equivalence_weights",
    "tabular_policy_update",
]


def improvement_weights(spec, batch: TransitionBatch, dual: DualSolution) -> np.ndarray:
    """Density ratios w_t = f*'((A_t - lambda + kappa_t) / eta) for each sample.

    Samples lifted onto the boundary by kappa (alpha > 1) get weight exactly 0.
    """
    spec = _as_spec(spec)
    adv = advantages(batch, dual.value_table)
    y = _conj_args(spec, adv, dual.baseline_lambda, dual.eta)
    inside = spec.conjugate_domain().contains(y)
    if spec.is_kl:
        inside &= y <= 700.0
    if not np.all(inside):
        idx = int(np.flatnonzero(~inside)[0])
        raise DomainError(
            f"sample {idx}: conjugate argument {y[idx]:g} outside {spec.conjugate_domain()}"
        )
    _, w, _ = spec._conjugate_terms(y)
    return w


def tabular_policy_update(
    policy0: TabularPolicy, batch: TransitionBatch, weights
) -> TabularPolicy:
    """Closed-form weighted ML fit of a tabular policy.

    pi(a|s) is proportional to the summed weights of samples (s, a).  States
    that were never visited, or whose weights are all zero, keep their row
    from ``policy0``.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(batch),):
        raise ValueError(f"expected {len(batch)} weights, got shape {weights.shape}")
    S, A = policy0.probs.shape
    mass = np.zeros((S, A))
    np.add.at(mass, (batch.states, batch.actions), weights)
    totals = mass.sum(axis=1)
    probs = policy0.probs.copy()
    fit = totals > 0
    probs[fit] = mass[fit] / totals[fit, None]
    return TabularPolicy(probs)


def exact_primal_policy(
    mdp: TabularMDP, policy0: TabularPolicy, spec, dual: DualSolution
) -> TabularPolicy:
    """pi(a|s) from rho(s, a) = rho0(s, a) f*'(y(s, a)) on the full state-action grid."""
    spec = _as_spec(spec)
    rho0 = stationary_distribution(mdp, policy0)
    adv = mdp.reward + mdp.transition @ dual.value_table - dual.value_table[:, None]
    y = _conj_args(spec, adv, dual.baseline_lambda, dual.eta)
    _, w, _ = spec._conjugate_terms(y)
    w = np.where(rho0 > 0, w, 0.0)
    if np.any(~np.isfinite(w)):
        raise DomainError("dual solution leaves the conjugate domain on a visited cell")
    rho = rho0 * w
    totals = rho.sum(axis=1)
    if np.any(totals <= 0):
        s = int(np.flatnonzero(totals <= 0)[0])
        raise ValueError(f"state {s} receives zero mass; the dual variables are not optimal")
    return TabularPolicy(rho / totals[:, None])


def pearson_equivalence_weights(batch: TransitionBatch, dual: DualSolution) -> np.ndarray:
    """(A_t - mean(A) + eta) / eta, the Pearson actor weights.

    These coincide with the alpha = 2 improvement weights whenever no
    sample is clipped, which requires a large enough eta.
    """
    adv = advantages(batch, dual.value_table)
    clipped = kappa_star(2.0, adv, adv.mean(), dual.eta) > 0
    if np.any(clipped):
        idx = int(np.flatnonzero(clipped)[0])
        raise ValueError(
            f"sample {idx} needs kappa > 0; the Pearson equivalence requires a larger eta"
        )
    weights = (adv - adv.mean() + dual.eta) / dual.eta
    generic = improvement_weights(2.0, batch, dual)
    scale = 1.0 + np.abs(weights).max()
    if np.abs(weights - generic).max() > 1e-9 * scale:
        raise ValueError(
            "alpha = 2 improvement weights disagree with the Pearson form; "
            "the dual baseline is not mean(A)"
        )
    return weights
