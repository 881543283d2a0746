"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (see conftest.py) and when this file is executed
directly.  Tolerances are the stated ones and are never relaxed here.
"""
import time

import numpy as np
import pytest

from epo.divergence import GeneratorSpec, divergence, f, f_prime, f_star, f_star_prime
from epo.experiments import ExperimentConfig, run_bandit_suite, run_policy_demo, run_policy_iteration
from epo.policy_update import improvement_weights, pearson_equivalence_weights
from epo.proximal_core import (
    advantages,
    closed_form_kl_dual,
    closed_form_pearson_dual,
    high_temp_gap,
    pearson_baseline,
    solve_dual,
    solve_dual_exact,
)
from epo.tabular_mdp import TabularMDP, TabularPolicy, TransitionBatch, build_env, optimal_gain, stationary_distribution

RESULTS = {}


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


def test_criterion_01_conjugate_calculus():
    start = time.perf_counter()
    worst = 0.0
    x = np.geomspace(0.25, 20.0, 101)
    for alpha in [-3.0, -1.0, 0.0, 0.5, 1.0, 2.0, 4.0, 10.0]:
        spec = GeneratorSpec(alpha)
        if spec.is_kl:
            y = np.linspace(-5.0, 5.0, 101)
        elif alpha < 1:
            y = np.linspace(-5.0, 0.95 * spec.boundary, 101)
        else:
            y = np.linspace(0.95 * spec.boundary, 3.0, 101)
        xs = f_star_prime(alpha, y)
        worst = max(
            worst,
            abs(f(alpha, 1.0)),
            abs(f_prime(alpha, 1.0)),
            abs(f_star(alpha, 0.0)),
            abs(f_star_prime(alpha, 0.0) - 1.0),
            np.abs(f_star_prime(alpha, f_prime(alpha, x)) - x).max(),
            np.abs(f_star(alpha, y) + f(alpha, xs) - y * xs).max(),
        )
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-9 and elapsed < 1.0, f"max error {worst:.2e} (<= 1e-9), {elapsed:.3f}s (< 1s)")


def test_criterion_02_symmetry():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 10))
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        for beta in (0.25, 0.5, 1.5):
            worst = max(worst, abs(divergence(0.5 + beta, p, q) - divergence(0.5 - beta, q, p)))
    record(2, worst <= 1e-9, f"max |D(p||q) - D(q||p)| {worst:.2e} (<= 1e-9)")


def test_criterion_03_closed_forms():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        S, n, eta = 5, 100, 10.0
        b = TransitionBatch(rng.integers(0, S, n), np.zeros(n, int), rng.standard_normal(n), rng.integers(0, S, n), n_states=S)
        V = 0.5 * rng.standard_normal(S)
        kl = solve_dual(1.0, b, eta, init=V, freeze_value=True)
        chi2 = solve_dual(2.0, b, eta, init=V, freeze_value=True)
        assert np.all(chi2.kappa == 0)
        worst = max(
            worst,
            abs(kl.dual_value - closed_form_kl_dual(b, V, eta)),
            abs(chi2.dual_value - closed_form_pearson_dual(b, V, eta) - pearson_baseline(b, V)),
        )
    record(3, worst <= 1e-6, f"max |generic - closed form| {worst:.2e} (<= 1e-6)")


def test_criterion_04_duality_gap():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(5):
        P = rng.random((3, 2, 3)) + 0.05
        P /= P.sum(axis=2, keepdims=True)
        mdp = TabularMDP(P, rng.standard_normal((3, 2)))
        pi0 = TabularPolicy(rng.dirichlet([2.0, 2.0], size=3))
        rho0 = stationary_distribution(mdp, pi0)
        for alpha in (0.0, 0.5, 1.0, 2.0):
            spec = GeneratorSpec(alpha)
            sol = solve_dual_exact(alpha, mdp, pi0, 1.0)
            adv = mdp.reward + mdp.transition @ sol.value_table - sol.value_table[:, None]
            y = spec.clip_to_domain((adv - sol.baseline_lambda) / sol.eta)
            ratio = spec.f_star_prime(y)
            rho = rho0 * ratio
            pos = ratio > 0
            penalty = np.sum(rho0[pos] * spec.f(ratio[pos]))
            if np.any(~pos):
                penalty += np.sum(rho0[~pos]) * spec.f_at_zero()
            primal = float(np.sum(rho * mdp.reward) - sol.eta * penalty)
            gap = abs(primal - sol.dual_value)
            worst = gap if not np.isfinite(gap) else max(worst, gap)
    record(4, bool(worst <= 1e-4), f"max |primal - dual| {worst:.2e} (<= 1e-4)")


def test_criterion_05_high_temperature():
    adv = np.random.default_rng(5).standard_normal(200)
    b = TransitionBatch.from_rewards(adv)
    ratios = {a: high_temp_gap(a, b, [0.0], 100.0) / high_temp_gap(a, b, [0.0], 200.0) for a in (0.0, 0.5, 1.0, 4.0)}
    ok = all(3.2 <= r <= 4.8 for r in ratios.values())
    record(5, ok, "gap ratios " + ", ".join(f"a={a:g}: {r:.3f}" for a, r in ratios.items()) + " (in [3.2, 4.8])")


def test_criterion_06_low_temperature():
    # The bound is attained in the limit (one dominant advantage), so the
    # comparison allows the rounding of g1 itself: a few ulps of max |A|.
    rng = np.random.default_rng(6)
    slack = np.inf
    for _ in range(20):
        adv = rng.standard_normal(int(rng.integers(2, 200)))
        b = TransitionBatch.from_rewards(adv)
        rounding = 4 * np.spacing(np.abs(adv).max())
        for eta in (1.0, 0.1, 0.01):
            margin = eta * np.log(adv.size) - abs(closed_form_kl_dual(b, [0.0], eta) - adv.max())
            slack = min(slack, margin + rounding)
    record(6, slack >= 0, f"min (eta ln N - |g1 - max A| + 4 ulp) {slack:.2e} (>= 0)")


def test_criterion_07_pearson_equivalence():
    rng = np.random.default_rng(7)
    worst_eq = worst_prop = 0.0
    for _ in range(20):
        adv = rng.uniform(0.5, 3.0, 50)
        b = TransitionBatch.from_rewards(adv)
        eta = 5.0
        sol = solve_dual(2.0, b, eta, freeze_value=True)
        w = improvement_weights(2.0, b, sol)
        worst_eq = max(worst_eq, np.abs(w - (adv - adv.mean() + eta) / eta).max())
        # eta equal to the mean advantage: weights become A / mean(A)
        sol = solve_dual(2.0, b, adv.mean(), freeze_value=True)
        w = pearson_equivalence_weights(b, sol)
        worst_prop = max(worst_prop, np.abs(w / w.sum() - adv / adv.sum()).max())
    ok = worst_eq <= 1e-12 and worst_prop <= 1e-12
    record(7, ok, f"weight error {worst_eq:.2e}, proportionality error {worst_prop:.2e} (<= 1e-12)")


def test_criterion_08_support_pattern():
    start = time.perf_counter()
    res = run_policy_demo(ExperimentConfig(kind="demo", alphas=(10.0, -10.0, 1.0), arms=10, eta=2.0, seed=0, demo_iterations=4))
    best = int(np.argmax(res["values"]))
    p_pos, p_neg, p_kl = (res["snapshots"][a][1] for a in (10.0, -10.0, 1.0))
    rest = np.delete(p_neg, best)
    parts = {
        "a=10 zero arm": bool(np.any(p_pos == 0.0)),
        "a=-10 best mass near one": bool(p_neg[best] >= 0.9),
        "a=-10 rest equal": bool(np.ptp(rest) <= 1e-9),
        "a=1 all positive": bool(np.all(p_kl > 0)),
    }
    elapsed = time.perf_counter() - start
    ok = all(parts.values()) and elapsed < 1.0
    detail = ", ".join(f"{k}: {'ok' if v else 'no'}" for k, v in parts.items())
    record(8, ok, f"{detail}; a=-10 best {p_neg[best]:.3f}, rest spread {np.ptp(rest):.2e}; {elapsed:.3f}s")


def test_criterion_09_regret_ordering():
    start = time.perf_counter()
    moderate, extreme = (0.0, 0.5, 1.0, 2.0), (-20.0, 20.0)
    suite = run_bandit_suite(
        ExperimentConfig(kind="bandit", alphas=moderate + extreme, arms=20, horizon=1000, runs=100, seed=0)
    )
    at = {a: suite.records[a].at(1000) for a in moderate + extreme}
    ok = all(at[m][0] + at[m][1] < at[e][0] - at[e][1] for m in moderate for e in extreme)
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 120
    detail = ", ".join(f"a={a:g}: {m:.1f}+-{c:.1f}" for a, (m, c) in at.items())
    record(9, ok, f"regret@1000 {detail}; {elapsed:.1f}s (< 120s)")


def test_criterion_10_mdp_convergence():
    start = time.perf_counter()
    chain = run_policy_iteration(ExperimentConfig(kind="mdp", env="chain", alphas=(0.5,)))[0.5]
    target = 0.9 * optimal_gain(build_env("chain"))
    reached = int(np.sum(chain.per_run[:, :30].max(axis=1) >= target))
    lake = run_policy_iteration(ExperimentConfig(kind="mdp", env="frozenlake", alphas=(0.5, 10.0)))
    var_hi = float(np.var(lake[10.0].final_rewards, ddof=1))
    var_lo = float(np.var(lake[0.5].final_rewards, ddof=1))
    elapsed = time.perf_counter() - start
    ok = reached >= 8 and var_hi > var_lo and elapsed < 600
    record(
        10,
        ok,
        f"chain runs reaching {target:.3f}: {reached}/10 (>= 8); "
        f"frozenlake final-reward variance a=10 {var_hi:.2e} vs a=0.5 {var_lo:.2e}; {elapsed:.0f}s",
    )


def test_criterion_11_determinism(tmp_path):
    from epo.cli import main

    runs = [
        ["bandit", "--alpha", "0,1,-20", "--horizon", "200", "--runs", "20", "--seed", "11"],
        ["mdp", "--env", "frozenlake", "--alpha", "0.5,10", "--iters", "5", "--samples", "300", "--runs", "3", "--seed", "11"],
        ["mdp", "--env", "cliffwalking", "--alpha", "1", "--iters", "3", "--samples", "300", "--runs", "2", "--seed", "11"],
        ["demo", "--alpha", "-10,1,10", "--seed", "11"],
    ]
    identical = True
    for k, argv in enumerate(runs):
        a, b = tmp_path / f"{k}a", tmp_path / f"{k}b"
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        names = sorted(p.name for p in a.iterdir())
        identical &= names == sorted(p.name for p in b.iterdir())
        identical &= all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    record(11, identical, "repeated CLI runs produce identical files" if identical else "outputs differ")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
