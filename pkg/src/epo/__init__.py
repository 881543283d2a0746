"""Proximal policy iteration with alpha-divergence penalties."""
from .bandit import BanditEnv, BanditState, RegretRecord, bandit_policy_update, run_bandit_experiment, ucb_baseline
from .divergence import (
    DomainError,
    FiniteDistribution,
    GeneratorSpec,
    conjugate_domain,
    divergence,
    f,
    f_prime,
    f_star,
    f_star_prime,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    LearningCurve,
    SolverFailure,
    run_bandit_suite,
    run_policy_demo,
    run_policy_iteration,
)
from .policy_update import (
    exact_primal_policy,
    improvement_weights,
    pearson_equivalence_weights,
    tabular_policy_update,
)
from .proximal_core import (
    DualDivergenceError,
    DualSolution,
    TemperatureSchedule,
    advantages,
    closed_form_kl_dual,
    closed_form_pearson_dual,
    dual_objective,
    high_temp_gap,
    kappa_star,
    solve_dual,
    solve_dual_exact,
    solve_dual_with_epsilon,
)
from .tabular_mdp import (
    NotErgodicError,
    TabularMDP,
    TabularPolicy,
    TransitionBatch,
    build_chain,
    build_cliffwalking,
    build_frozenlake,
    optimal_gain,
    sample_batch,
    stationary_distribution,
)

__version__ = "0.1.0"
