"""Experiment orchestration: policy iteration on tabular MDPs, bandit sweeps, policy demos.

Everything here is deterministic given the config seed.  Repetition ``r``
draws from ``SeedSequence([seed, r])`` regardless of alpha, so sweeps over
alpha use common random numbers.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
from dataclasses import dataclass

import numpy as np

from .bandit import (
    Z95,
    BanditEnv,
    BanditState,
    RegretRecord,
    bandit_policy_update,
    run_bandit_experiment,
    ucb_baseline,
)
from .divergence import GeneratorSpec
from .policy_update import improvement_weights, tabular_policy_update
from .proximal_core import TemperatureSchedule, solve_dual
from .tabular_mdp import build_env, sample_batch, uniform_policy

__all__ = [
    "ConfigError",
    "ENV_DEFAULTS",
    "ExperimentConfig",
    "LearningCurve",
    "SolverFailure",
    "run_bandit_suite",
    "run_policy_demo",
    "run_policy_iteration",
]

logger = logging.getLogger(__name__)

MDP_CSV_HEADER = ("iter", "mean_reward", "ci95", "alpha", "env", "runs", "seed")
DEMO_CSV_HEADER = ("alpha", "iteration", "arm", "probability")
CROSS_SECTION_HEADER = ("checkpoint", "alpha", "mean_regret", "ci95", "runs", "seed")

# Per-environment settings: iterations, samples per iteration, (eta0, decay), runs.
ENV_DEFAULTS = {
    "chain": dict(iterations=30, samples=800, eta0=15.0, decay=0.9, runs=10),
    "cliffwalking": dict(iterations=40, samples=1500, eta0=50.0, decay=0.9, runs=10),
    "frozenlake": dict(iterations=50, samples=2000, eta0=1.0, decay=0.8, runs=10),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SolverFailure(RuntimeError):
    """A dual solve failed inside an experiment loop."""


def _fmt_alpha(alpha) -> str:
    return repr(float(alpha))


@dataclass
class ExperimentConfig:
    kind: str = "mdp"
    env: str = "chain"
    alphas: tuple = (1.0,)
    eta0: float | None = None
    decay: float | None = None
    iterations: int | None = None
    samples: int | None = None
    runs: int | None = None
    seed: int = 0
    out: str = "."
    # bandit and demo settings
    arms: int | None = None
    horizon: int = 1000
    update_every: int = 20
    beta: float = 0.8
    noise_std: float = 0.5
    checkpoints: tuple = (200, 1000)
    eta: float = 2.0
    demo_iterations: int = 20

    def __post_init__(self):
        if isinstance(self.alphas, (int, float)):
            self.alphas = (self.alphas,)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.checkpoints = tuple(int(c) for c in self.checkpoints)

    def resolved(self) -> "ExperimentConfig":
        """Fill unset fields from the per-environment / per-experiment defaults and validate."""
        cfg = dataclasses.replace(self)
        if cfg.kind == "mdp":
            if cfg.env not in ENV_DEFAULTS:
                raise ConfigError(f"unknown env {cfg.env!r}; choose from {sorted(ENV_DEFAULTS)}")
            for key, value in ENV_DEFAULTS[cfg.env].items():
                if getattr(cfg, key) is None:
                    setattr(cfg, key, value)
        elif cfg.kind == "bandit":
            cfg.arms = 20 if cfg.arms is None else cfg.arms
            cfg.runs = 400 if cfg.runs is None else cfg.runs
            cfg.eta0 = 1.0 if cfg.eta0 is None else cfg.eta0
        elif cfg.kind == "demo":
            cfg.arms = 10 if cfg.arms is None else cfg.arms
        else:
            raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
        cfg.validate()
        return cfg

    def validate(self):
        if not self.alphas:
            raise ConfigError("alpha list must not be empty")
        if not all(np.isfinite(self.alphas)):
            raise ConfigError("alpha values must be finite")
        positive = ["eta0", "samples", "runs", "arms", "update_every", "eta", "beta"]
        for name in positive:
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        for name in ["iterations", "horizon", "demo_iterations"]:
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if self.decay is not None and not 0 < self.decay <= 1:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.kind == "bandit" and self.horizon % self.update_every:
            raise ConfigError("horizon must be a multiple of update_every")

    # -- key=value serialization ------------------------------------------

    def serialize(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, **overrides) -> "ExperimentConfig":
        """Parse ``key=value`` lines (``#`` comments allowed); keyword overrides win."""
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**{k: _coerce(k, v) for k, v in values.items()})


_INT_FIELDS = {"iterations", "samples", "runs", "seed", "arms", "horizon", "update_every", "demo_iterations"}
_FLOAT_FIELDS = {"eta0", "decay", "beta", "noise_std", "eta"}


def _coerce(key, value):
    if not isinstance(value, str):
        return value
    try:
        if key == "alphas":
            return tuple(float(v) for v in value.split(",") if v.strip())
        if key == "checkpoints":
            return tuple(int(v) for v in value.split(",") if v.strip())
        if key in _INT_FIELDS:
            return int(value)
        if key in _FLOAT_FIELDS:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


# -- MDP policy iteration ---------------------------------------------------


@dataclass
class LearningCurve:
    """Per-iteration batch-average reward for one alpha; ``per_run`` is (runs, iterations)."""

    alpha: float
    env: str
    per_run: np.ndarray
    seed: int = 0

    @property
    def runs(self) -> int:
        return self.per_run.shape[0]

    @property
    def mean_reward(self) -> np.ndarray:
        return self.per_run.mean(axis=0)

    @property
    def ci95(self) -> np.ndarray:
        if self.runs < 2:
            return np.zeros(self.per_run.shape[1])
        return Z95 * self.per_run.std(axis=0, ddof=1) / np.sqrt(self.runs)

    @property
    def final_rewards(self) -> np.ndarray:
        return self.per_run[:, -1]

    def __len__(self):
        return self.per_run.shape[1]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(MDP_CSV_HEADER)
        for i, (m, c) in enumerate(zip(self.mean_reward, self.ci95)):
            writer.writerow(
                [i, repr(float(m)), repr(float(c)), _fmt_alpha(self.alpha), self.env, self.runs, self.seed]
            )
        return out.getvalue()


def _policy_iteration_run(spec, mdp, cfg, run):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, run]))
    policy = uniform_policy(mdp.n_states, mdp.n_actions)
    schedule = TemperatureSchedule(cfg.eta0, cfg.decay)
    rewards = np.empty(cfg.iterations)
    V = np.zeros(mdp.n_states)
    for i in range(cfg.iterations):
        batch = sample_batch(mdp, policy, cfg.samples, rng)
        rewards[i] = batch.rewards.mean()
        try:
            dual = solve_dual(spec, batch, schedule(i), init=V)
            weights = improvement_weights(spec, batch, dual)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            raise SolverFailure(
                f"alpha={spec.alpha:g} run={run} iteration={i}: {exc}"
            ) from exc
        V = dual.value_table
        policy = tabular_policy_update(policy, batch, weights)
    return rewards, policy


def run_policy_iteration(config: ExperimentConfig) -> dict:
    """Sample, evaluate (dual), improve (weighted ML), decay eta; one curve per alpha."""
    cfg = dataclasses.replace(config, kind="mdp").resolved()
    mdp = build_env(cfg.env)
    curves = {}
    for alpha in cfg.alphas:
        spec = GeneratorSpec(alpha)
        per_run = np.empty((cfg.runs, cfg.iterations))
        for run in range(cfg.runs):
            per_run[run], _ = _policy_iteration_run(spec, mdp, cfg, run)
        curves[alpha] = LearningCurve(alpha, cfg.env, per_run, cfg.seed)
        logger.info("alpha=%g final mean reward %.4f", alpha, per_run[:, -1].mean() if cfg.iterations else 0.0)
    return curves


# -- bandits ----------------------------------------------------------------


@dataclass
class BanditSuite:
    records: dict
    baseline: RegretRecord
    checkpoints: tuple = ()
    seed: int = 0
    runs: int = 0

    def cross_section(self):
        """Rows (checkpoint, alpha, mean, ci95) of regret versus alpha."""
        rows = []
        for n in self.checkpoints:
            for alpha, rec in self.records.items():
                if n <= rec.horizon:
                    rows.append((n, alpha, *rec.at(n)))
        return rows

    def argmin_alpha(self, n: int) -> float:
        return min(self.records, key=lambda a: self.records[a].at(n)[0])

    def cross_section_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CROSS_SECTION_HEADER)
        for n, alpha, m, c in self.cross_section():
            writer.writerow([n, _fmt_alpha(alpha), repr(m), repr(c), self.runs, self.seed])
        return out.getvalue()


def run_bandit_suite(config: ExperimentConfig) -> BanditSuite:
    cfg = dataclasses.replace(config, kind="bandit").resolved()
    env = BanditEnv(n_arms=cfg.arms, reward_noise_std=cfg.noise_std)
    records = {}
    for alpha in cfg.alphas:
        try:
            records[alpha] = run_bandit_experiment(
                alpha, env, horizon=cfg.horizon, update_every=cfg.update_every,
                eta0=cfg.eta0, beta=cfg.beta, runs=cfg.runs, seed=cfg.seed,
            )
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            raise SolverFailure(f"alpha={alpha:g}: {exc}") from exc
        records[alpha].alpha = _fmt_alpha(alpha)
    baseline = ucb_baseline(env, horizon=cfg.horizon, runs=cfg.runs, seed=cfg.seed)
    return BanditSuite(records, baseline, cfg.checkpoints, cfg.seed, cfg.runs)


# -- policy demo ------------------------------------------------------------


def demo_iterations(k: int) -> tuple:
    return tuple(sorted({0, 1, 2, 3, 4, int(k)}))


def run_policy_demo(config: ExperimentConfig) -> dict:
    """Policy snapshots of repeated updates with exact arm values and fixed eta.

    Returns ``{alpha: {iteration: probabilities}}`` for iterations 0-4 and
    ``demo_iterations``.
    """
    cfg = dataclasses.replace(config, kind="demo").resolved()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    values = rng.standard_normal(cfg.arms)
    keep = demo_iterations(cfg.demo_iterations)
    snapshots = {}
    for alpha in cfg.alphas:
        spec = GeneratorSpec(alpha)
        pi = np.full(cfg.arms, 1.0 / cfg.arms)
        shots = {0: pi.copy()}
        for it in range(1, max(keep) + 1):
            pi = bandit_policy_update(spec, BanditState(values, pi, cfg.eta, timestep=it)).weights.copy()
            if it in keep:
                shots[it] = pi.copy()
        snapshots[alpha] = shots
    return {"values": values, "snapshots": snapshots}


def demo_csv(result: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DEMO_CSV_HEADER)
    for alpha, shots in result["snapshots"].items():
        for it, pi in shots.items():
            for arm, p in enumerate(pi):
                writer.writerow([_fmt_alpha(alpha), it, arm, repr(float(p))])
    return out.getvalue()


# -- file output ------------------------------------------------------------


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def write_mdp_outputs(curves: dict, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    return [
        _write(os.path.join(out_dir, f"mdp_{c.env}_alpha{_fmt_alpha(a)}.csv"), c.to_csv())
        for a, c in curves.items()
    ]


def write_bandit_outputs(suite: BanditSuite, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    paths = [
        _write(os.path.join(out_dir, f"bandit_alpha{_fmt_alpha(a)}.csv"), rec.to_csv())
        for a, rec in suite.records.items()
    ]
    paths.append(_write(os.path.join(out_dir, "bandit_ucb.csv"), suite.baseline.to_csv()))
    paths.append(_write(os.path.join(out_dir, "regret_vs_alpha.csv"), suite.cross_section_csv()))
    return paths


def write_demo_outputs(result: dict, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    return [_write(os.path.join(out_dir, "demo_policies.csv"), demo_csv(result))]
