"""``epo`` command line: bandit sweeps, MDP policy iteration, policy demos.

Settings come from an optional ``--config`` file of ``key=value`` lines;
flags given on the command line override it.  Exit status is 0 on success,
2 for configuration errors and 3 when a dual solve fails.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .experiments import (
    ConfigError,
    ExperimentConfig,
    SolverFailure,
    run_bandit_suite,
    run_policy_demo,
    run_policy_iteration,
    write_bandit_outputs,
    write_demo_outputs,
    write_mdp_outputs,
)
from .tabular_mdp import build_env

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _alpha_list(text):
    try:
        values = tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("alpha list must not be empty")
    return values


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="kind", required=True)

    def common(p):
        # defaults stay None so that config-file values survive unless overridden
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--alpha", dest="alphas", type=_alpha_list, help="comma-separated alphas")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    bandit = sub.add_parser("bandit", help="regret sweep over alpha on Gaussian bandits")
    common(bandit)
    bandit.add_argument("--arms", type=int)
    bandit.add_argument("--horizon", type=int)
    bandit.add_argument("--runs", type=int)
    bandit.add_argument("--eta0", type=float)
    bandit.add_argument("--beta", type=float)
    bandit.add_argument("--update-every", dest="update_every", type=int)
    bandit.add_argument("--noise-std", dest="noise_std", type=float)
    bandit.add_argument("--checkpoints", type=_int_list)

    mdp = sub.add_parser("mdp", help="sample-based policy iteration on a tabular MDP")
    common(mdp)
    mdp.add_argument("--env", choices=["chain", "cliffwalking", "frozenlake"])
    mdp.add_argument("--eta0", type=float)
    mdp.add_argument("--decay", type=float)
    mdp.add_argument("--iters", dest="iterations", type=int)
    mdp.add_argument("--samples", type=int)
    mdp.add_argument("--runs", type=int)

    demo = sub.add_parser("demo", help="policy snapshots of repeated updates on one bandit")
    common(demo)
    demo.add_argument("--eta", type=float)
    demo.add_argument("--arms", type=int)
    demo.add_argument("--iterations", dest="demo_iterations", type=int)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    overrides = {
        k: v for k, v in vars(args).items() if k not in ("config", "verbose", "kind") and v is not None
    }
    overrides["kind"] = args.kind
    return ExperimentConfig.parse(text, **overrides).resolved()


def run(cfg: ExperimentConfig) -> list:
    if cfg.kind == "bandit":
        return write_bandit_outputs(run_bandit_suite(cfg), cfg.out)
    if cfg.kind == "mdp":
        paths = write_mdp_outputs(run_policy_iteration(cfg), cfg.out)
        dump = os.path.join(cfg.out, f"mdp_{cfg.env}_model.txt")
        with open(dump, "w") as fh:
            fh.write(build_env(cfg.env).dump())
        return paths + [dump]
    return write_demo_outputs(run_policy_demo(cfg), cfg.out)


def _glue_negative_values(argv):
    """Turn ``--alpha -10,1`` into ``--alpha=-10,1`` so argparse does not read an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in ("--alpha", "--checkpoints"):
            nxt = next(it, None)
            if nxt is not None and nxt[:1] == "-" and (nxt[1:2].isdigit() or nxt[1:2] == "."):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_negative_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        cfg = load_config(args)
        paths = run(cfg)
    except ConfigError as exc:
        print(f"epo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"epo: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
