"""
Command line: tsprop {propensity,simulate,evaluate,sweep}.

Exit codes: 0 ok, 2 usage or input error, 3 domain error, 4 numerical failure.
"""
import argparse
import json
import sys
from typing import List, Optional

from tsprop.core.propensity import BetaRoute, grid_propensities, propensities, quadrature_propensities
from tsprop.exceptions import DomainError, InputError, NumericalError
from tsprop.models.beliefs import load_belief_set
from tsprop.ope.dataset import LoggedDataset
from tsprop.ope.estimator_factory import ESTIMATOR_NAMES, EstimatorFactory
from tsprop.run import evaluate, sweep, training_data, write_table
from tsprop.sim.environment import EnvConfig, Environment, generate_log
from tsprop.utils.config import load_env_config
from tsprop.utils.logger import enable_verbose_logging, get_logger
from tsprop.utils.manifest import RunManifest
from tsprop.version import __version__

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DOMAIN = 3
EXIT_NUMERICAL = 4


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors become InputError so main() maps them to exit code 2."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _parse_sizes(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise InputError(f"--sizes expects comma-separated integers, got '{text}'.") from e


def _load_config(path: Optional[str]) -> EnvConfig:
    return EnvConfig() if path is None else load_env_config(path)


def _write_manifest(args, cfg: Optional[EnvConfig], seeds: List[int], **extra) -> None:
    manifest = RunManifest(
        command=" ".join(["tsprop", *args.argv]),
        config_hash=cfg.config_hash() if cfg is not None else "",
        seeds=seeds,
        inputs={k: v for k, v in vars(args).items() if k not in ("func", "argv")},
        extra=extra,
    )
    manifest.finish().write(args.out)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_propensity(args) -> int:
    belief_set = load_belief_set(args.input)
    if args.marginal:
        belief_set = belief_set.marginal()
    if args.engine == "quadrature":
        vector = quadrature_propensities(belief_set)
    elif args.engine == "grid":
        vector = grid_propensities(belief_set)
    else:
        vector = propensities(
            belief_set, route=args.route, target_abs_err=args.target_err, rng_seed=args.seed
        )
    payload = json.dumps(vector.to_dict())
    print(payload)
    if args.out:
        with open(args.out, "w") as f:
            f.write(payload + "\n")
        _write_manifest(args, None, [args.seed])
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    data = generate_log(Environment.from_config(cfg), cfg, args.size, args.seed)
    data.to_jsonl(args.out)
    _write_manifest(args, cfg, [args.seed, cfg.env_seed], records=len(data))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    names = EstimatorFactory.parse_names(args.estimators)
    train = LoggedDataset.from_jsonl(args.train)
    eval_data = LoggedDataset.from_jsonl(args.eval)
    result = evaluate(
        cfg, train, eval_data, names,
        seed=args.seed,
        jobs=args.jobs,
        target_equals_logging=args.target_equals_logging,
        ci_method=args.ci_method,
        max_weight=args.max_weight,
    )
    write_table(result.table, args.out)
    if args.stamp:
        eval_data.with_target(result.target_props).to_jsonl(args.stamp)
    _write_manifest(
        args, cfg, [args.seed, cfg.env_seed],
        ground_truth=result.truth.to_dict(),
        engine_deviation=result.engine_deviation,
        train_fingerprint=train.fingerprint(),
        eval_fingerprint=eval_data.fingerprint(),
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    names = EstimatorFactory.parse_names(args.estimators)
    train = LoggedDataset.from_jsonl(args.train) if args.train else None
    train = training_data(cfg, args.seed, train)
    result = sweep(
        cfg, _parse_sizes(args.sizes), args.replicates, names,
        seed=args.seed,
        jobs=args.jobs,
        train=train,
        ci_method=args.ci_method,
        max_weight=args.max_weight,
    )
    write_table(result.table, args.out)
    _write_manifest(
        args, cfg, [args.seed, cfg.env_seed],
        ground_truth=result.truth.to_dict(),
        train_fingerprint=train.fingerprint(),
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    estimators = _ArgumentParser(add_help=False)
    estimators.add_argument(
        "--estimators", default=",".join(ESTIMATOR_NAMES),
        help=f"comma-separated subset of {', '.join(ESTIMATOR_NAMES)}",
    )
    estimators.add_argument("--ci-method", choices=["normal", "bootstrap"], default="normal")
    estimators.add_argument("--max-weight", type=float, default=None, help="clip importance weights")

    parser = _ArgumentParser(prog="tsprop", description="Thompson-sampling propensities and off-policy evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propensity", parents=[common], help="propensity vector of a BeliefSet JSON file")
    p.add_argument("input", help="BeliefSet JSON path")
    p.add_argument("--route", choices=[r.value for r in BetaRoute], default=BetaRoute.AUTO.value)
    p.add_argument("--engine", choices=["auto", "quadrature", "grid"], default="auto")
    p.add_argument("--target-err", type=float, default=1e-5, help="MVN absolute error target")
    p.add_argument("--marginal", action="store_true", help="ignore joint_cov")
    p.add_argument("--out", default=None, help="also write the JSON here, with a manifest")
    p.set_defaults(func=cmd_propensity)

    p = sub.add_parser("simulate", parents=[common], help="draw a logged dataset")
    p.add_argument("config", nargs="?", default=None, help="EnvConfig JSON path")
    p.add_argument("--size", type=int, default=2048)
    p.add_argument("--out", required=True, help="JSON-Lines output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common, estimators], help="fit, stamp and evaluate")
    p.add_argument("config", nargs="?", default=None, help="EnvConfig JSON path")
    p.add_argument("--train", required=True, help="training JSON-Lines path")
    p.add_argument("--eval", required=True, help="evaluation JSON-Lines path")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--stamp", default=None, help="write the eval set with target propensities here")
    p.add_argument("--target-equals-logging", action="store_true", help="evaluate π_0 itself")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common, estimators], help="estimators across dataset sizes")
    p.add_argument("config", nargs="?", default=None, help="EnvConfig JSON path")
    p.add_argument("--sizes", default="100,1000,10000,100000", help="ascending comma-separated sizes")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--train", default=None, help="training JSON-Lines path (default: drawn from the seed)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if args.verbose:
            enable_verbose_logging()
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
