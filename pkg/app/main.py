"""Command-line entry point: ``python -m app.main <command> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys

from app.core.config import build_run_config
from app.core.errors import ConfigError, DcdrError
from app.services import orchestrator
from app.services.logging import configure_logging, log_error
from app.services.session_log import close_run_log

# flag dest -> path inside RunConfig
FLAG_PATHS = {
    "seed": ("seed",),
    "threads": ("threads",),
    "log_level": ("log_level",),
    "out": ("paths", "out_dir"),
    "data": ("paths", "data_dir"),
    "checkpoint": ("paths", "checkpoint"),
    "session": ("paths", "session"),
    "lo": ("sequence", "l_o"),
    "ls": ("sequence", "l_s"),
    "beta": ("noise", "beta"),
    "steps": ("noise", "steps"),
    "dim": ("model", "dim"),
    "hidden": ("model", "hidden"),
    "tau": ("model", "tau"),
    "op": ("train", "op"),
    "epochs": ("train", "epochs"),
    "evaluator_epochs": ("train", "evaluator_epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "learning_rate"),
    "optimizer": ("train", "optimizer"),
    "eval_every": ("train", "eval_every"),
    "beam": ("inference", "beam"),
    "max_steps": ("inference", "max_steps"),
    "epsilon": ("inference", "epsilon"),
    "condition": ("inference", "condition_policy"),
    "mask": ("inference", "condition_mask"),
    "top_m": ("inference", "token_top_m"),
    "users": ("world", "n_users"),
    "items": ("world", "n_items"),
    "sessions": ("world", "n_sessions"),
    "topics": ("world", "n_topics"),
    "penalty": ("world", "redundancy_penalty"),
    "noise": ("world", "noise"),
    "position_bias": ("world", "position_bias"),
    "history_len": ("world", "history_len"),
    "test_fraction": ("world", "test_fraction"),
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--log-level", dest="log_level")
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="dataset directory (train/ and test/)")
    return p


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--op", choices=["perm", "token"])
    p.add_argument("--beta", type=float)
    p.add_argument("--steps", type=int, help="diffusion steps T")
    p.add_argument("--dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--evaluator-epochs", dest="evaluator_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--eval-every", dest="eval_every", type=int)


def _inference_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--condition", choices=["all-positive", "mask"])
    p.add_argument("--mask", type=_int_list, help="expected condition, e.g. 1,0,1,1,1,1")
    p.add_argument("--top-m", dest="top_m", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="dcdr", description="Discrete conditional diffusion reranker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--sessions", type=int)
    p.add_argument("--lo", type=int)
    p.add_argument("--topics", type=int)
    p.add_argument("--penalty", type=float, help="redundancy penalty")
    p.add_argument("--noise", type=float)
    p.add_argument("--position-bias", dest="position_bias", type=_float_list)
    p.add_argument("--history-len", dest="history_len", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)

    p = sub.add_parser("train", parents=[common], help="fit evaluator and denoiser")
    _model_flags(p)

    p = sub.add_parser("rerank", parents=[common], help="rerank a dataset or one session JSON")
    _inference_flags(p)
    p.add_argument("--session", help="single-session JSON (debug mode)")

    p = sub.add_parser("evaluate", parents=[common], help="compare logged, greedy and DCDR orders")
    _inference_flags(p)
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples")

    p = sub.add_parser("analyze-chain", parents=[common], help="TV distance to uniform over t")
    p.add_argument("--op", choices=["perm", "token"])
    p.add_argument("--lo", type=int)
    p.add_argument("--ls", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--t-max", dest="t_max", type=int, default=50)

    p = sub.add_parser("sweep", parents=[common], help="metric trend over one parameter")
    p.add_argument("--param", required=True, choices=sorted(orchestrator.SWEEP_FIELDS))
    p.add_argument("--values", required=True, type=_float_list)
    _model_flags(p)
    _inference_flags(p)
    return parser


def collect_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    for dest, path in FLAG_PATHS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = overrides
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return overrides


def _sweep_values(param: str, values: list[float]) -> list:
    if param == "beta":
        return values
    if any(v != int(v) for v in values):
        raise ConfigError(f"--values for {param} must be integers")
    return [int(v) for v in values]


def dispatch(args: argparse.Namespace) -> dict:
    cfg = build_run_config(args.config, collect_overrides(args))
    configure_logging(cfg.log_level)
    if args.command == "gen-data":
        return orchestrator.gen_data(cfg)
    if args.command == "train":
        return orchestrator.train(cfg)
    if args.command == "rerank":
        return orchestrator.rerank(cfg)
    if args.command == "evaluate":
        return orchestrator.evaluate(cfg, args.bootstrap)
    if args.command == "analyze-chain":
        if args.t_max < 1:
            raise ConfigError("--t-max must be >= 1")
        return orchestrator.analyze_chain(cfg, args.t_max)
    return orchestrator.sweep(cfg, args.param, _sweep_values(args.param, args.values))


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        result = dispatch(args)
    except ConfigError as e:
        print(f"error[{e.code}]: {e.detail}", file=sys.stderr)
        return 2
    except DcdrError as e:
        log_error(args.command, f"{e.code}: {e.detail} {e.trace}")
        print(f"error[{e.code}]: {e.detail}", file=sys.stderr)
        return 1
    except Exception as e:
        log_error(args.command, repr(e))
        print(f"error[internal]: {e}", file=sys.stderr)
        return 1
    finally:
        close_run_log()
    print(json.dumps(result, indent=2, default=str))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
