"""
Command-line driver.

    python -m backend.app.cli simulate --config sonarscale.toml --out artifacts
    python -m backend.app.cli pipeline --seed 3 --measure gaussian-kl
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from .config import configure_logging, load_pipeline_config
from .errors import ConfigError, StageError
from .graph import run_pipeline, run_stage, stage_names

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonarscale",
        description="Topographic projection and beam analysis of multibeam sonar data.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON pipeline configuration")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="artifact directory")
    common.add_argument("--measure", choices=["euclidean", "sqeuclidean", "kl", "gaussian-kl"])
    common.add_argument("--deviation", choices=["squared", "bregman-xlogx"])
    common.add_argument("--latent-dim", type=int, choices=[1, 2, 3])
    common.add_argument(
        "--force", action="store_true", help="consume artifacts produced by a different configuration"
    )
    common.add_argument("--log-level", help="logging level (default from SONARSCALE_LOG_LEVEL)")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in stage_names():
        subparsers.add_parser(name, parents=[common], help=f"run the {name} stage")
    subparsers.add_parser("pipeline", parents=[common], help="run every stage in order")
    serve = subparsers.add_parser("serve", parents=[common], help="serve the projection API")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides.setdefault("paths", {})["out_dir"] = args.out
    train: Dict[str, Any] = {}
    if args.measure is not None:
        train["measure"] = args.measure
    if args.deviation is not None:
        train["deviation"] = args.deviation
    if args.latent_dim is not None:
        train["latent_dim"] = args.latent_dim
    if train:
        overrides["train"] = train
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    configure_logging(args.log_level)

    try:
        config = load_pipeline_config(args.config, overrides_from_args(args))
    except ConfigError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return 2

    if args.command == "serve":
        from .main import serve

        serve(args.host, args.port)
        return 0

    try:
        if args.command == "pipeline":
            state = run_pipeline(config, force=args.force)
        else:
            state = run_stage(args.command, config, force=args.force)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    for line in state.summaries:
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
