import argparse
import json
import logging
import sys
import traceback
from typing import List, Optional

from app.core.config import settings
from app.core.exceptions import AppException, ConfigError

# Configure logging
logging.basicConfig(
    level=logging.DEBUG if settings.DEBUG else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)

# Reduce noisy third-party loggers
for noisy_logger in ["joblib", "numexpr", "urllib3", "matplotlib"]:
    logging.getLogger(noisy_logger).setLevel(logging.WARNING)

from app.cli.service import cmd_balance, cmd_estimate, cmd_simulate, load_config, validate_config  # noqa: E402


EXIT_CODES = """exit codes:
  0  success
  1  unexpected error
  2  invalid run config, data file contents or formula
  3  model fitting failed or every selected estimator failed
  4  a file could not be read or written
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mediation-menu",
        description=f"{settings.APP_NAME} {settings.APP_VERSION}: natural direct and indirect effect estimators",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("estimate", "run the estimator menu on a dataset"),
        ("balance", "balance diagnostics and weight summaries for the pseudo samples"),
        ("simulate", "simulation experiments against the Monte-Carlo truth"),
    ):
        p = sub.add_parser(
            name, help=help_text, epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter
        )
        p.add_argument("--config", required=True, help="run config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="master seed; overrides the config")
        p.add_argument("--workers", type=int, default=settings.DEFAULT_WORKERS, help="parallel worker cap")
        p.add_argument("--out", default=None, help="output directory; overrides the config")
    return parser


def _error(payload: dict) -> None:
    sys.stderr.write(json.dumps({"error": payload}) + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1", errors=[f"workers: {args.workers}"])
        cfg = validate_config(load_config(args.config), args.command, seed=args.seed, out=args.out)
        logger.info(f"Starting {args.command} (seed={cfg.seed}, workers={args.workers})")
        if args.command == "estimate":
            code = cmd_estimate(cfg, workers=args.workers)
        elif args.command == "balance":
            code = cmd_balance(cfg)
        else:
            code = cmd_simulate(cfg, workers=args.workers)
        logger.info(f"Finished {args.command} with exit code {code}")
        return code
    except AppException as e:
        logger.error(f"{e.code}: {e.message}")
        _error(e.to_dict())
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}\n{traceback.format_exc()}")
        _error({"code": "INTERNAL_ERROR", "message": "An unexpected error occurred", "details": None})
        return 1


if __name__ == "__main__":
    sys.exit(main())
