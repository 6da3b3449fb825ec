import argparse
import logging
import sys
from typing import List, Optional

# Config & Commands
from core.config import settings
from core.errors import EXIT_IO, EXIT_USAGE, RffError
from commands import COMMAND_GROUPS

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rff",
        description=f"{settings.PROJECT_NAME} {settings.VERSION}: RF fingerprinting models for edge devices",
    )
    parser.add_argument("--config", default=None, help="JSON config layered over data/system_config.json")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for group in COMMAND_GROUPS:
        group.register(subparsers)
    return parser


def _configure_logging(args) -> None:
    # 로깅 설정
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, dispatch, and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 after --help
        return EXIT_USAGE if e.code not in (0, None) else 0

    _configure_logging(args)
    try:
        settings.use_config_file(args.config)
        return args.handler(args)
    except RffError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed on '{e.filename}': {e.strerror or e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(run())
