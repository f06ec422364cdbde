import argparse
import logging
import sys

from pydantic import ValidationError

from app import __version__
from app.commands import cell, geom_check, homogenize, measure, solve, verify
from app.config import settings
from app.dependencies import FORMATS
from app.exceptions import EXIT_OK, EXIT_VALIDATION, LabException
from app.logger import set_level

logger = logging.getLogger("app.main")

COMMANDS = (geom_check, cell, measure, solve, homogenize, verify)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed; overrides the config")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default {settings.effective_output_dir})")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads; results do not depend on it")
    common.add_argument("--format", choices=FORMATS, help="report format")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="kolmogorov-lab",
                                     description="Numerical laboratory for Kolmogorov-type operators")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        command.register(subparsers, [common])
    return parser


def _format_validation(e: ValidationError) -> str:
    problems = []
    for err in e.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<config>"
        problems.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(problems)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help and --version exit 0; usage errors exit 2
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION

    if args.log_level:
        set_level(args.log_level)

    try:
        return args.handler(args)
    except ValidationError as e:
        logger.error(_format_validation(e))
        return EXIT_VALIDATION
    except LabException as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(run())
