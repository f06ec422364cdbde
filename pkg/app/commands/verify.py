import logging

from app.dependencies import prepare
from app.exceptions import EXIT_OK, EXIT_VALIDATION
from app.schemas import VerifyConfig
from app.services.report_service import report_service
from app.services.verification_service import SCALES, SUITES, verification_service

logger = logging.getLogger(__name__)


def register(subparsers, parents):
    parser = subparsers.add_parser("verify", parents=parents, help="run a verification suite and report pass/fail")
    parser.add_argument("suite", choices=["all", *SUITES], help="suite to run")
    parser.add_argument("--scale", choices=SCALES, default=None,
                        help="quick (default) or full acceptance sizes; overrides the config")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    cfg, ctx = prepare(args, VerifyConfig)
    if args.scale is not None:
        cfg = cfg.model_copy(update={"scale": args.scale})
    report_service.mark_start()
    report = verification_service.run(args.suite, cfg.scale, ctx.seed, ctx.threads)
    report_service.write(report, ctx, cfg)
    if not report.passed:
        logger.error(f"Verification {args.suite} failed; see {ctx.out_dir}")
        return EXIT_VALIDATION
    logger.info(f"Verification {args.suite} passed")
    return EXIT_OK
