from app.dependencies import prepare
from app.exceptions import EXIT_OK
from app.schemas import MeasureConfig
from app.services.experiment_service import experiment_service
from app.services.report_service import report_service


def register(subparsers, parents):
    parser = subparsers.add_parser("measure", parents=parents,
                                   help="Monte Carlo elliptic, caloric or Kolmogorov measure histogram")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    cfg, ctx = prepare(args, MeasureConfig)
    report_service.mark_start()
    report = experiment_service.measure(cfg, ctx.seed, ctx.threads)
    report_service.write(report, ctx, cfg)
    return EXIT_OK
