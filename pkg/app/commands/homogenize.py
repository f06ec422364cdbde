from app.dependencies import prepare
from app.exceptions import EXIT_OK
from app.schemas import HomogenizeConfig
from app.services.experiment_service import experiment_service
from app.services.report_service import report_service


def register(subparsers, parents):
    parser = subparsers.add_parser("homogenize", parents=parents,
                                   help="epsilon sweep of oscillating against homogenized solves")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    cfg, ctx = prepare(args, HomogenizeConfig)
    report_service.mark_start()
    report_service.write(experiment_service.homogenize(cfg), ctx, cfg)
    return EXIT_OK
