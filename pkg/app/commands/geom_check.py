from app.dependencies import prepare
from app.exceptions import EXIT_OK
from app.schemas import GeomCheckConfig
from app.services.experiment_service import experiment_service
from app.services.report_service import report_service


def register(subparsers, parents):
    parser = subparsers.add_parser("geom-check", parents=parents,
                                   help="group law, quasi-distance, ball volume, cube and Whitney checks")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    cfg, ctx = prepare(args, GeomCheckConfig)
    report_service.mark_start()
    report = experiment_service.geom_check(cfg, ctx.seed)
    report_service.write(report, ctx, cfg)
    return EXIT_OK
