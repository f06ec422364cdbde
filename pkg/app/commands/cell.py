from app.dependencies import prepare
from app.exceptions import EXIT_OK
from app.schemas import CellConfig
from app.services.experiment_service import experiment_service
from app.services.report_service import report_service


def register(subparsers, parents):
    parser = subparsers.add_parser("cell", parents=parents, help="periodic cell problem and effective matrix")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    cfg, ctx = prepare(args, CellConfig)
    report_service.mark_start()
    report_service.write(experiment_service.cell(cfg), ctx, cfg)
    return EXIT_OK
