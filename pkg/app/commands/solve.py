from app.dependencies import prepare
from app.exceptions import EXIT_OK
from app.schemas import SolveConfig
from app.services.experiment_service import experiment_service
from app.services.report_service import report_service


def register(subparsers, parents):
    parser = subparsers.add_parser("solve", parents=parents,
                                   help="finite-difference Dirichlet solve (elliptic, parabolic, kolmogorov)")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    cfg, ctx = prepare(args, SolveConfig)
    report_service.mark_start()
    report_service.write(experiment_service.solve(cfg), ctx, cfg)
    return EXIT_OK
