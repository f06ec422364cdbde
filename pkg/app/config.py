from pydantic_settings import BaseSettings

class Settings(BaseSettings):
    # Output directory override; --out on the command line wins over it
    output_dir: str = ""
    default_seed: int = 0
    threads: int = 1
    log_level: str = "INFO"

    # json, csv or both
    report_format: str = "both"
    # Also render each report as an HTML summary page
    html_summary: bool = False

    # Cell problem
    cell_grid: int = 256

    # Dini modulus sampling: x grid x lambda pairs x gap grid
    dini_x_grid: int = 256
    dini_pairs: int = 256
    dini_gaps: int = 16
    dini_cutoff: float = 1e-6

    # Non-tangential cones
    cone_samples: int = 4096
    cone_eta: float = 2.0

    # Monte Carlo
    mc_batch_size: int = 4096

    # Dyadic systems refuse to materialize more cubes than this
    max_cubes: int = 500000

    # Iterative solvers
    solver_tol: float = 1e-10
    solver_maxiter: int = 20000

    @property
    def effective_output_dir(self):
        return self.output_dir or "results"

    class Config:
        env_file = ".env"

settings = Settings()
