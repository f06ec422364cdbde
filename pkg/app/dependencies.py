import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from app import __version__
from app.config import settings
from app.exceptions import ValidationFailure
from app.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv", "both")


@dataclass(frozen=True)
class RunContext:
    command: str
    seed: int
    out_dir: Path
    threads: int
    fmt: str
    config_hash: str
    version: str = __version__

    @property
    def provenance_line(self) -> str:
        return f"config_hash={self.config_hash} seed={self.seed} version={self.version}"

    def provenance(self, cfg: ExperimentConfig) -> dict:
        """Everything the result depends on: resolved config, numerical settings, seed."""
        return {
            "command": self.command,
            "config": cfg.model_dump(mode="json"),
            "config_hash": self.config_hash,
            "seed": self.seed,
            "settings": settings.model_dump(exclude={"output_dir", "threads", "log_level", "report_format",
                                                     "html_summary"}),
            "version": self.version,
        }


# Config loading
def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ValidationFailure(f"cannot read config {path}: {e.strerror}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationFailure(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ValidationFailure(f"{path}: top level must be a JSON object")
    return raw


def config_hash(cfg: ExperimentConfig, command: str) -> str:
    canonical = json.dumps({"command": command, "config": cfg.model_dump(mode="json", exclude={"seed"})},
                           sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _check_seed(seed: int) -> int:
    if not 0 <= seed < 1 << 64:
        raise ValidationFailure(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


# Per-run resolution: flags win over the config file, which wins over settings
def resolve_context(args, cfg: ExperimentConfig) -> RunContext:
    if args.seed is not None:
        seed = args.seed
    elif cfg.seed is not None:
        seed = cfg.seed
    else:
        seed = settings.default_seed
    threads = args.threads or settings.threads
    if threads < 1:
        raise ValidationFailure(f"--threads must be >= 1, got {threads}")
    fmt = args.format or settings.report_format
    if fmt not in FORMATS:
        raise ValidationFailure(f"format must be one of {FORMATS}, got {fmt!r}")
    out_dir = Path(args.out or settings.effective_output_dir)
    # core modules read the worker count from settings
    settings.threads = threads
    ctx = RunContext(args.command, _check_seed(seed), out_dir, threads, fmt, config_hash(cfg, args.command))
    logger.info(f"Run {ctx.command}: seed={ctx.seed} threads={ctx.threads} out={ctx.out_dir} "
                f"config_hash={ctx.config_hash}")
    return ctx


def prepare(args, model: type[ExperimentConfig]) -> tuple[ExperimentConfig, RunContext]:
    """Config file -> validated model -> run context; pydantic errors propagate to the entry point."""
    cfg = model.model_validate(load_config(args.config))
    return cfg, resolve_context(args, cfg)
