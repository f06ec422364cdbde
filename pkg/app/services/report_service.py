import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import markdown
import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from app.config import settings
from app.core.grid import GridFunction
from app.dependencies import RunContext
from app.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
HTML_TABLE_ROWS = 50


@dataclass
class Report:
    name: str
    payload: dict
    tables: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    # name -> (grid function, axis, index)
    slices: dict = field(default_factory=dict)
    passed: bool | None = None


def plain(value):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class ReportService:
    def __init__(self):
        self._env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=select_autoescape(["html"]))
        self._started = time.time()

    def mark_start(self):
        self._started = time.time()

    def write(self, report: Report, ctx: RunContext, cfg: ExperimentConfig) -> list[Path]:
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        document = plain({"provenance": ctx.provenance(cfg), "result": report.payload})
        if report.passed is not None:
            document["passed"] = report.passed
        written = []
        if ctx.fmt in ("json", "both"):
            written.append(self._write_json(ctx.out_dir / f"{report.name}.json", document))
        if ctx.fmt in ("csv", "both"):
            for table, rows in report.tables.items():
                written.append(self._write_csv(ctx.out_dir / f"{report.name}.{table}.csv", rows, ctx))
        for grid_name, gf in report.grids.items():
            written.append(self._write_grid(ctx.out_dir / f"{report.name}.{grid_name}.txt", gf, ctx))
        if ctx.fmt in ("csv", "both"):
            for slice_name, (gf, axis, index) in report.slices.items():
                path = ctx.out_dir / f"{report.name}.{slice_name}.csv"
                gf.export_csv_slice(path, axis, index, comment=ctx.provenance_line)
                written.append(path)
        if settings.html_summary:
            written.append(self._write_html(ctx.out_dir / f"{report.name}.html", report, document))
        written.append(self._write_meta(ctx.out_dir / f"{report.name}.meta.json", ctx, written))
        logger.info(f"Wrote {len(written)} artifacts to {ctx.out_dir}")
        return written

    def _write_json(self, path: Path, document: dict) -> Path:
        path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n")
        return path

    def _write_csv(self, path: Path, rows: list[dict], ctx: RunContext) -> Path:
        rows = plain(rows)
        columns = []
        for row in rows:
            columns += [k for k in row if k not in columns]
        with open(path, "w", newline="") as fh:
            fh.write(f"# {ctx.provenance_line}\n")
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in row.items()})
        return path

    def _write_grid(self, path: Path, gf: GridFunction, ctx: RunContext) -> Path:
        gf.export_text(path, comment=ctx.provenance_line)
        return path

    def _write_meta(self, path: Path, ctx: RunContext, written: list[Path]) -> Path:
        # timestamps live here so the JSON report stays byte-identical across reruns
        meta = {
            "config_hash": ctx.config_hash,
            "artifacts": [p.name for p in written],
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - self._started, 3),
            "threads": ctx.threads,
        }
        path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        return path

    def _write_html(self, path: Path, report: Report, document: dict) -> Path:
        html = markdown.markdown(summary_markdown(report, document), extensions=["tables", "fenced_code"])
        template = self._env.get_template("summary.html")
        path.write_text(template.render(title=report.name, content=html, passed=report.passed))
        return path


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, dict)):
        return f"`{json.dumps(v)}`"
    return str(v)


def summary_markdown(report: Report, document: dict) -> str:
    prov = document["provenance"]
    lines = [f"# {report.name}", "",
             f"Command `{prov['command']}`, seed {prov['seed']}, config hash `{prov['config_hash']}`, "
             f"version {prov['version']}.", ""]
    scalars = {k: v for k, v in document["result"].items() if not isinstance(v, (list, dict))}
    if scalars:
        lines += ["| quantity | value |", "|---|---|"]
        lines += [f"| {k} | {_cell(v)} |" for k, v in sorted(scalars.items())]
        lines.append("")
    for table, rows in report.tables.items():
        rows = plain(rows)[:HTML_TABLE_ROWS]
        if not rows:
            continue
        columns = list(rows[0])
        lines += [f"## {table}", "", "| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
        lines += ["| " + " | ".join(_cell(r.get(c)) for c in columns) + " |" for r in rows]
        lines.append("")
    lines += ["## Configuration", "", "```json", json.dumps(prov["config"], sort_keys=True, indent=2), "```"]
    return "\n".join(lines)


report_service = ReportService()
