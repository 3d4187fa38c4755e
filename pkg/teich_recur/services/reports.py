from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from teich_recur import __version__
from teich_recur.models import SojournSequence

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent.parent / "templates"
VERSION_LINE = f"# teich-recur {__version__}"

_env = Environment(
    loader=FileSystemLoader(str(TEMPLATES_DIR)),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Version line, header, then one line per row; floats keep full precision."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(VERSION_LINE + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])
    logger.debug("wrote %s", path)
    return path


SOJOURN_HEADER = ["idx", "kind", "tau"]


def sojourn_rows(sequences: Iterable[SojournSequence]) -> List[tuple]:
    """Unmerged sojourns, one row each; idx restarts at 0 for every sequence."""

    rows = []
    for seq in sequences:
        for k, tau in enumerate(seq.taus):
            rows.append((k, "in" if k % 2 == 0 else "out", float(tau)))
    return rows


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if math.isfinite(number) else None
    if hasattr(value, "value"):
        return value.value
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def render_plot_script(
    kind: str,
    csv_name: str,
    x: str,
    columns: Sequence[str],
    log_y: bool = True,
    dashed: Sequence[str] = ("bound_overlay",),
    title: Optional[str] = None,
) -> str:
    template = _env.get_template("plot_curve.py.j2")
    return template.render(
        kind=kind,
        csv_name=csv_name,
        x=x,
        columns=list(columns),
        log_y=log_y,
        dashed=list(dashed),
        title=title or kind,
        version=__version__,
    )


def write_plot_script(out_dir: Path, kind: str, x: str, columns: Sequence[str], log_y: bool = True) -> Path:
    path = Path(out_dir) / f"{kind}_plot.py"
    path.write_text(render_plot_script(kind, f"{kind}.csv", x, columns, log_y), encoding="utf-8")
    logger.info("plot script written to %s", path)
    return path


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def build_summary_text(kind: str, summary: Dict[str, Any], checks: Dict[str, bool]) -> str:
    lines: List[str] = [f"Experiment: {kind}", f"Tool version: {__version__}", ""]
    scalars = {k: v for k, v in sorted(summary.items()) if not isinstance(v, (dict, list))}
    for key, value in scalars.items():
        lines.append(f"{key}: {_format_value(value)}")
    if checks:
        lines.append("")
        lines.append("Checks:")
        for name, ok in sorted(checks.items()):
            lines.append(f"  {name}: {'pass' if ok else 'FAIL'}")
    failed = sum(not ok for ok in checks.values())
    lines.append("")
    lines.append("All checks passed." if failed == 0 else f"{failed} check(s) failed.")
    return "\n".join(lines)
