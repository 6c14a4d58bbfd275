"""Machine-readable run reports (JSON document plus a flat CSV table)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import __version__

SCHEMA_VERSION = "1.0"
REPORT_NAME = "report.json"
TABLE_NAME = "table.csv"

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "tool_version": {"type": "string"},
        "subcommand": {"type": "string"},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "summary": {"type": "object"},
        "table": {
            "type": "object",
            "properties": {
                "columns": {"type": "array", "items": {"type": "string"}},
                "rows": {"type": "integer", "minimum": 0},
            },
            "required": ["columns", "rows"],
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "tool_version", "subcommand", "seed", "config", "summary", "table"],
    "additionalProperties": False,
}


@dataclass
class RunResult:
    subcommand: str
    seed: int
    config: dict
    summary: dict
    columns: list
    rows: list = field(default_factory=list)
    exit_code: int = 0


def clean(obj):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def report_document(result: RunResult) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "subcommand": result.subcommand,
        "seed": int(result.seed),
        "config": clean(result.config),
        "summary": clean(result.summary),
        "table": {"columns": list(result.columns), "rows": len(result.rows)},
    }
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


def render_table(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if v is None else v for v in clean([row.get(c) for c in columns])])
    return buf.getvalue()


def emit_report(result: RunResult, out_dir, fmt: str = "both") -> list:
    """Write ``report.json`` and/or ``table.csv`` into ``out_dir``; returns the paths written.

    ``fmt`` is ``"document"``, ``"table"`` or ``"both"``.
    """
    if fmt not in ("document", "table", "both"):
        raise ValueError("fmt must be 'document', 'table' or 'both'")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt in ("document", "both"):
        path = os.path.join(out_dir, REPORT_NAME)
        with open(path, "w") as fh:
            json.dump(report_document(result), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    if fmt in ("table", "both"):
        path = os.path.join(out_dir, TABLE_NAME)
        with open(path, "w") as fh:
            fh.write(render_table(result.columns, result.rows))
        written.append(path)
    return written


def load_report(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc
