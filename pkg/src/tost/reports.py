"""CSV and JSON report writers.

Both formats are versioned. JSON documents follow the schemas shipped in
``tost/schemas``; CSV files have one header row and one row per trial, check,
layer or benchmark cell, with the run seed repeated in a ``seed`` column.
Nothing time-dependent is written except the benchmark timings themselves.
"""

from __future__ import annotations

import csv
import io
import json
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

SCHEMA_VERSION = 1
FORMATS = ("csv", "json")


def plain(obj: Any) -> Any:
    """Recursively turn numpy scalars and arrays into JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def suite_document(command: str, seed: int, config: dict, passed: bool, summary: dict, rows: list[dict]) -> dict:
    return plain(
        {
            "schema": "tost.report",
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "seed": seed,
            "config": config,
            "passed": bool(passed),
            "summary": summary,
            "rows": rows,
        }
    )


def bench_document(report_dict: dict, config: dict, passed: bool, checks: list[tuple[str, bool, str]]) -> dict:
    doc = dict(report_dict)
    doc["command"] = "bench"
    doc["config"] = config
    doc["passed"] = bool(passed)
    doc["checks"] = [{"check": name, "passed": ok, "detail": detail} for name, ok, detail in checks]
    return plain(doc)


def csv_text(rows: Iterable[dict], columns: Optional[list[str]] = None, extra: Optional[dict] = None) -> str:
    """Render rows as CSV. ``extra`` columns (constant per run) go first and
    take precedence over row keys of the same name."""
    rows = [plain(r) for r in rows]
    extra = plain(extra or {})
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns and k not in extra)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=[*extra, *columns], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({**{k: r.get(k, "") for k in columns}, **extra})
    return buf.getvalue()


def json_text(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    if path.parent != Path("."):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def load_schema(name: str) -> dict:
    """``name`` is ``"report"`` or ``"bench"``."""
    return json.loads(resources.files("tost").joinpath("schemas", f"{name}.schema.json").read_text())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
