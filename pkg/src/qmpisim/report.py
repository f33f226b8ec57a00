"""Versioned JSON report: construction, schema validation and CSV export."""

from __future__ import annotations

import csv
import io
import json
from datetime import datetime, timezone
from typing import Optional

import jsonschema

from . import __version__

SCHEMA_VERSION = 1
CSV_COLUMNS = ("N", "delay_tree", "delay_cat", "epr")

_number_map = {"type": "object", "additionalProperties": {"type": "number"}}

COST_SCHEMA = {
    "type": "object",
    "required": ["epr_pairs", "classical_bits", "fixup_bits",
                 "critical_path_delay", "per_node_busy_time"],
    "properties": {
        "epr_pairs": {"type": "integer", "minimum": 0},
        "classical_bits": {"type": "integer", "minimum": 0},
        "fixup_bits": {"type": "integer", "minimum": 0},
        "critical_path_delay": {"type": "number", "minimum": 0},
        "critical_path_delay_exact": {"type": "string"},
        "epr_rounds": {"type": "integer", "minimum": 0},
        "per_node_busy_time": _number_map,
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qmpi-sim report",
    "type": "object",
    "required": ["schema_version", "command", "config", "results", "cost", "provenance"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"type": "string"},
        "config": {"type": "object"},
        "results": {
            "type": "object",
            "properties": {
                "fidelity": {"type": "number", "minimum": 0, "maximum": 1 + 1e-9},
                "measurements": {"type": "array", "items": {"type": "integer", "enum": [0, 1]}},
                "table": {"type": "array", "items": {"type": "object"}},
                "diagnostics": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["level", "message"],
                        "properties": {
                            "level": {"enum": ["error", "warning"]},
                            "message": {"type": "string"},
                        },
                    },
                },
            },
        },
        "cost": {"oneOf": [COST_SCHEMA, {"type": "null"}]},
        "provenance": {
            "type": "object",
            "required": ["seed", "version", "timestamp"],
            "properties": {
                "seed": {"type": ["integer", "null"]},
                "version": {"type": "string"},
                "timestamp": {"type": "string"},
            },
        },
    },
}


def build_report(command: str, config: dict, results: dict, cost: Optional[dict],
                 seed: Optional[int], timestamp: Optional[str] = None) -> dict:
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "results": results,
        "cost": cost,
        "provenance": {"seed": seed, "version": __version__, "timestamp": timestamp},
    }
    validate_report(report)
    return report


def validate_report(report: dict) -> None:
    """Raise jsonschema.ValidationError if ``report`` does not match the schema."""
    jsonschema.validate(report, REPORT_SCHEMA)


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def strip_timestamp(report: dict) -> dict:
    out = json.loads(json.dumps(report))
    out["provenance"].pop("timestamp", None)
    return out


def bench_csv(table: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in table:
        writer.writerow(row)
    return buf.getvalue()
