"""Module rendering metric reports as text tables, JSON and CSV."""

import csv
from dataclasses import asdict, is_dataclass
from enum import Enum
import json
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from typegram.metrics.selective import SelectiveReport

COVERAGE_COLUMNS = (
    "tau",
    "total",
    "kept",
    "correct",
    "coverage",
    "sel_acc",
    "var_risk",
    "struct_kept",
    "struct_correct",
    "struct_risk",
)


def format_value(value: Any, percent: bool = False) -> str:
    """Render one table cell; None prints as ``-``."""
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value * 100:.2f}%" if percent else f"{value:.4f}"
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Align ``rows`` under ``headers``; numbers right-aligned, text left-aligned."""
    cells = [[str(h) for h in headers]] + [
        [c if isinstance(c, str) else format_value(c) for c in row] for row in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    numeric = [
        all(not isinstance(row[i], str) for row in rows) if rows else False
        for i in range(len(headers))
    ]
    lines = []
    for index, row in enumerate(cells):
        parts = [
            cell.rjust(width) if numeric[i] else cell.ljust(width)
            for i, (cell, width) in enumerate(zip(row, widths))
        ]
        lines.append("  ".join(parts).rstrip())
        if index == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def tau_label(tau: Optional[float]) -> str:
    """Render a threshold, with None as ``none``."""
    return "none" if tau is None else f"{tau:.2f}"


def coverage_risk_table(reports: Sequence[SelectiveReport]) -> str:
    """Text table of a coverage-risk curve."""
    rows = [
        [
            tau_label(r.tau),
            r.kept,
            format_value(r.coverage, percent=True),
            r.sel_acc,
            r.var_risk,
            r.struct_risk,
        ]
        for r in reports
    ]
    return format_table(
        ["tau", "kept", "coverage", "sel_acc", "var_risk", "struct_risk"], rows
    )


def to_jsonable(value: Any) -> Any:
    """Convert dataclasses, enums, tuples and non-string keys for ``json.dump``."""
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {
            k if isinstance(k, str) else str(to_jsonable(k)): to_jsonable(v)
            for k, v in value.items()
        }
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


def write_json_report(path: Union[str, Path], report: dict[str, Any]) -> None:
    """Write a report document as indented JSON."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(to_jsonable(report), handle, indent=2, sort_keys=True)
        handle.write("\n")


def write_coverage_csv(
    path: Union[str, Path], reports: Sequence[SelectiveReport]
) -> None:
    """Write a coverage-risk curve as CSV, one row per threshold."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(COVERAGE_COLUMNS)
        for report in reports:
            row = asdict(report)
            row["tau"] = tau_label(report.tau)
            writer.writerow(
                ["" if row[c] is None else row[c] for c in COVERAGE_COLUMNS]
            )
