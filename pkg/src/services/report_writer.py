"""CSV / JSON output and the pass/fail report over finished runs."""

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..utils.logger import get_logger

logger = get_logger(__name__)

SUMMARY_FILE = "summary.json"


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class ReportWriter:
    """Writes the tables and the summary of one run into ``out_dir``."""

    def __init__(self, out_dir: Path, fmt: str = "csv"):
        """Initialize the writer.

        Args:
            out_dir: Directory for this run's files
            fmt: Table format, ``csv`` or ``json``
        """
        self.out_dir = Path(out_dir)
        self.fmt = fmt

    def write_table(
        self, name: str, rows: Sequence[Dict[str, Any]], fieldnames: Optional[List[str]] = None
    ) -> Path:
        """Write one table; floats keep full ``repr`` precision."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self.fmt == "json":
            path = self.out_dir / f"{name}.json"
            with open(path, "w", encoding="utf-8") as f:
                json.dump(_jsonable(list(rows)), f, indent=2)
            return path

        path = self.out_dir / f"{name}.csv"
        if fieldnames is None:
            fieldnames = list(rows[0].keys()) if rows else []
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
        logger.debug(f"wrote {len(rows)} rows to {path}")
        return path

    def write_json(self, filename: str, data: Dict[str, Any]) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / filename
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(data), f, indent=2, sort_keys=True)
        return path

    def write_summary(self, summary: Dict[str, Any]) -> Path:
        return self.write_json(SUMMARY_FILE, summary)


def collect_summaries(root: Path) -> List[Dict[str, Any]]:
    """Every ``summary.json`` below ``root``, sorted by path."""
    summaries = []
    for path in sorted(Path(root).rglob(SUMMARY_FILE)):
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"Skipping unreadable summary {path}: {e}")
            continue
        data["_path"] = str(path)
        summaries.append(data)
    return summaries


def report_rows(summaries: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    return [
        {
            "experiment": s.get("experiment"),
            "passed": bool(s.get("passed")),
            "checks": len(s.get("checks", {})),
            "failed_checks": ",".join(k for k, v in s.get("checks", {}).items() if not v),
            "warnings": len(s.get("warnings", [])),
            "path": s.get("_path"),
        }
        for s in summaries
    ]


def format_report(rows: Sequence[Dict[str, Any]]) -> str:
    if not rows:
        return "No experiment summaries found."
    lines = [f"{'experiment':<24} {'result':<6} {'failed checks'}"]
    for row in rows:
        result = "PASS" if row["passed"] else "FAIL"
        lines.append(f"{str(row['experiment']):<24} {result:<6} {row['failed_checks']}")
    return "\n".join(lines)
