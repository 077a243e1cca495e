"""Deterministic CSV/JSON output for every command and pipeline stage."""

import json
import logging
import numbers
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import pandas as pd

from .errors import ExportError, SpecificationError

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json")


def fmt_coord(value: float) -> str:
    """Coordinates carry two decimals."""
    return f"{value:.2f}"


def fmt_prob(value: float) -> str:
    """Probabilities and losses carry nine significant digits."""
    return f"{value:.9g}"


class OutputProcessor:
    """Writes tables and JSON documents under one output directory.

    Every file written is recorded with its record count, so a run can end
    with ``write_manifest()``. Formatters are applied before writing, so
    identical inputs give identical bytes.
    """

    def __init__(self, outputs_path: str | Path, fmt: str = "csv"):
        if fmt not in FORMATS:
            raise SpecificationError(f"Unknown output format '{fmt}', expected one of {FORMATS}")
        self.outputs_path = Path(outputs_path)
        self.fmt = fmt
        self.records: dict[str, int] = {}
        try:
            self.outputs_path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ExportError(self.outputs_path, str(e)) from e

    def path_for(self, name: str) -> Path:
        return self.outputs_path / name

    def write_table(
        self,
        name: str,
        columns: Sequence[str],
        rows: Sequence[Sequence[Any]],
        formats: Optional[dict[str, Callable[[Any], str]]] = None,
    ) -> Path:
        """Write ``rows`` as ``<name>.csv`` or ``<name>.json`` depending on the format.

        Args:
            name: file stem
            columns: header, in output order
            rows: one sequence per record; None becomes an empty field (CSV) or null (JSON)
            formats: per-column formatter, e.g. ``fmt_coord``

        Returns:
            Path of the file written.
        """
        formats = formats or {}
        formatted = [
            [None if value is None else (formats[col](value) if col in formats else str(value)) for col, value in zip(columns, row)]
            for row in rows
        ]
        path = self.path_for(f"{name}.{self.fmt}")
        if self.fmt == "csv":
            frame = pd.DataFrame(formatted, columns=list(columns), dtype=object)
            self._guard(path, lambda: frame.to_csv(path, index=False, lineterminator="\n", na_rep=""))
        else:
            records = [
                {col: _json_value(raw, text, col in formats) for col, raw, text in zip(columns, raw_row, row)}
                for raw_row, row in zip(rows, formatted)
            ]
            self._guard(path, lambda: _dump(records, path))
        self.records[path.name] = len(rows)
        logger.info(f"Wrote {len(rows)} record(s) to {path}")
        return path

    def write_json(self, name: str, payload: Any, count: Optional[int] = None) -> Path:
        """Write a JSON document; ``count`` is the record count for the manifest."""
        path = self.path_for(name if name.endswith(".json") else f"{name}.json")
        self._guard(path, lambda: _dump(payload, path))
        self.records[path.name] = count if count is not None else (len(payload) if isinstance(payload, list) else 1)
        logger.info(f"Wrote {path}")
        return path

    def manifest(self) -> dict:
        return {"files": [{"name": n, "records": c} for n, c in sorted(self.records.items())]}

    def write_manifest(self) -> Path:
        path = self.path_for("manifest.json")
        payload = self.manifest()
        self._guard(path, lambda: _dump(payload, path))
        return path

    def _guard(self, path: Path, write: Callable[[], Any]) -> None:
        try:
            write()
        except OSError as e:
            raise ExportError(path, str(e)) from e


def _json_value(raw: Any, text: Optional[str], formatted: bool) -> Any:
    """Formatted numbers go back to JSON numbers at their printed precision."""
    if text is None:
        return None
    if formatted:
        return float(text)
    if isinstance(raw, bool) or isinstance(raw, str):
        return raw
    if isinstance(raw, numbers.Integral):
        return int(raw)
    if isinstance(raw, numbers.Real):
        return float(raw)
    return text


def _dump(payload: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=False, ensure_ascii=False)
        f.write("\n")
