"""
Result persistence: CSV tables, text reports and the ``run.json`` record.

Floats are written with a fixed 12-digit exponent format so reruns with the
same configuration reproduce the CSV files byte for byte.
"""

import csv
import hashlib
import io
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

RECORD_FILE = "run.json"


def plain(value: Any) -> Any:
    """Builtin Python values for numpy scalars and arrays, recursively."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


def format_float(value: float) -> str:
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12e}"


@dataclass
class Table:
    """Column names carry their unit, e.g. ``t [s]``."""

    columns: List[str]
    rows: List[Sequence[float]] = field(default_factory=list)

    def render(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row of length {len(row)} for {len(self.columns)} columns"
                )
            writer.writerow([format_float(v) for v in row])
        return buf.getvalue()


@dataclass
class ScenarioResult:
    """What a scenario runner hands back for persistence."""

    tables: Dict[str, Table] = field(default_factory=dict)
    texts: Dict[str, str] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    fits: Dict[str, Any] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    failed: bool = False


class RunRecord(BaseModel):
    """Provenance of one scenario run, stored next to its outputs."""

    scenario: str
    kind: str
    config: Dict[str, Any] = Field(..., description="Validated configuration.")
    version: str
    wall_time: float = Field(..., description="Seconds spent in the runner.")
    status: Literal["ok", "failed"] = "ok"
    outputs: Dict[str, str] = Field(
        default_factory=dict, description="sha256 of every output file by name."
    )
    metrics: Dict[str, Any] = Field(default_factory=dict)
    fits: Dict[str, Any] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)


class RecordWriter:
    """Writes the outputs of one run; calls are serialized by a lock."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.checksums: Dict[str, str] = {}
        self._lock = threading.Lock()

    def _write(self, name: str, content: str) -> Path:
        data = content.encode("utf-8")
        with self._lock:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path = self.out_dir / name
            path.write_bytes(data)
            self.checksums[name] = sha256_of(data)
        logger.debug(f"Wrote {path} ({len(data)} bytes)")
        return path

    def write_table(self, name: str, table: Table) -> Path:
        return self._write(f"{name}.csv", table.render())

    def write_text(self, name: str, text: str) -> Path:
        return self._write(name, text)

    def write_record(self, record: RunRecord) -> Path:
        with self._lock:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path = self.out_dir / RECORD_FILE
            path.write_text(record.model_dump_json(indent=2))
        logger.info(f"Run record written to {path}")
        return path


def load_record(path: Path) -> RunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / RECORD_FILE
    return RunRecord.model_validate_json(path.read_text())


def sha256_of(source: Union[bytes, Path]) -> str:
    """Hex digest of raw bytes or of a file's contents."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    return hashlib.sha256(data).hexdigest()
