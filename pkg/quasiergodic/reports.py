"""JSON reports and CSV series written by the command line and the experiments."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from quasiergodic import __version__

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
POSITIVE_INFINITY = "+inf"
NEGATIVE_INFINITY = "-inf"
NOT_A_NUMBER = "nan"


def format_float(value: float) -> str:
    if math.isnan(value):
        return json.dumps(NOT_A_NUMBER)
    if math.isinf(value):
        return json.dumps(POSITIVE_INFINITY if value > 0 else NEGATIVE_INFINITY)
    text = format(value, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def to_plain(value: Any) -> Any:
    """Convert numpy scalars/arrays, tuples, sets and paths into JSON-ready builtins."""
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return [to_plain(v) for v in sorted(value)]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return value.as_posix()
    return value


def _encode(value: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if value is None or isinstance(value, (bool, str)):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(value[k], indent, level + 1)}" for k in sorted(value)]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, list):
        if not value:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps(payload: Any, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, 17 significant digits, sentinel strings for inf/nan."""
    return _encode(to_plain(payload), indent, 0) + "\n"


def write_json(path: str | Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8")
    return path


def parse_sentinel(value: Any) -> Any:
    if value == POSITIVE_INFINITY:
        return math.inf
    if value == NEGATIVE_INFINITY:
        return -math.inf
    if value == NOT_A_NUMBER:
        return math.nan
    return value


def read_json(path: str | Path) -> Any:
    def restore(node):
        if isinstance(node, dict):
            return {k: restore(v) for k, v in node.items()}
        if isinstance(node, list):
            return [restore(v) for v in node]
        return parse_sentinel(node)

    with Path(path).open("r", encoding="utf-8") as handle:
        return restore(json.load(handle))


def write_series_csv(path: str | Path, columns: Mapping[str, Any], header: Mapping[str, Any] | None = None) -> Path:
    """One row per record after ``#key,value`` header rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[name]).ravel() for name in names]
    if len({len(a) for a in arrays}) > 1:
        raise ValueError(f"series columns differ in length: {[len(a) for a in arrays]}")
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for key, value in (header or {}).items():
            writer.writerow([f"#{key}", value])
        writer.writerow(names)
        for row in zip(*arrays):
            writer.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_series_csv(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    header: dict[str, str] = {}
    names: list[str] = []
    rows: list[list[float]] = []
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        for record in csv.reader(handle):
            if not record:
                continue
            if record[0].startswith("#"):
                header[record[0][1:]] = ",".join(record[1:])
            elif not names:
                names = record
            else:
                rows.append([float(v) for v in record])
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    return header, {name: data[:, i] for i, name in enumerate(names)}


@dataclass
class Report:
    """Accumulates one experiment's results, artifacts and failures."""

    experiment: str
    config: dict
    results: dict = field(default_factory=dict)
    artifacts: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def add_artifact(self, path: Path, kind: str, root: Path) -> None:
        try:
            rel = path.relative_to(root)
        except ValueError:
            rel = path
        self.artifacts.append({"path": rel.as_posix(), "kind": kind})

    def record_failure(self, step: str, exc: BaseException) -> None:
        log.error("%s: step '%s' failed: %s", self.experiment, step, exc)
        self.failures.append({"step": step, "error": type(exc).__name__, "message": str(exc)})

    def flag(self, message: str) -> None:
        log.warning("%s: %s", self.experiment, message)
        self.flags.append(message)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "experiment": self.experiment,
            "config": self.config,
            "results": self.results,
            "flags": self.flags,
            "partial": self.partial,
            "manifest": {"artifacts": self.artifacts, "failures": self.failures},
        }

    def write(self, directory: Path) -> Path:
        return write_json(Path(directory) / "report.json", self.to_dict())
