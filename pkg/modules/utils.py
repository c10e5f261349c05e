"""Utility helpers shared by the PSP-NS pipeline stages."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional
import datetime as _dt
import json
import logging
import zlib

import numpy as np

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
UTF8_BOM = b"\xef\xbb\xbf"


class IssueSeverity(str, Enum):
    """Enumeration of validation severities."""

    WARNING = "warning"
    CRITICAL = "critical"


class ValidationStatus(str, Enum):
    """High-level status for validated sections."""

    OK = "OK"
    WARN = "WARN"
    ERROR = "ERROR"


@dataclass
class ValidationIssue:
    """Container for individual validation issues."""

    severity: IssueSeverity
    message: str
    line_number: Optional[int] = None
    key: Optional[str] = None

    def render(self) -> str:
        prefix = ""
        if self.line_number is not None:
            prefix = f"line {self.line_number}: "
        elif self.key is not None:
            prefix = f"{self.key}: "
        return prefix + self.message


class PspnsError(Exception):
    """Base class for errors raised by the pipeline."""


class DataFormatError(PspnsError):
    """Raised when an interaction file or cache cannot be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(PspnsError):
    """Raised when a configuration mapping fails validation."""

    def __init__(self, issues: list[ValidationIssue]) -> None:
        self.issues = issues
        super().__init__("; ".join(issue.render() for issue in issues))


class TrainingError(PspnsError):
    """Raised when training cannot proceed (empty PSP, non-finite loss)."""


class StageError(PspnsError):
    """Wrap a failure with the pipeline stage where it happened."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


def compute_status(issues: Iterable[ValidationIssue]) -> ValidationStatus:
    """Compute a section status based on collected issues."""

    issues = list(issues)
    if any(issue.severity is IssueSeverity.CRITICAL for issue in issues):
        return ValidationStatus.ERROR
    if any(issue.severity is IssueSeverity.WARNING for issue in issues):
        return ValidationStatus.WARN
    return ValidationStatus.OK


def configure_logging(level: int = logging.INFO) -> None:
    """Configure root logger when the CLI runs."""

    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


def setup_logger(logs_dir: Path, name: str = "pspns") -> logging.Logger:
    """Attach a dated file handler under ``logs_dir`` to the root logger."""

    logs_dir.mkdir(parents=True, exist_ok=True)
    ts = _dt.date.today().strftime("%Y%m%d")
    log_path = logs_dir / f"{name}_{ts}.log"

    root = logging.getLogger()
    resolved = str(log_path.resolve())
    if not any(getattr(h, "baseFilename", None) == resolved for h in root.handlers):
        fh = logging.FileHandler(log_path, encoding="utf-8")
        fh.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(fh)
    return logging.getLogger(name)


def write_text(path: Path, content: str) -> None:
    """Persist text content to disk ensuring parent directories exist."""

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def write_json(path: Path, payload: object) -> None:
    """Persist JSON content with sorted keys so reruns are byte-identical."""

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, ensure_ascii=False, sort_keys=True)
        handle.write("\n")


def write_jsonl(path: Path, records: Iterable[dict]) -> None:
    """Persist one JSON object per line."""

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False))
            handle.write("\n")


def strip_bom(data: bytes) -> bytes:
    """Remove UTF-8 BOM when present."""

    if data.startswith(UTF8_BOM):
        return data[len(UTF8_BOM) :]
    return data


def derive_rng(root_seed: int, stream: str, *extra: int) -> np.random.Generator:
    """Return the generator for a named sub-stream of ``root_seed``.

    Streams are independent of each other and of thread counts: the same
    ``(root_seed, stream, extra)`` always yields the same sequence.
    """

    spawn_key = (zlib.crc32(stream.encode("utf-8")), *(int(x) for x in extra))
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=spawn_key))


def top_k_order(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, descending, ties by ascending index.

    Runs a partition first so only the boundary candidates get sorted.
    """

    n = int(scores.shape[0])
    k = min(int(k), n)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if k < n:
        threshold = np.partition(scores, n - k)[n - k]
        above = np.flatnonzero(scores > threshold)
        ties = np.flatnonzero(scores == threshold)[: k - above.size]
        candidates = np.concatenate([above, ties])
    else:
        candidates = np.arange(n)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order].astype(np.int64)


def as_float(value: float, digits: int = 12) -> float:
    """Round a metric for deterministic report serialization."""

    return float(round(float(value), digits))


__all__ = [
    "ConfigError",
    "DataFormatError",
    "IssueSeverity",
    "LOG_FORMAT",
    "PspnsError",
    "StageError",
    "TrainingError",
    "ValidationIssue",
    "ValidationStatus",
    "as_float",
    "compute_status",
    "configure_logging",
    "derive_rng",
    "setup_logger",
    "strip_bom",
    "top_k_order",
    "write_json",
    "write_jsonl",
    "write_text",
]
