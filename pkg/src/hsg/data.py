"""Dataset ingestion from JSON Lines."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from hsg.answers import extract_final
from hsg.errors import DataError, EmptyDataset, SchemaViolation

log = logging.getLogger(__name__)

SOURCES = ("gsm8k-style", "math-style", "numina-style", "toy")


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    reference_answer: str
    source: str = "toy"
    split: str = "train"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IngestReport:
    records: list[DatasetRecord] = field(default_factory=list)
    # (line number, reason)
    skipped: list[tuple[int, str]] = field(default_factory=list)


def _record(raw: object, source: str, lineno: int) -> DatasetRecord:
    if not isinstance(raw, dict):
        raise SchemaViolation(f"line {lineno}: expected a JSON object")
    for key in ("id", "question", "reference_answer"):
        if not isinstance(raw.get(key), str) or not raw[key].strip():
            raise SchemaViolation(f"line {lineno}: missing or empty {key!r}")
    src = raw.get("source", source)
    if src not in SOURCES:
        raise SchemaViolation(f"line {lineno}: unknown source {src!r}")
    reference = raw["reference_answer"].strip()
    if extract_final(reference) is None:
        if "\\boxed" in reference:
            raise SchemaViolation(f"line {lineno}: reference_answer must hold exactly one boxed answer")
        reference = f"\\boxed{{{reference}}}"
    return DatasetRecord(raw["id"], raw["question"], reference, src, raw.get("split", "train"))


def ingest_report(path: str | Path, source: str = "gsm8k-style") -> IngestReport:
    """Parse every line, keeping valid records and a list of skipped lines.

    A bare reference answer is wrapped in ``\\boxed{}``.
    """
    path = Path(path)
    if source not in SOURCES:
        raise DataError(f"unknown source {source!r}")
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    report = IngestReport()
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = _record(json.loads(line), source, lineno)
        except json.JSONDecodeError as exc:
            report.skipped.append((lineno, f"invalid JSON: {exc.msg}"))
            continue
        except SchemaViolation as exc:
            report.skipped.append((lineno, str(exc)))
            continue
        if rec.id in seen:
            report.skipped.append((lineno, f"duplicate id {rec.id!r}"))
            continue
        seen.add(rec.id)
        report.records.append(rec)
    for lineno, reason in report.skipped:
        log.warning("%s:%d skipped: %s", path, lineno, reason)
    log.info("%s: %d records, %d skipped", path, len(report.records), len(report.skipped))
    return report


def ingest(path: str | Path, source: str = "gsm8k-style", strict: bool = False) -> list[DatasetRecord]:
    report = ingest_report(path, source)
    if strict and report.skipped:
        lineno, reason = report.skipped[0]
        raise SchemaViolation(f"{path}: {len(report.skipped)} malformed line(s); first: {reason}")
    if not report.records:
        raise EmptyDataset(f"{path}: no valid records")
    return report.records
