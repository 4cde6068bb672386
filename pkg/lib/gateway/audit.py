"""Append-only audit trail, one JSON object per line."""

import json
import logging
import threading
from datetime import datetime
from enum import StrEnum
from pathlib import Path

import polars as pl
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class Category(StrEnum):
    RECEIVED = "received"
    DECISION = "decision"
    FORWARDED = "forwarded"
    BLOCKED = "blocked"
    MORPHED = "morphed"
    AI_RESULT = "ai_result"
    HL7_SENT = "hl7_sent"
    ERROR = "error"


class AuditEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: int = Field(description="Strictly increasing across restarts")
    timestamp: str = Field(description="ISO 8601, local time")
    study_uid: str = ""
    category: Category
    detail: str = ""
    ruleset_version: int = 0


_SCHEMA = {
    "seq": pl.Int64,
    "timestamp": pl.Utf8,
    "study_uid": pl.Utf8,
    "category": pl.Utf8,
    "detail": pl.Utf8,
    "ruleset_version": pl.Int64,
}


def _read_frame(path: Path) -> pl.DataFrame:
    if not path.exists() or path.stat().st_size == 0:
        return pl.DataFrame(schema=_SCHEMA)
    return pl.read_ndjson(path, schema=_SCHEMA)


class AuditLog:
    """Single writer; every worker appends through the same instance."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        frame = _read_frame(self.path)
        self._seq = int(frame["seq"].max()) if frame.height else 0

    def append(
        self, category: Category, detail: str = "", study_uid: str = "", ruleset_version: int = 0
    ) -> AuditEvent:
        with self._lock:
            self._seq += 1
            event = AuditEvent(
                seq=self._seq,
                timestamp=datetime.now().isoformat(timespec="milliseconds"),
                study_uid=study_uid,
                category=category,
                detail=detail,
                ruleset_version=ruleset_version,
            )
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(event.model_dump(mode="json")) + "\n")
        logger.debug("audit %d %s %s %s", event.seq, category, study_uid, detail)
        return event


def audit_query(
    path,
    study_uid: str | None = None,
    category: Category | str | None = None,
    seq_range: tuple[int, int] | None = None,
) -> list[AuditEvent]:
    """Events matching every given filter, in sequence order. seq_range is inclusive."""
    frame = _read_frame(Path(path))
    if study_uid is not None:
        frame = frame.filter(pl.col("study_uid") == study_uid)
    if category is not None:
        frame = frame.filter(pl.col("category") == str(category))
    if seq_range is not None:
        low, high = seq_range
        frame = frame.filter(pl.col("seq").is_between(low, high, closed="both"))
    return [AuditEvent(**row) for row in frame.sort("seq").iter_rows(named=True)]
