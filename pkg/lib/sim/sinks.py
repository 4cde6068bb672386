"""Stand-ins for PACS, viewers and the interface engine.

A store sink keeps one file per SOP instance UID (a resend replaces it) and appends a
manifest row for every object it stores. Its behaviour script injects delays and
forced failure statuses:

    delay=300 fail_first=2 status=A700
"""

import hashlib
import json
import logging
import threading
import time
from datetime import datetime
from enum import StrEnum
from pathlib import Path

import polars as pl
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lib.dicom.codec import serialize_part10
from lib.dicom.dataset import DicomFile
from lib.hl7.message import Hl7Message, encode_message, parse_message
from lib.hl7.mllp import MllpServer
from lib.hl7.orm import AckCode, build_ack, control_id
from lib.identity import hl7_timestamp
from lib.net.dimse import Status
from lib.net.scp import AssociationMeta, ListenConfig, StoreServer, scp_serve
from lib.sim.errors import BadBehavior

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.ndjson"


class Behavior(BaseModel):
    model_config = ConfigDict(frozen=True)

    delay_ms: int = Field(default=0, ge=0, description="Sleep before answering every store")
    fail_first: int = Field(default=0, ge=0, description="Stores answered with `status` before succeeding")
    status: int = Field(default=Status.OUT_OF_RESOURCES, ge=0, le=0xFFFF)


_BEHAVIOR_KEYS = {"delay": "delay_ms", "fail_first": "fail_first", "status": "status"}


def parse_behavior(script: str) -> Behavior:
    values = {}
    for word in script.split():
        key, sep, raw = word.partition("=")
        if not sep or key not in _BEHAVIOR_KEYS:
            raise BadBehavior(f"expected delay=MS, fail_first=N or status=HEX, got {word!r}")
        try:
            values[_BEHAVIOR_KEYS[key]] = int(raw, 16) if key == "status" else int(raw)
        except ValueError:
            raise BadBehavior(f"{key} needs a number, got {raw!r}") from None
    try:
        return Behavior(**values)
    except ValidationError as e:
        raise BadBehavior(f"invalid behaviour {script!r}: {e}") from e


class StoreSink:
    def __init__(
        self, port: int, ae_title: str, out_dir, behavior: Behavior | None = None, host: str = "127.0.0.1"
    ):
        self.ae_title = ae_title
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.behavior = behavior or Behavior()
        self._listen = ListenConfig(port=port, ae_titles=[ae_title], host=host)
        self._server: StoreServer | None = None
        self._lock = threading.Lock()
        self._seen = 0

    def start(self) -> "StoreSink":
        self._server = scp_serve(self._listen, self.store)
        return self

    @property
    def port(self) -> int:
        return self._server.port if self._server is not None else self._listen.port

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server = None

    def __enter__(self):
        return self if self._server is not None else self.start()

    def __exit__(self, *exc):
        self.shutdown()

    def store(self, meta: AssociationMeta, file: DicomFile) -> int:
        with self._lock:
            self._seen += 1
            seen = self._seen
        if self.behavior.delay_ms:
            time.sleep(self.behavior.delay_ms / 1000.0)
        if seen <= self.behavior.fail_first:
            logger.info("%s refusing store %d with %#06x", self.ae_title, seen, self.behavior.status)
            return self.behavior.status

        data = serialize_part10(file)
        sop = file.sop_instance_uid
        row = {
            "sop": sop,
            "sop_class": file.sop_class_uid,
            "bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
            "received_at": datetime.now().isoformat(timespec="milliseconds"),
            "calling_ae": meta.calling_ae,
        }
        with self._lock:
            (self.out_dir / f"{sop}.dcm").write_bytes(data)
            with open(self.out_dir / MANIFEST_NAME, "a", encoding="utf-8") as f:
                f.write(json.dumps(row) + "\n")
        return Status.SUCCESS


def run_store_sink(port: int, ae_title: str, out_dir, behavior: Behavior | str | None = None) -> StoreSink:
    if isinstance(behavior, str):
        behavior = parse_behavior(behavior)
    return StoreSink(port, ae_title, out_dir, behavior).start()


_MANIFEST_SCHEMA = {
    "sop": pl.Utf8,
    "sop_class": pl.Utf8,
    "bytes": pl.Int64,
    "sha256": pl.Utf8,
    "received_at": pl.Utf8,
    "calling_ae": pl.Utf8,
}


def read_manifest(out_dir, latest_only: bool = False) -> pl.DataFrame:
    """Manifest rows in arrival order; latest_only keeps the last row per SOP instance."""
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists() or path.stat().st_size == 0:
        return pl.DataFrame(schema=_MANIFEST_SCHEMA)
    frame = pl.read_ndjson(path, schema=_MANIFEST_SCHEMA)
    if latest_only:
        frame = frame.unique(subset="sop", keep="last", maintain_order=True)
    return frame


class AckMode(StrEnum):
    AA = "AA"
    AE = "AE"
    NONE = "none"


class MllpSink:
    """Stores every message it receives, one file each, and acknowledges per ack_mode."""

    def __init__(self, port: int, ack_mode: AckMode | str, out_dir, host: str = "127.0.0.1"):
        self.ack_mode = AckMode(ack_mode)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._host, self._port = host, port
        self._server: MllpServer | None = None
        self._lock = threading.Lock()
        self._count = 0

    def start(self) -> "MllpSink":
        self._server = MllpServer(self._host, self._port, self.respond).start()
        return self

    @property
    def port(self) -> int:
        return self._server.port if self._server is not None else self._port

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server = None

    def __enter__(self):
        return self if self._server is not None else self.start()

    def __exit__(self, *exc):
        self.shutdown()

    def respond(self, msg: Hl7Message) -> Hl7Message | None:
        with self._lock:
            self._count += 1
            name = f"{self._count:04d}_{control_id(msg) or 'message'}.hl7"
            (self.out_dir / name).write_bytes(encode_message(msg))
        if self.ack_mode == AckMode.NONE:
            return None
        return build_ack(msg, AckCode(self.ack_mode.value), hl7_timestamp(datetime.now()))

    def messages(self) -> list[Hl7Message]:
        return [parse_message(path.read_bytes()) for path in sorted(self.out_dir.glob("*.hl7"))]


def run_mllp_sink(port: int, ack_mode: AckMode | str, out_dir) -> MllpSink:
    return MllpSink(port, ack_mode, out_dir).start()
