"""Seedable sources of UIDs, GUIDs and timestamps.

Unseeded sources behave like production (random UIDs, wall clock). Seeded sources
are deterministic so synthetic studies, SR files and HL7 messages can be compared
byte-for-byte across runs.
"""

import hashlib
import itertools
import threading
import uuid
from datetime import datetime, timedelta

from pydicom.uid import generate_uid

import app_config

DEFAULT_UID_ROOT = "1.2.826.0.1.3680043.8.498."
SEEDED_EPOCH = datetime(2024, 1, 1, 12, 0, 0)


def default_uid_root() -> str:
    if app_config.is_initialized():
        return app_config.get_str(app_config.ConfigKeys.UID_ROOT, DEFAULT_UID_ROOT)
    return DEFAULT_UID_ROOT


class UidSource:
    def __init__(self, seed: int | None = None, root: str | None = None):
        self.seed = seed
        self.root = root or default_uid_root()
        if not self.root.endswith("."):
            self.root += "."
        self._counter = itertools.count()
        self._lock = threading.Lock()

    def derive(self, label: str) -> str:
        """UID fixed by (seed, label); random when unseeded."""
        if self.seed is None:
            return str(generate_uid(prefix=self.root))
        return str(generate_uid(prefix=self.root, entropy_srcs=[str(self.seed), label]))

    def next(self, label: str = "uid") -> str:
        """Fresh UID; successive calls on a seeded source repeat across runs."""
        with self._lock:
            n = next(self._counter)
        return self.derive(f"{label}#{n}")

    def guid(self, label: str = "guid") -> str:
        if self.seed is None:
            return str(uuid.uuid4()).upper()
        with self._lock:
            n = next(self._counter)
        digest = hashlib.sha256(f"{self.seed}:{label}:{n}".encode()).digest()
        return str(uuid.UUID(bytes=digest[:16], version=4)).upper()


class Clock:
    def __init__(self, seed: int | None = None):
        self.seed = seed
        self._ticks = itertools.count()
        self._lock = threading.Lock()

    def now(self) -> datetime:
        if self.seed is None:
            return datetime.now()
        with self._lock:
            n = next(self._ticks)
        return SEEDED_EPOCH + timedelta(seconds=n)


def dicom_date(moment: datetime) -> str:
    return moment.strftime("%Y%m%d")


def dicom_time(moment: datetime) -> str:
    return moment.strftime("%H%M%S")


def hl7_timestamp(moment: datetime) -> str:
    return moment.strftime("%Y%m%d%H%M%S")
