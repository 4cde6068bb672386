"""Modality stand-in: push a directory of Part 10 files over one association."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

from lib.dicom.codec import read_part10
from lib.dicom.errors import DicomError
from lib.net.dimse import Status
from lib.net.scu import Endpoint, scu_store
from lib.sim.errors import SimError

logger = logging.getLogger(__name__)


@dataclass
class SendSummary:
    statuses: list[tuple[str, int]] = field(default_factory=list)

    @property
    def sent(self) -> int:
        return len(self.statuses)

    @property
    def success(self) -> int:
        return sum(1 for _, status in self.statuses if status == Status.SUCCESS)

    def __str__(self) -> str:
        return f"{self.sent} sent, {self.success} success"


def cli_modality_send(
    directory, endpoint: Endpoint, calling_ae: str, called_ae: str, max_pdu: int = 16384, timeout: float = 30.0
) -> SendSummary:
    """Send every Part 10 file under directory; association errors propagate."""
    paths = sorted(p for p in Path(directory).rglob("*.dcm") if p.is_file())
    files = []
    for path in paths:
        try:
            files.append(read_part10(path))
        except DicomError as e:
            logger.warning("Skipping %s: %s", path.name, e)
    if not files:
        raise SimError(f"no DICOM files under {directory}")

    statuses = scu_store(endpoint, calling_ae, called_ae, files, max_pdu, timeout)
    summary = SendSummary([(f.sop_instance_uid, status) for f, status in zip(files, statuses)])
    for sop, status in summary.statuses:
        print(f"{sop} {status:#06x}")
    print(summary)
    return summary
