"""DIMSE command sets (C-STORE, C-ECHO) and P-DATA fragmentation/reassembly.

Command sets are always Implicit VR Little Endian with a leading group length.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

from lib.dicom.codec import parse_dataset, serialize_dataset
from lib.dicom.dataset import DataElement, DataSet
from lib.dicom.tags import Tag, Vr
from lib.dicom.uids import IMPLICIT_VR_LE, VERIFICATION
from lib.errors import InvariantViolation
from lib.net.errors import PduError
from lib.net.pdu import DataTf, Pdv

COMMAND_GROUP_LENGTH = Tag(0x0000, 0x0000)
NO_DATASET = 0x0101
DATASET_PRESENT = 0x0000
PDV_OVERHEAD = 6


class CommandField(IntEnum):
    C_STORE_RQ = 0x0001
    C_STORE_RSP = 0x8001
    C_ECHO_RQ = 0x0030
    C_ECHO_RSP = 0x8030


class Status(IntEnum):
    SUCCESS = 0x0000
    NOT_AUTHORIZED = 0x0124
    SOP_CLASS_NOT_SUPPORTED = 0x0122
    OUT_OF_RESOURCES = 0xA700
    CANNOT_UNDERSTAND = 0xC000


@dataclass(frozen=True)
class CStoreExchange:
    message_id: int
    affected_sop_class: str
    affected_sop_instance: str
    status: int | None = None

    def request(self, priority: int = 0) -> DataSet:
        return DataSet.of(
            AffectedSOPClassUID=self.affected_sop_class,
            CommandField=CommandField.C_STORE_RQ,
            MessageID=self.message_id,
            Priority=priority,
            CommandDataSetType=DATASET_PRESENT,
            AffectedSOPInstanceUID=self.affected_sop_instance,
        )

    def response(self, status: int) -> DataSet:
        return DataSet.of(
            AffectedSOPClassUID=self.affected_sop_class,
            CommandField=CommandField.C_STORE_RSP,
            MessageIDBeingRespondedTo=self.message_id,
            CommandDataSetType=NO_DATASET,
            Status=status,
            AffectedSOPInstanceUID=self.affected_sop_instance,
        )

    @classmethod
    def from_request(cls, command: DataSet) -> "CStoreExchange":
        return cls(
            message_id=command.integer("MessageID") or 0,
            affected_sop_class=command.text("AffectedSOPClassUID", ""),
            affected_sop_instance=command.text("AffectedSOPInstanceUID", ""),
        )


def echo_request(message_id: int) -> DataSet:
    return DataSet.of(
        AffectedSOPClassUID=VERIFICATION,
        CommandField=CommandField.C_ECHO_RQ,
        MessageID=message_id,
        CommandDataSetType=NO_DATASET,
    )


def echo_response(message_id: int, status: int = Status.SUCCESS) -> DataSet:
    return DataSet.of(
        AffectedSOPClassUID=VERIFICATION,
        CommandField=CommandField.C_ECHO_RSP,
        MessageIDBeingRespondedTo=message_id,
        CommandDataSetType=NO_DATASET,
        Status=status,
    )


def encode_command(command: DataSet) -> bytes:
    body = serialize_dataset(command.delete(COMMAND_GROUP_LENGTH), IMPLICIT_VR_LE)
    group_length = DataElement(COMMAND_GROUP_LENGTH, Vr.UL, struct.pack("<I", len(body)))
    return serialize_dataset(DataSet([group_length]), IMPLICIT_VR_LE) + body


def decode_command(data: bytes) -> DataSet:
    return parse_dataset(data, IMPLICIT_VR_LE).delete(COMMAND_GROUP_LENGTH)


def has_dataset(command: DataSet) -> bool:
    return command.integer("CommandDataSetType") != NO_DATASET


def fragment(context_id: int, payload: bytes, is_command: bool, max_pdu_length: int) -> Iterator[DataTf]:
    """Split one command or dataset stream into P-DATA-TF PDUs of at most max_pdu_length."""
    chunk = max_pdu_length - PDV_OVERHEAD
    if chunk <= 0:
        raise InvariantViolation(f"max PDU length {max_pdu_length} leaves no room for PDV data")
    if not payload:
        yield DataTf((Pdv(context_id, is_command, True, b""),))
        return
    for start in range(0, len(payload), chunk):
        piece = payload[start:start + chunk]
        last = start + chunk >= len(payload)
        yield DataTf((Pdv(context_id, is_command, last, piece),))


@dataclass(frozen=True)
class DimseMessage:
    context_id: int
    command: DataSet
    data: bytes | None

    @property
    def command_field(self) -> int:
        return self.command.integer("CommandField") or 0


class MessageAssembler:
    """Collects PDVs until a whole command (and its dataset, when announced) has arrived."""

    def __init__(self):
        self._reset()

    def _reset(self) -> None:
        self._context_id: int | None = None
        self._command = bytearray()
        self._data = bytearray()
        self._decoded: DataSet | None = None

    def feed(self, pdv: Pdv) -> DimseMessage | None:
        if self._context_id is None:
            self._context_id = pdv.context_id
        elif pdv.context_id != self._context_id:
            raise PduError(f"PDV for context {pdv.context_id} interleaved with context {self._context_id}")

        if pdv.is_command:
            if self._decoded is not None:
                raise PduError("command fragment after the command set completed")
            self._command += pdv.data
            if not pdv.is_last:
                return None
            self._decoded = decode_command(bytes(self._command))
            if has_dataset(self._decoded):
                return None
            return self._complete(None)

        if self._decoded is None:
            raise PduError("dataset fragment before the command set")
        self._data += pdv.data
        return self._complete(bytes(self._data)) if pdv.is_last else None

    def _complete(self, data: bytes | None) -> DimseMessage:
        message = DimseMessage(self._context_id, self._decoded, data)
        self._reset()
        return message
