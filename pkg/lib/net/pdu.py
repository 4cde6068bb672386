"""DICOM upper-layer PDUs: the reduced set flowgate speaks.

Every PDU is a 6-byte header (type, reserved, big-endian length) followed by
its variant payload. encode_pdu / decode_pdu are exact inverses on canonical bytes.
"""

import re
import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum

from lib.dicom.uids import APPLICATION_CONTEXT, IMPLEMENTATION_CLASS_UID, IMPLEMENTATION_VERSION
from lib.errors import InvariantViolation
from lib.net.errors import ConnectionClosed, LengthMismatch, OversizedPdu, PduError, UnknownPduType

DEFAULT_MAX_PDU = 16384
MAX_PDU_CAP = 1024 * 1024

_AE_PATTERN = re.compile(r"^[A-Z0-9 _\-]{1,16}$")


class PduType(IntEnum):
    ASSOCIATE_RQ = 0x01
    ASSOCIATE_AC = 0x02
    ASSOCIATE_RJ = 0x03
    DATA_TF = 0x04
    RELEASE_RQ = 0x05
    RELEASE_RP = 0x06
    ABORT = 0x07


class ItemType(IntEnum):
    APPLICATION_CONTEXT = 0x10
    PRESENTATION_CONTEXT_RQ = 0x20
    PRESENTATION_CONTEXT_AC = 0x21
    ABSTRACT_SYNTAX = 0x30
    TRANSFER_SYNTAX = 0x40
    USER_INFORMATION = 0x50
    MAX_LENGTH = 0x51
    IMPLEMENTATION_CLASS = 0x52
    IMPLEMENTATION_VERSION = 0x55


@dataclass(frozen=True)
class AeTitle:
    value: str

    def __post_init__(self):
        if not _AE_PATTERN.match(self.value) or not self.value.strip():
            raise InvariantViolation(f"invalid AE title {self.value!r}")
        object.__setattr__(self, "value", self.value.strip())

    @classmethod
    def of(cls, value: "AeTitle | str") -> "AeTitle":
        return value if isinstance(value, AeTitle) else cls(value.strip())

    @classmethod
    def decode(cls, raw: bytes) -> "AeTitle":
        try:
            return cls(raw.decode("ascii").strip())
        except (UnicodeDecodeError, InvariantViolation) as e:
            raise PduError(f"bad AE title bytes {raw!r}") from e

    def encode(self) -> bytes:
        return self.value.encode("ascii").ljust(16, b" ")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PresentationContext:
    id: int
    abstract_syntax: str = ""
    transfer_syntaxes: tuple[str, ...] = ()
    result: int | None = None

    ACCEPTED = 0
    ABSTRACT_SYNTAX_NOT_SUPPORTED = 3
    TRANSFER_SYNTAXES_NOT_SUPPORTED = 4

    def __post_init__(self):
        if not (1 <= self.id <= 255 and self.id % 2 == 1):
            raise InvariantViolation(f"presentation context id {self.id} must be odd, 1-255")

    @property
    def accepted(self) -> bool:
        return self.result == self.ACCEPTED

    @property
    def transfer_syntax(self) -> str:
        return self.transfer_syntaxes[0] if self.transfer_syntaxes else ""


@dataclass(frozen=True)
class AssociateRq:
    called: AeTitle
    calling: AeTitle
    contexts: tuple[PresentationContext, ...]
    max_pdu_length: int = DEFAULT_MAX_PDU
    application_context: str = APPLICATION_CONTEXT
    implementation_class_uid: str = IMPLEMENTATION_CLASS_UID
    implementation_version: str | None = IMPLEMENTATION_VERSION
    protocol_version: int = 1


@dataclass(frozen=True)
class AssociateAc:
    called: AeTitle
    calling: AeTitle
    contexts: tuple[PresentationContext, ...]
    max_pdu_length: int = DEFAULT_MAX_PDU
    application_context: str = APPLICATION_CONTEXT
    implementation_class_uid: str = IMPLEMENTATION_CLASS_UID
    implementation_version: str | None = IMPLEMENTATION_VERSION
    protocol_version: int = 1


@dataclass(frozen=True)
class AssociateRj:
    result: int = 1
    source: int = 1
    reason: int = 1

    CALLING_AE_NOT_RECOGNIZED = 3
    CALLED_AE_NOT_RECOGNIZED = 7


@dataclass(frozen=True)
class Pdv:
    context_id: int
    is_command: bool
    is_last: bool
    data: bytes


@dataclass(frozen=True)
class DataTf:
    pdvs: tuple[Pdv, ...] = field(default=())


@dataclass(frozen=True)
class ReleaseRq:
    pass


@dataclass(frozen=True)
class ReleaseRp:
    pass


@dataclass(frozen=True)
class Abort:
    source: int = 0
    reason: int = 0


Pdu = AssociateRq | AssociateAc | AssociateRj | DataTf | ReleaseRq | ReleaseRp | Abort


def _item(item_type: int, body: bytes) -> bytes:
    return struct.pack(">BBH", item_type, 0, len(body)) + body


def _encode_associate(pdu: AssociateRq | AssociateAc) -> bytes:
    items = [_item(ItemType.APPLICATION_CONTEXT, pdu.application_context.encode("ascii"))]
    for ctx in pdu.contexts:
        if isinstance(pdu, AssociateRq):
            sub = _item(ItemType.ABSTRACT_SYNTAX, ctx.abstract_syntax.encode("ascii"))
            sub += b"".join(_item(ItemType.TRANSFER_SYNTAX, ts.encode("ascii")) for ts in ctx.transfer_syntaxes)
            items.append(_item(ItemType.PRESENTATION_CONTEXT_RQ, struct.pack(">BBBB", ctx.id, 0, 0, 0) + sub))
        else:
            sub = b"".join(_item(ItemType.TRANSFER_SYNTAX, ts.encode("ascii")) for ts in ctx.transfer_syntaxes)
            result = ctx.result if ctx.result is not None else 0
            items.append(_item(ItemType.PRESENTATION_CONTEXT_AC, struct.pack(">BBBB", ctx.id, 0, result, 0) + sub))

    user = _item(ItemType.MAX_LENGTH, struct.pack(">I", pdu.max_pdu_length))
    user += _item(ItemType.IMPLEMENTATION_CLASS, pdu.implementation_class_uid.encode("ascii"))
    if pdu.implementation_version:
        user += _item(ItemType.IMPLEMENTATION_VERSION, pdu.implementation_version.encode("ascii"))
    items.append(_item(ItemType.USER_INFORMATION, user))

    fixed = struct.pack(">HH", pdu.protocol_version, 0) + pdu.called.encode() + pdu.calling.encode() + bytes(32)
    return fixed + b"".join(items)


def encode_pdu(pdu: Pdu) -> bytes:
    match pdu:
        case AssociateRq():
            pdu_type, body = PduType.ASSOCIATE_RQ, _encode_associate(pdu)
        case AssociateAc():
            pdu_type, body = PduType.ASSOCIATE_AC, _encode_associate(pdu)
        case AssociateRj():
            pdu_type, body = PduType.ASSOCIATE_RJ, struct.pack(">BBBB", 0, pdu.result, pdu.source, pdu.reason)
        case DataTf():
            body = b"".join(
                struct.pack(">IBB", len(pdv.data) + 2, pdv.context_id, int(pdv.is_command) | (int(pdv.is_last) << 1))
                + pdv.data
                for pdv in pdu.pdvs
            )
            pdu_type = PduType.DATA_TF
        case ReleaseRq():
            pdu_type, body = PduType.RELEASE_RQ, bytes(4)
        case ReleaseRp():
            pdu_type, body = PduType.RELEASE_RP, bytes(4)
        case Abort():
            pdu_type, body = PduType.ABORT, struct.pack(">BBBB", 0, 0, pdu.source, pdu.reason)
        case _:
            raise InvariantViolation(f"not a PDU: {pdu!r}")

    if len(body) > 0xFFFFFFFF:
        raise OversizedPdu(f"PDU payload of {len(body)} bytes exceeds 2^32-1")
    return struct.pack(">BBI", pdu_type, 0, len(body)) + body


def _iter_items(body: bytes, offset: int):
    while offset < len(body):
        if offset + 4 > len(body):
            raise LengthMismatch(f"item header truncated at offset {offset}")
        item_type, _, length = struct.unpack_from(">BBH", body, offset)
        start = offset + 4
        if start + length > len(body):
            raise LengthMismatch(f"item {item_type:#04x} overruns its container")
        yield item_type, body[start:start + length]
        offset = start + length


def _decode_ascii(raw: bytes) -> str:
    try:
        return raw.decode("ascii").rstrip("\x00 ")
    except UnicodeDecodeError as e:
        raise PduError(f"non-ASCII bytes in UID field {raw!r}") from e


def _decode_associate(body: bytes, accept: bool) -> AssociateRq | AssociateAc:
    if len(body) < 68:
        raise LengthMismatch("A-ASSOCIATE body shorter than its fixed fields")
    (protocol_version,) = struct.unpack_from(">H", body, 0)
    called = AeTitle.decode(body[4:20])
    calling = AeTitle.decode(body[20:36])

    application_context = ""
    contexts: list[PresentationContext] = []
    max_pdu = DEFAULT_MAX_PDU
    impl_class = ""
    impl_version = None
    for item_type, value in _iter_items(body, 68):
        if item_type == ItemType.APPLICATION_CONTEXT:
            application_context = _decode_ascii(value)
        elif item_type in (ItemType.PRESENTATION_CONTEXT_RQ, ItemType.PRESENTATION_CONTEXT_AC):
            if len(value) < 4:
                raise LengthMismatch("presentation context item too short")
            ctx_id, _, result, _ = struct.unpack_from(">BBBB", value, 0)
            abstract = ""
            syntaxes: list[str] = []
            for sub_type, sub_value in _iter_items(value, 4):
                if sub_type == ItemType.ABSTRACT_SYNTAX:
                    abstract = _decode_ascii(sub_value)
                elif sub_type == ItemType.TRANSFER_SYNTAX:
                    syntaxes.append(_decode_ascii(sub_value))
            try:
                contexts.append(
                    PresentationContext(ctx_id, abstract, tuple(syntaxes), result if accept else None)
                )
            except InvariantViolation as e:
                raise PduError(str(e)) from e
        elif item_type == ItemType.USER_INFORMATION:
            for sub_type, sub_value in _iter_items(value, 0):
                if sub_type == ItemType.MAX_LENGTH and len(sub_value) == 4:
                    (max_pdu,) = struct.unpack(">I", sub_value)
                elif sub_type == ItemType.IMPLEMENTATION_CLASS:
                    impl_class = _decode_ascii(sub_value)
                elif sub_type == ItemType.IMPLEMENTATION_VERSION:
                    impl_version = _decode_ascii(sub_value)

    cls = AssociateAc if accept else AssociateRq
    return cls(
        called=called,
        calling=calling,
        contexts=tuple(contexts),
        max_pdu_length=max_pdu,
        application_context=application_context,
        implementation_class_uid=impl_class,
        implementation_version=impl_version,
        protocol_version=protocol_version,
    )


def _decode_data(body: bytes) -> DataTf:
    pdvs = []
    offset = 0
    while offset < len(body):
        if offset + 6 > len(body):
            raise LengthMismatch("PDV header truncated")
        length, ctx_id, control = struct.unpack_from(">IBB", body, offset)
        end = offset + 4 + length
        if length < 2 or end > len(body):
            raise LengthMismatch(f"PDV length {length} inconsistent with PDU")
        pdvs.append(Pdv(ctx_id, bool(control & 0x01), bool(control & 0x02), body[offset + 6:end]))
        offset = end
    return DataTf(tuple(pdvs))


def decode_pdu(data: bytes) -> Pdu:
    if len(data) < 6:
        raise LengthMismatch(f"PDU header needs 6 bytes, got {len(data)}")
    pdu_type, _, length = struct.unpack_from(">BBI", data, 0)
    if pdu_type not in PduType._value2member_map_:
        raise UnknownPduType(pdu_type)
    body = data[6:]
    if len(body) != length:
        raise LengthMismatch(f"header declares {length} payload bytes, got {len(body)}")

    match PduType(pdu_type):
        case PduType.ASSOCIATE_RQ:
            return _decode_associate(body, accept=False)
        case PduType.ASSOCIATE_AC:
            return _decode_associate(body, accept=True)
        case PduType.ASSOCIATE_RJ:
            if length != 4:
                raise LengthMismatch("A-ASSOCIATE-RJ payload must be 4 bytes")
            _, result, source, reason = struct.unpack(">BBBB", body)
            return AssociateRj(result, source, reason)
        case PduType.DATA_TF:
            return _decode_data(body)
        case PduType.RELEASE_RQ | PduType.RELEASE_RP:
            if length != 4:
                raise LengthMismatch("A-RELEASE payload must be 4 bytes")
            return ReleaseRq() if pdu_type == PduType.RELEASE_RQ else ReleaseRp()
        case PduType.ABORT:
            if length != 4:
                raise LengthMismatch("A-ABORT payload must be 4 bytes")
            _, _, source, reason = struct.unpack(">BBBB", body)
            return Abort(source, reason)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 65536))
        if not chunk:
            raise ConnectionClosed(f"peer closed with {remaining} of {n} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_pdu(sock: socket.socket) -> Pdu:
    header = recv_exact(sock, 6)
    pdu_type, _, length = struct.unpack(">BBI", header)
    if pdu_type not in PduType._value2member_map_:
        raise UnknownPduType(pdu_type)
    if length > MAX_PDU_CAP * 4:
        raise OversizedPdu(f"peer announced a {length}-byte PDU")
    return decode_pdu(header + recv_exact(sock, length))


def send_pdu(sock: socket.socket, pdu: Pdu) -> None:
    sock.sendall(encode_pdu(pdu))
