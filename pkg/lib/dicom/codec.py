"""Part 10 and bare-dataset codec for Implicit / Explicit VR Little Endian.

Sequences and items of undefined length are accepted on input and always
written back with explicit lengths.
"""

import logging
import struct

from lib.dicom.dataset import DataElement, DataSet, DicomFile, pad_even
from lib.dicom.errors import MalformedElement, MissingMagic, TruncatedElement, UnsupportedTransferSyntax
from lib.dicom.tags import LONG_LENGTH_CODES, Tag, Vr, dict_vr
from lib.dicom.uids import EXPLICIT_VR_LE, IMPLICIT_VR_LE, SUPPORTED_TRANSFER_SYNTAXES
from lib.errors import InvariantViolation

logger = logging.getLogger(__name__)

MAGIC = b"DICM"
PREAMBLE_LENGTH = 128
UNDEFINED_LENGTH = 0xFFFFFFFF

ITEM = Tag(0xFFFE, 0xE000)
ITEM_END = Tag(0xFFFE, 0xE00D)
SEQUENCE_END = Tag(0xFFFE, 0xE0DD)
FILE_META_GROUP_LENGTH = Tag(0x0002, 0x0000)


def _explicit(transfer_syntax: str) -> bool:
    if transfer_syntax == EXPLICIT_VR_LE:
        return True
    if transfer_syntax == IMPLICIT_VR_LE:
        return False
    raise UnsupportedTransferSyntax(transfer_syntax)


class _Reader:
    def __init__(self, data: bytes, explicit: bool, pos: int = 0):
        self.data = data
        self.explicit = explicit
        self.pos = pos

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def read(self, n: int) -> bytes:
        if n > self.remaining():
            raise TruncatedElement(
                f"need {n} bytes at offset {self.pos}, only {self.remaining()} left"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def peek_group(self) -> int | None:
        if self.remaining() < 2:
            return None
        return struct.unpack_from("<H", self.data, self.pos)[0]

    def read_tag(self) -> Tag:
        group, element = self.unpack("<HH")
        return Tag(group, element)

    def read_element_header(self, tag: Tag) -> tuple[Vr, int]:
        if tag.group == 0xFFFE or not self.explicit:
            (length,) = self.unpack("<I")
            return dict_vr(tag), length

        code = self.read(2)
        try:
            text = code.decode("ascii")
        except UnicodeDecodeError:
            raise MalformedElement(f"{tag} has non-ASCII VR bytes {code!r}") from None
        if not text.isalpha() or not text.isupper():
            raise MalformedElement(f"{tag} has invalid VR {text!r}")
        if text in LONG_LENGTH_CODES:
            self.read(2)
            (length,) = self.unpack("<I")
        else:
            (length,) = self.unpack("<H")
        try:
            vr = Vr(text)
        except ValueError:
            # written back as UN with the long length form, not byte-for-byte
            logger.debug("%s: VR %s carried as UN", tag, text)
            vr = Vr.UN
        return vr, length


def _read_dataset(reader: _Reader, end: int | None) -> DataSet:
    """Read elements up to offset `end`, or up to an item delimiter when end is None."""
    elements: dict[Tag, DataElement] = {}
    limit = len(reader.data) if end is None else end

    while reader.pos < limit:
        tag = reader.read_tag()

        if tag == ITEM_END:
            reader.unpack("<I")
            if end is None:
                return DataSet._from_mapping(elements)
            raise MalformedElement(f"item delimiter inside a defined-length item at {reader.pos}")
        if tag.group == 0xFFFE:
            raise MalformedElement(f"unexpected delimiter {tag} at offset {reader.pos - 4}")

        vr, length = reader.read_element_header(tag)
        if vr == Vr.SQ or (length == UNDEFINED_LENGTH and vr == Vr.UN):
            element = DataElement(tag, Vr.SQ, b"", _read_items(reader, length, nested_explicit=reader.explicit and vr == Vr.SQ))
        elif length == UNDEFINED_LENGTH:
            raise UnsupportedTransferSyntax(
                EXPLICIT_VR_LE if reader.explicit else IMPLICIT_VR_LE,
                f"{tag} carries encapsulated (compressed) data in an uncompressed transfer syntax",
            )
        else:
            if reader.pos + length > limit:
                raise TruncatedElement(f"{tag} value of {length} bytes overruns its container")
            element = DataElement(tag, vr, reader.read(length))

        if tag in elements:
            logger.warning("duplicate tag %s in dataset; keeping the last occurrence", tag)
        elements[tag] = element

    if end is None:
        raise TruncatedElement("undefined-length item has no item delimiter")
    if reader.pos != end:
        raise TruncatedElement(f"element overran its container ending at {end}")
    return DataSet._from_mapping(elements)


def _read_items(reader: _Reader, length: int, nested_explicit: bool) -> tuple[DataSet, ...]:
    outer_explicit = reader.explicit
    reader.explicit = nested_explicit
    try:
        items: list[DataSet] = []
        end = None if length == UNDEFINED_LENGTH else reader.pos + length
        while end is None or reader.pos < end:
            tag = reader.read_tag()
            (item_length,) = reader.unpack("<I")
            if tag == SEQUENCE_END:
                if end is not None:
                    raise MalformedElement("sequence delimiter inside a defined-length sequence")
                break
            if tag != ITEM:
                raise MalformedElement(f"expected item tag, found {tag}")
            if item_length == UNDEFINED_LENGTH:
                items.append(_read_dataset(reader, None))
            else:
                items.append(_read_dataset(reader, reader.pos + item_length))
        if end is not None and reader.pos != end:
            raise TruncatedElement(f"sequence items overran the sequence ending at {end}")
        return tuple(items)
    finally:
        reader.explicit = outer_explicit


def parse_dataset(data: bytes, transfer_syntax: str) -> DataSet:
    reader = _Reader(bytes(data), _explicit(transfer_syntax))
    return _read_dataset(reader, len(reader.data))


def _encode_element(element: DataElement, explicit: bool) -> bytes:
    if element.vr == Vr.SQ:
        value = b"".join(
            struct.pack("<HHI", ITEM.group, ITEM.element, len(body)) + body
            for body in (_encode_dataset(item, explicit) for item in element.items)
        )
    else:
        value = pad_even(element.raw, element.vr)

    tag = element.tag
    if not explicit:
        return struct.pack("<HHI", tag.group, tag.element, len(value)) + value
    code = element.vr.value.encode("ascii")
    if element.vr.long_length:
        return struct.pack("<HH2s2xI", tag.group, tag.element, code, len(value)) + value
    if len(value) > 0xFFFF:
        raise InvariantViolation(f"{tag} {element.vr} value of {len(value)} bytes exceeds 2-byte length")
    return struct.pack("<HH2sH", tag.group, tag.element, code, len(value)) + value


def _encode_dataset(ds: DataSet, explicit: bool) -> bytes:
    return b"".join(_encode_element(element, explicit) for element in ds)


def serialize_dataset(ds: DataSet, transfer_syntax: str) -> bytes:
    return _encode_dataset(ds, _explicit(transfer_syntax))


def parse_part10(data: bytes) -> DicomFile:
    data = bytes(data)
    if len(data) < PREAMBLE_LENGTH + 4 or data[PREAMBLE_LENGTH:PREAMBLE_LENGTH + 4] != MAGIC:
        raise MissingMagic(f"no 'DICM' marker at offset {PREAMBLE_LENGTH}")

    reader = _Reader(data, explicit=True, pos=PREAMBLE_LENGTH + 4)
    meta: dict[Tag, DataElement] = {}
    while reader.peek_group() == 0x0002:
        tag = reader.read_tag()
        vr, length = reader.read_element_header(tag)
        if length == UNDEFINED_LENGTH:
            raise MalformedElement(f"file meta element {tag} has undefined length")
        meta[tag] = DataElement(tag, vr, reader.read(length))
    meta.pop(FILE_META_GROUP_LENGTH, None)
    file_meta = DataSet._from_mapping(meta)

    transfer_syntax = file_meta.text("TransferSyntaxUID")
    if not transfer_syntax:
        raise InvariantViolation("file meta lacks TransferSyntaxUID (0002,0010)")
    if transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(transfer_syntax)

    dataset = parse_dataset(data[reader.pos:], transfer_syntax)
    return DicomFile(
        file_meta=file_meta,
        dataset=dataset,
        transfer_syntax=transfer_syntax,
        preamble=data[:PREAMBLE_LENGTH],
    )


def serialize_part10(file: DicomFile) -> bytes:
    file.validate()
    meta = file.file_meta.delete(FILE_META_GROUP_LENGTH)
    meta_body = _encode_dataset(meta, explicit=True)
    group_length = _encode_element(
        DataElement(FILE_META_GROUP_LENGTH, Vr.UL, struct.pack("<I", len(meta_body))), explicit=True
    )
    return (
        file.preamble
        + MAGIC
        + group_length
        + meta_body
        + serialize_dataset(file.dataset, file.transfer_syntax)
    )


def read_part10(path) -> DicomFile:
    with open(path, "rb") as f:
        return parse_part10(f.read())


def write_part10(path, file: DicomFile) -> None:
    with open(path, "wb") as f:
        f.write(serialize_part10(file))
