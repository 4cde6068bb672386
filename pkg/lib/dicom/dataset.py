"""In-memory DICOM data model.

DataSet is immutable: element_set / element_delete (and the matching methods)
return a new DataSet, so datasets can be handed between threads freely.
Element values are kept as the exact bytes found on the wire; text accessors
trim padding on read, the raw bytes are what gets re-serialized.
"""

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Literal

from lib.dicom.errors import TypeMismatch
from lib.dicom.tags import Tag, Vr, dict_vr, tag_of
from lib.dicom.uids import (
    EXPLICIT_VR_LE,
    IMPLEMENTATION_CLASS_UID,
    IMPLEMENTATION_VERSION,
    SUPPORTED_TRANSFER_SYNTAXES,
)
from lib.errors import InvariantViolation

TagKey = Tag | str

_BINARY_FORMATS = {Vr.US: "H", Vr.UL: "I", Vr.SS: "h", Vr.SL: "i", Vr.FL: "f", Vr.FD: "d"}
_UNTRIMMED_LEADING = frozenset({Vr.LT, Vr.ST, Vr.UT})


def format_ds(value: float) -> str:
    """Decimal String rendering, at most 16 characters."""
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    text = repr(float(value))
    if len(text) > 16:
        text = f"{value:.10g}"
    return text


def pad_even(raw: bytes, vr: Vr) -> bytes:
    return raw + vr.pad_byte if len(raw) % 2 else raw


@dataclass(frozen=True)
class DataElement:
    tag: Tag
    vr: Vr
    raw: bytes = b""
    items: tuple["DataSet", ...] = field(default=())

    @classmethod
    def from_value(cls, tag: TagKey, vr: Vr | str | None, value) -> "DataElement":
        """Encode a Python value for the given VR (dictionary VR when vr is None)."""
        tag = tag_of(tag)
        vr = Vr(vr) if vr is not None else dict_vr(tag)

        if vr == Vr.SQ:
            items = tuple(value or ())
            if not all(isinstance(item, DataSet) for item in items):
                raise InvariantViolation(f"{tag} SQ value must be a list of DataSets")
            return cls(tag, vr, b"", items)

        if vr in _BINARY_FORMATS:
            values = value if isinstance(value, (list, tuple)) else [value]
            try:
                raw = struct.pack(f"<{len(values)}{_BINARY_FORMATS[vr]}", *values)
            except struct.error as e:
                raise InvariantViolation(f"{tag} cannot encode {value!r} as {vr}: {e}") from e
            return cls(tag, vr, raw)

        if vr in (Vr.OB, Vr.OW, Vr.UN):
            if not isinstance(value, (bytes, bytearray, memoryview)):
                raise InvariantViolation(f"{tag} {vr} value must be bytes")
            return cls(tag, vr, pad_even(bytes(value), vr))

        values = value if isinstance(value, (list, tuple)) else ([] if value is None else [value])
        rendered = [
            format_ds(item) if vr == Vr.DS and isinstance(item, (int, float)) else str(item)
            for item in values
        ]
        raw = "\\".join(rendered).encode("utf-8")
        return cls(tag, vr, pad_even(raw, vr))

    def text(self) -> str:
        if self.vr == Vr.SQ:
            raise TypeMismatch(f"{self.tag} is a sequence, not text")
        if self.vr in _BINARY_FORMATS:
            return "\\".join(str(v) for v in self.values())
        decoded = self.raw.decode("utf-8", errors="replace").rstrip("\x00 ")
        return decoded if self.vr in _UNTRIMMED_LEADING else decoded.lstrip(" ")

    def strings(self) -> list[str]:
        return [part.strip(" \x00") for part in self.text().split("\\")]

    def values(self) -> tuple:
        """Binary numeric values (US, UL, SS, SL, FL, FD)."""
        fmt = _BINARY_FORMATS.get(self.vr)
        if fmt is None:
            raise TypeMismatch(f"{self.tag} {self.vr} is not a binary numeric VR")
        size = struct.calcsize(fmt)
        if len(self.raw) % size:
            raise TypeMismatch(f"{self.tag} length {len(self.raw)} not a multiple of {size}")
        return struct.unpack(f"<{len(self.raw) // size}{fmt}", self.raw)

    def decimals(self) -> list[float]:
        if self.vr in _BINARY_FORMATS:
            return [float(v) for v in self.values()]
        try:
            return [float(part) for part in self.strings() if part]
        except ValueError:
            raise TypeMismatch(f"{self.tag} value {self.text()!r} is not numeric") from None

    def decimal(self) -> float:
        found = self.decimals()
        if not found:
            raise TypeMismatch(f"{self.tag} is empty")
        return found[0]

    def integer(self) -> int:
        if self.vr in _BINARY_FORMATS:
            found = self.values()
            if not found:
                raise TypeMismatch(f"{self.tag} is empty")
            return int(found[0])
        try:
            return int(self.strings()[0])
        except (ValueError, IndexError):
            raise TypeMismatch(f"{self.tag} value {self.text()!r} is not an integer") from None

    def with_tag(self, tag: Tag) -> "DataElement":
        return DataElement(tag, self.vr, self.raw, self.items)


class DataSet:
    """Ordered, duplicate-free collection of DataElements."""

    __slots__ = ("_elements",)

    def __init__(self, elements: Iterable[DataElement] = ()):
        mapping: dict[Tag, DataElement] = {}
        for element in elements:
            if element.tag in mapping:
                raise InvariantViolation(f"duplicate tag {element.tag}")
            mapping[element.tag] = element
        self._elements = dict(sorted(mapping.items()))

    @classmethod
    def _from_mapping(cls, mapping: dict[Tag, DataElement]) -> "DataSet":
        instance = cls.__new__(cls)
        instance._elements = dict(sorted(mapping.items()))
        return instance

    @classmethod
    def of(cls, **values) -> "DataSet":
        """Build from keyword=value pairs using dictionary VRs."""
        return cls(DataElement.from_value(keyword, None, value) for keyword, value in values.items())

    def __iter__(self) -> Iterator[DataElement]:
        return iter(self._elements.values())

    def __len__(self) -> int:
        return len(self._elements)

    def __contains__(self, key: TagKey) -> bool:
        return tag_of(key) in self._elements

    def __getitem__(self, key: TagKey) -> DataElement:
        return self._elements[tag_of(key)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataSet):
            return NotImplemented
        return list(self._elements.values()) == list(other._elements.values())

    __hash__ = None

    def __repr__(self) -> str:
        return f"DataSet({len(self)} elements: {', '.join(str(t) for t in self._elements)})"

    def tags(self) -> list[Tag]:
        return list(self._elements)

    def get(self, key: TagKey) -> DataElement | None:
        return self._elements.get(tag_of(key))

    def put(self, element: DataElement) -> "DataSet":
        mapping = dict(self._elements)
        mapping[element.tag] = element
        return DataSet._from_mapping(mapping)

    def set(self, key: TagKey, vr: Vr | str | None, value) -> "DataSet":
        return self.put(DataElement.from_value(key, vr, value))

    def delete(self, key: TagKey) -> "DataSet":
        tag = tag_of(key)
        if tag not in self._elements:
            return self
        mapping = dict(self._elements)
        del mapping[tag]
        return DataSet._from_mapping(mapping)

    def text(self, key: TagKey, default: str | None = None) -> str | None:
        element = self.get(key)
        return element.text() if element is not None else default

    def decimal(self, key: TagKey) -> float | None:
        element = self.get(key)
        return element.decimal() if element is not None else None

    def integer(self, key: TagKey) -> int | None:
        element = self.get(key)
        return element.integer() if element is not None else None

    def items(self, key: TagKey) -> tuple["DataSet", ...]:
        element = self.get(key)
        return element.items if element is not None else ()


def element_get(
    ds: DataSet, tag: TagKey, kind: Literal["text", "decimal", "integer"] = "text"
) -> str | float | int | None:
    """Trimmed value of a tag, or None when absent.

    Raises TypeMismatch when the decimal or integer accessor meets non-numeric content.
    """
    element = ds.get(tag)
    if element is None:
        return None
    match kind:
        case "decimal":
            return element.decimal()
        case "integer":
            return element.integer()
        case _:
            return element.text()


def element_set(ds: DataSet, tag: TagKey, vr: Vr | str | None, value) -> DataSet:
    return ds.set(tag, vr, value)


def element_delete(ds: DataSet, tag: TagKey) -> DataSet:
    return ds.delete(tag)


REQUIRED_META = (Tag(0x0002, 0x0002), Tag(0x0002, 0x0003), Tag(0x0002, 0x0010))


@dataclass(frozen=True)
class DicomFile:
    file_meta: DataSet
    dataset: DataSet
    transfer_syntax: str
    preamble: bytes = bytes(128)

    @classmethod
    def create(
        cls,
        dataset: DataSet,
        transfer_syntax: str = EXPLICIT_VR_LE,
        source_ae: str | None = None,
    ) -> "DicomFile":
        """Wrap a dataset with file meta derived from its SOP class/instance."""
        sop_class = dataset.text("SOPClassUID")
        sop_instance = dataset.text("SOPInstanceUID")
        if not sop_class or not sop_instance:
            raise InvariantViolation("dataset lacks SOPClassUID or SOPInstanceUID")
        return cls(
            file_meta=build_file_meta(sop_class, sop_instance, transfer_syntax, source_ae),
            dataset=dataset,
            transfer_syntax=transfer_syntax,
        )

    @property
    def sop_class_uid(self) -> str:
        return self.file_meta.text("MediaStorageSOPClassUID") or ""

    @property
    def sop_instance_uid(self) -> str:
        return self.file_meta.text("MediaStorageSOPInstanceUID") or ""

    def with_dataset(self, dataset: DataSet) -> "DicomFile":
        return DicomFile(self.file_meta, dataset, self.transfer_syntax, self.preamble)

    def validate(self) -> None:
        missing = [str(tag) for tag in REQUIRED_META if tag not in self.file_meta]
        if missing:
            raise InvariantViolation(f"file meta missing {', '.join(missing)}")
        declared = self.file_meta.text("TransferSyntaxUID")
        if declared != self.transfer_syntax:
            raise InvariantViolation(
                f"file meta declares {declared} but file transfer syntax is {self.transfer_syntax}"
            )
        if self.transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
            raise InvariantViolation(f"transfer syntax {self.transfer_syntax} not supported")
        if len(self.preamble) != 128:
            raise InvariantViolation("preamble must be 128 bytes")
        stray = [str(e.tag) for e in self.file_meta if not e.tag.is_file_meta]
        stray += [str(e.tag) for e in self.dataset if e.tag.is_file_meta]
        if stray:
            raise InvariantViolation(f"group 0002 misplaced: {', '.join(stray)}")


def build_file_meta(
    sop_class: str, sop_instance: str, transfer_syntax: str, source_ae: str | None = None
) -> DataSet:
    elements = [
        DataElement.from_value("FileMetaInformationVersion", Vr.OB, b"\x00\x01"),
        DataElement.from_value("MediaStorageSOPClassUID", Vr.UI, sop_class),
        DataElement.from_value("MediaStorageSOPInstanceUID", Vr.UI, sop_instance),
        DataElement.from_value("TransferSyntaxUID", Vr.UI, transfer_syntax),
        DataElement.from_value("ImplementationClassUID", Vr.UI, IMPLEMENTATION_CLASS_UID),
        DataElement.from_value("ImplementationVersionName", Vr.SH, IMPLEMENTATION_VERSION),
    ]
    if source_ae:
        elements.append(DataElement.from_value("SourceApplicationEntityTitle", Vr.AE, source_ae))
    return DataSet(elements)


def code_item(value: str, scheme: str, meaning: str) -> DataSet:
    return DataSet.of(CodeValue=value, CodingSchemeDesignator=scheme, CodeMeaning=meaning)

