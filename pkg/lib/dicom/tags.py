import re
from dataclasses import dataclass
from enum import StrEnum

from lib.errors import InvariantViolation

_TAG_TEXT = re.compile(r"^\(\s*([0-9A-Fa-f]{4})\s*,\s*([0-9A-Fa-f]{4})\s*\)$")


@dataclass(frozen=True, order=True)
class Tag:
    group: int
    element: int

    def __post_init__(self):
        if not (0 <= self.group <= 0xFFFF and 0 <= self.element <= 0xFFFF):
            raise InvariantViolation(f"tag ({self.group:#x},{self.element:#x}) outside 16-bit range")

    @classmethod
    def parse(cls, text: str) -> "Tag":
        """Parse the '(gggg,eeee)' notation."""
        match = _TAG_TEXT.match(text.strip())
        if not match:
            raise ValueError(f"not a tag: {text!r}")
        return cls(int(match.group(1), 16), int(match.group(2), 16))

    @property
    def is_private(self) -> bool:
        return self.group % 2 == 1

    @property
    def is_file_meta(self) -> bool:
        return self.group == 0x0002

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"


class Vr(StrEnum):
    AE = "AE"
    CS = "CS"
    DA = "DA"
    DS = "DS"
    DT = "DT"
    FD = "FD"
    FL = "FL"
    IS = "IS"
    LO = "LO"
    LT = "LT"
    OB = "OB"
    OW = "OW"
    PN = "PN"
    SH = "SH"
    SL = "SL"
    SQ = "SQ"
    SS = "SS"
    ST = "ST"
    TM = "TM"
    UI = "UI"
    UL = "UL"
    UN = "UN"
    US = "US"
    UT = "UT"

    @property
    def long_length(self) -> bool:
        """Explicit VR encodes a 4-byte length (after 2 reserved bytes)."""
        return self in _LONG_LENGTH

    @property
    def is_text(self) -> bool:
        return self in TEXT_VRS

    @property
    def pad_byte(self) -> bytes:
        return b" " if self in TEXT_VRS and self != Vr.UI else b"\x00"


_LONG_LENGTH = frozenset({Vr.OB, Vr.OW, Vr.SQ, Vr.UN, Vr.UT})

TEXT_VRS = frozenset(
    {Vr.AE, Vr.CS, Vr.DA, Vr.DS, Vr.DT, Vr.IS, Vr.LO, Vr.LT, Vr.PN, Vr.SH, Vr.ST, Vr.TM, Vr.UI, Vr.UT}
)

# Explicit VR codes the standard defines with a 4-byte length, including ones
# flowgate only carries as UN.
LONG_LENGTH_CODES = frozenset({"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"})

# (group, element) -> (VR, keyword). Covers every element flowgate reads or writes.
DICTIONARY: dict[Tag, tuple[Vr, str]] = {
    Tag(0x0000, 0x0000): (Vr.UL, "CommandGroupLength"),
    Tag(0x0000, 0x0002): (Vr.UI, "AffectedSOPClassUID"),
    Tag(0x0000, 0x0100): (Vr.US, "CommandField"),
    Tag(0x0000, 0x0110): (Vr.US, "MessageID"),
    Tag(0x0000, 0x0120): (Vr.US, "MessageIDBeingRespondedTo"),
    Tag(0x0000, 0x0700): (Vr.US, "Priority"),
    Tag(0x0000, 0x0800): (Vr.US, "CommandDataSetType"),
    Tag(0x0000, 0x0900): (Vr.US, "Status"),
    Tag(0x0000, 0x1000): (Vr.UI, "AffectedSOPInstanceUID"),
    Tag(0x0002, 0x0000): (Vr.UL, "FileMetaInformationGroupLength"),
    Tag(0x0002, 0x0001): (Vr.OB, "FileMetaInformationVersion"),
    Tag(0x0002, 0x0002): (Vr.UI, "MediaStorageSOPClassUID"),
    Tag(0x0002, 0x0003): (Vr.UI, "MediaStorageSOPInstanceUID"),
    Tag(0x0002, 0x0010): (Vr.UI, "TransferSyntaxUID"),
    Tag(0x0002, 0x0012): (Vr.UI, "ImplementationClassUID"),
    Tag(0x0002, 0x0013): (Vr.SH, "ImplementationVersionName"),
    Tag(0x0002, 0x0016): (Vr.AE, "SourceApplicationEntityTitle"),
    Tag(0x0008, 0x0005): (Vr.CS, "SpecificCharacterSet"),
    Tag(0x0008, 0x0016): (Vr.UI, "SOPClassUID"),
    Tag(0x0008, 0x0018): (Vr.UI, "SOPInstanceUID"),
    Tag(0x0008, 0x0020): (Vr.DA, "StudyDate"),
    Tag(0x0008, 0x0023): (Vr.DA, "ContentDate"),
    Tag(0x0008, 0x0030): (Vr.TM, "StudyTime"),
    Tag(0x0008, 0x0033): (Vr.TM, "ContentTime"),
    Tag(0x0008, 0x0050): (Vr.SH, "AccessionNumber"),
    Tag(0x0008, 0x0060): (Vr.CS, "Modality"),
    Tag(0x0008, 0x0064): (Vr.CS, "ConversionType"),
    Tag(0x0008, 0x0070): (Vr.LO, "Manufacturer"),
    Tag(0x0008, 0x0080): (Vr.LO, "InstitutionName"),
    Tag(0x0008, 0x0100): (Vr.SH, "CodeValue"),
    Tag(0x0008, 0x0102): (Vr.SH, "CodingSchemeDesignator"),
    Tag(0x0008, 0x0104): (Vr.LO, "CodeMeaning"),
    Tag(0x0008, 0x1030): (Vr.LO, "StudyDescription"),
    Tag(0x0008, 0x1032): (Vr.SQ, "ProcedureCodeSequence"),
    Tag(0x0008, 0x103E): (Vr.LO, "SeriesDescription"),
    Tag(0x0010, 0x0010): (Vr.PN, "PatientName"),
    Tag(0x0010, 0x0020): (Vr.LO, "PatientID"),
    Tag(0x0010, 0x0021): (Vr.LO, "IssuerOfPatientID"),
    Tag(0x0010, 0x0030): (Vr.DA, "PatientBirthDate"),
    Tag(0x0010, 0x0040): (Vr.CS, "PatientSex"),
    Tag(0x0018, 0x0015): (Vr.CS, "BodyPartExamined"),
    Tag(0x0018, 0x0050): (Vr.DS, "SliceThickness"),
    Tag(0x0020, 0x000D): (Vr.UI, "StudyInstanceUID"),
    Tag(0x0020, 0x000E): (Vr.UI, "SeriesInstanceUID"),
    Tag(0x0020, 0x0010): (Vr.SH, "StudyID"),
    Tag(0x0020, 0x0011): (Vr.IS, "SeriesNumber"),
    Tag(0x0020, 0x0013): (Vr.IS, "InstanceNumber"),
    Tag(0x0020, 0x0032): (Vr.DS, "ImagePositionPatient"),
    Tag(0x0020, 0x0037): (Vr.DS, "ImageOrientationPatient"),
    Tag(0x0020, 0x0052): (Vr.UI, "FrameOfReferenceUID"),
    Tag(0x0028, 0x0002): (Vr.US, "SamplesPerPixel"),
    Tag(0x0028, 0x0004): (Vr.CS, "PhotometricInterpretation"),
    Tag(0x0028, 0x0010): (Vr.US, "Rows"),
    Tag(0x0028, 0x0011): (Vr.US, "Columns"),
    Tag(0x0028, 0x0030): (Vr.DS, "PixelSpacing"),
    Tag(0x0028, 0x0100): (Vr.US, "BitsAllocated"),
    Tag(0x0028, 0x0101): (Vr.US, "BitsStored"),
    Tag(0x0028, 0x0102): (Vr.US, "HighBit"),
    Tag(0x0028, 0x0103): (Vr.US, "PixelRepresentation"),
    Tag(0x0028, 0x1052): (Vr.DS, "RescaleIntercept"),
    Tag(0x0028, 0x1053): (Vr.DS, "RescaleSlope"),
    Tag(0x0040, 0x08EA): (Vr.SQ, "MeasurementUnitsCodeSequence"),
    Tag(0x0040, 0xA010): (Vr.CS, "RelationshipType"),
    Tag(0x0040, 0xA040): (Vr.CS, "ValueType"),
    Tag(0x0040, 0xA043): (Vr.SQ, "ConceptNameCodeSequence"),
    Tag(0x0040, 0xA050): (Vr.CS, "ContinuityOfContent"),
    Tag(0x0040, 0xA160): (Vr.UT, "TextValue"),
    Tag(0x0040, 0xA168): (Vr.SQ, "ConceptCodeSequence"),
    Tag(0x0040, 0xA300): (Vr.SQ, "MeasuredValueSequence"),
    Tag(0x0040, 0xA30A): (Vr.DS, "NumericValue"),
    Tag(0x0040, 0xA491): (Vr.CS, "CompletionFlag"),
    Tag(0x0040, 0xA493): (Vr.CS, "VerificationFlag"),
    Tag(0x0040, 0xA730): (Vr.SQ, "ContentSequence"),
    Tag(0x0070, 0x0022): (Vr.FL, "GraphicData"),
    Tag(0x0070, 0x0023): (Vr.CS, "GraphicType"),
    Tag(0x7FE0, 0x0010): (Vr.OW, "PixelData"),
}

_BY_KEYWORD: dict[str, Tag] = {keyword: tag for tag, (_, keyword) in DICTIONARY.items()}


def dict_vr(tag: Tag) -> Vr:
    """VR from the built-in dictionary; UN for private or unknown tags."""
    entry = DICTIONARY.get(tag)
    return entry[0] if entry else Vr.UN


def tag_of(key: "Tag | str") -> Tag:
    """Resolve a keyword ('Modality') or '(gggg,eeee)' text to a Tag."""
    if isinstance(key, Tag):
        return key
    if key.startswith("("):
        return Tag.parse(key)
    try:
        return _BY_KEYWORD[key]
    except KeyError:
        raise KeyError(f"unknown DICOM keyword '{key}'") from None


def keyword_of(tag: Tag) -> str | None:
    entry = DICTIONARY.get(tag)
    return entry[1] if entry else None
