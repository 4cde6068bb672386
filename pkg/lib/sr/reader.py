import logging

from lib.dicom.dataset import DataSet, DicomFile
from lib.dicom.errors import DicomError
from lib.dicom.uids import SR_STORAGE_CLASSES
from lib.errors import InvariantViolation
from lib.sr.errors import MalformedContentSequence, NotAnSr
from lib.sr.model import Code, Measurement, Scoord, SrNode, ValueType

logger = logging.getLogger(__name__)

_KNOWN = frozenset(v.value for v in ValueType)


def _decode_code(item: DataSet, where: str) -> Code:
    try:
        return Code(item.text("CodeValue", ""), item.text("CodingSchemeDesignator", ""), item.text("CodeMeaning", ""))
    except InvariantViolation as e:
        raise MalformedContentSequence(f"{where}: {e}") from None


def _first_code(ds: DataSet, keyword: str, where: str) -> Code | None:
    items = ds.items(keyword)
    return _decode_code(items[0], where) if items else None


def _decode_item(ds: DataSet, path: str) -> SrNode:
    value_type = ds.text("ValueType")
    if not value_type:
        raise MalformedContentSequence(f"{path}: content item without ValueType")
    relationship = ds.text("RelationshipType")

    if value_type not in _KNOWN:
        logger.debug("%s: value type %s kept opaque", path, value_type)
        try:
            concept = _first_code(ds, "ConceptNameCodeSequence", path)
        except MalformedContentSequence:
            concept = None
        return SrNode(value_type, concept, None, relationship, (), opaque=True)

    concept = _first_code(ds, "ConceptNameCodeSequence", path)
    if concept is None:
        raise MalformedContentSequence(f"{path}: {value_type} item has no concept name")

    try:
        match value_type:
            case ValueType.CODE:
                payload = _first_code(ds, "ConceptCodeSequence", path)
                if payload is None:
                    raise MalformedContentSequence(f"{path}: CODE item without ConceptCodeSequence")
            case ValueType.TEXT:
                payload = ds.text("TextValue", "")
            case ValueType.NUM:
                measured = ds.items("MeasuredValueSequence")
                if not measured:
                    raise MalformedContentSequence(f"{path}: NUM item without MeasuredValueSequence")
                unit = _first_code(measured[0], "MeasurementUnitsCodeSequence", path)
                value = measured[0].decimal("NumericValue")
                if value is None or unit is None:
                    raise MalformedContentSequence(f"{path}: NUM item lacks a value or a unit")
                payload = Measurement(value, unit)
            case ValueType.SCOORD:
                data = ds.get("GraphicData")
                coords = data.decimals() if data is not None else []
                if len(coords) % 2:
                    raise MalformedContentSequence(f"{path}: odd number of graphic coordinates")
                points = tuple(zip(coords[0::2], coords[1::2]))
                payload = Scoord(ds.text("GraphicType", ""), points)
            case _:
                payload = None
    except (DicomError, InvariantViolation) as e:
        raise MalformedContentSequence(f"{path}: {e}") from e

    children = tuple(
        _decode_item(child, f"{path}.{i + 1}") for i, child in enumerate(ds.items("ContentSequence"))
    )
    return SrNode(value_type, concept, payload, relationship, children)


def parse_sr_tree(file: DicomFile) -> SrNode:
    sop_class = file.dataset.text("SOPClassUID") or file.sop_class_uid
    if sop_class not in SR_STORAGE_CLASSES:
        raise NotAnSr(f"SOP class {sop_class} is not a structured report")
    if file.dataset.text("ValueType") != ValueType.CONTAINER:
        raise MalformedContentSequence("SR root content item is not a CONTAINER")
    return _decode_item(file.dataset, "1")
