"""Imaging measurement report (TID1500-style) SR writer."""

from lib.dicom.dataset import DataSet, DicomFile, code_item, format_ds
from lib.dicom.tags import Vr
from lib.dicom.uids import COMPREHENSIVE_SR_STORAGE, EXPLICIT_VR_LE
from lib.identity import Clock, UidSource, dicom_date, dicom_time
from lib.sr.model import (
    BBOX,
    CERTAINTY,
    DETECTION,
    DETECTION_VALUES,
    IMAGING_MEASUREMENT_REPORT,
    NO_UNITS,
    PRIORITY,
    PRIORITY_VALUES,
    SCHEME,
    Code,
    FindingReport,
    Measurement,
    Relationship,
    Scoord,
    SrNode,
    ValueType,
    closed_box,
)


def report_tree(report: FindingReport) -> SrNode:
    children = [
        SrNode(ValueType.CODE, PRIORITY, PRIORITY_VALUES[report.priority], Relationship.CONTAINS),
        SrNode(ValueType.CODE, DETECTION, DETECTION_VALUES[report.detection], Relationship.CONTAINS),
        SrNode(ValueType.NUM, CERTAINTY, Measurement(float(report.certainty), NO_UNITS), Relationship.CONTAINS),
    ]
    if report.bbox is not None:
        children.append(
            SrNode(ValueType.SCOORD, BBOX, Scoord("POLYLINE", closed_box(*map(float, report.bbox))), Relationship.CONTAINS)
        )
    return SrNode(ValueType.CONTAINER, IMAGING_MEASUREMENT_REPORT, None, None, tuple(children))


def _code(code: Code) -> DataSet:
    return code_item(code.value, code.scheme, code.meaning)


def encode_node(node: SrNode) -> DataSet:
    """One content item; the root's relationship is None and it is merged into the dataset."""
    ds = DataSet.of(ValueType=str(node.value_type))
    if node.relationship is not None:
        ds = ds.set("RelationshipType", None, str(node.relationship))
    if node.concept is not None:
        ds = ds.set("ConceptNameCodeSequence", None, [_code(node.concept)])

    match node.payload:
        case Code() as code:
            ds = ds.set("ConceptCodeSequence", None, [_code(code)])
        case str() as text:
            ds = ds.set("TextValue", None, text)
        case Measurement(value, unit):
            measured = DataSet.of(NumericValue=format_ds(value), MeasurementUnitsCodeSequence=[_code(unit)])
            ds = ds.set("MeasuredValueSequence", None, [measured])
        case Scoord(graphic_type, points):
            ds = ds.set("GraphicType", None, graphic_type)
            ds = ds.set("GraphicData", Vr.FL, [c for point in points for c in point])

    if node.value_type == ValueType.CONTAINER:
        ds = ds.set("ContinuityOfContent", None, "SEPARATE")
    if node.children:
        ds = ds.set("ContentSequence", None, [encode_node(child) for child in node.children])
    return ds


def build_tid1500_sr(
    report: FindingReport,
    uids: UidSource | None = None,
    clock: Clock | None = None,
    transfer_syntax: str = EXPLICIT_VR_LE,
) -> DicomFile:
    uids = uids or UidSource()
    clock = clock or Clock()
    now = clock.now()

    header = DataSet.of(
        SpecificCharacterSet="ISO_IR 192",
        SOPClassUID=COMPREHENSIVE_SR_STORAGE,
        SOPInstanceUID=uids.next("sr-instance"),
        StudyDate=report.study_date,
        ContentDate=dicom_date(now),
        ContentTime=dicom_time(now),
        AccessionNumber=report.accession,
        Modality="SR",
        Manufacturer=report.evaluation_type,
        StudyDescription=report.study_description,
        PatientName=f"{report.patient_family}^{report.patient_given}" if report.patient_given else report.patient_family,
        PatientID=report.patient_id,
        PatientBirthDate=report.patient_birth_date,
        StudyInstanceUID=report.study_uid or uids.derive("study"),
        SeriesInstanceUID=uids.next("sr-series"),
        StudyID=report.image_id,
        SeriesNumber="900",
        InstanceNumber="1",
        CompletionFlag="COMPLETE",
        VerificationFlag="UNVERIFIED",
    )
    if report.patient_issuer:
        header = header.set("IssuerOfPatientID", None, report.patient_issuer)
    if report.short_description:
        header = header.set("BodyPartExamined", None, report.short_description)
    if report.study_code:
        procedure = code_item(report.study_code, SCHEME, report.study_description or report.study_code)
        header = header.set("ProcedureCodeSequence", None, [procedure])

    dataset = header
    for element in encode_node(report_tree(report)):
        dataset = dataset.put(element)
    return DicomFile.create(dataset, transfer_syntax)
