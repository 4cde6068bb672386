import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lib.dicom.codec import parse_part10, serialize_part10
from lib.dicom.dataset import DataSet
from lib.dicom.uids import IMPLICIT_VR_LE
from lib.errors import InvariantViolation
from lib.identity import Clock, UidSource
from lib.sr.builder import build_tid1500_sr, report_tree
from lib.sr.errors import DuplicateTarget, MalformedContentSequence, NotAnSr, TemplateSyntaxError
from lib.sr.model import (
    BBOX,
    CERTAINTY,
    DETECTION,
    DETECTION_VALUES,
    IMAGING_MEASUREMENT_REPORT,
    PRIORITY,
    SCHEME,
    Code,
    FindingReport,
    Relationship,
    Scoord,
    SrNode,
    ValueType,
)
from lib.sr.reader import parse_sr_tree
from lib.sr.template import STANDARD_TEMPLATE, extract_fields, finding_from_tree, parse_mapping_template

CONTEXT = dict(
    accession="ACC001",
    study_uid="1.2.3.4",
    patient_id="P001",
    patient_family="DOE",
    patient_given="JANE",
    patient_birth_date="19700101",
    study_date="20240101",
    study_code="CTCHEST",
    study_description="CT CHEST",
    image_id="IMG1",
    evaluation_type="MONAI",
)


def positive(**overrides) -> FindingReport:
    values = dict(priority="HIGH", detection="POS", certainty=10, bbox=(10, 20, 30, 40), **CONTEXT)
    values.update(overrides)
    return FindingReport.build(**values)


def reread(report: FindingReport, transfer_syntax=None):
    kwargs = {"transfer_syntax": transfer_syntax} if transfer_syntax else {}
    file = build_tid1500_sr(report, UidSource(seed=1), Clock(seed=1), **kwargs)
    return parse_part10(serialize_part10(file))


def test_positive_report_tree():
    tree = parse_sr_tree(reread(positive()))

    assert tree.value_type == ValueType.CONTAINER
    assert tree.concept.same_as(IMAGING_MEASUREMENT_REPORT)
    assert [child.concept.value for child in tree.children] == ["PRIORITY", "DETECTION", "CERTAINTY", "BBOX"]
    assert all(child.relationship == Relationship.CONTAINS for child in tree.children)

    assert tree.find(PRIORITY).payload.value == "HIGH"
    assert tree.find(DETECTION).payload.same_as(DETECTION_VALUES["POS"])
    assert tree.find(CERTAINTY).payload.value == 10.0
    box = tree.find(BBOX).payload
    assert box.graphic_type == "POLYLINE"
    assert box.points == ((10, 20), (30, 20), (30, 40), (10, 40), (10, 20))


def test_negative_report_has_no_bbox():
    tree = parse_sr_tree(reread(positive(priority="LOW", detection="NEG", certainty=2, bbox=None)))

    assert len(tree.children) == 3
    assert tree.find(BBOX) is None
    assert tree.find(DETECTION).payload.value == "NEG"


def test_report_header_carries_study_context():
    ds = reread(positive()).dataset

    assert ds.text("Modality") == "SR"
    assert ds.text("AccessionNumber") == "ACC001"
    assert ds.text("StudyInstanceUID") == "1.2.3.4"
    assert ds.text("PatientName") == "DOE^JANE"
    assert ds.text("CompletionFlag") == "COMPLETE"
    assert ds.items("ProcedureCodeSequence")[0].text("CodeValue") == "CTCHEST"


def test_seeded_build_is_deterministic():
    first = serialize_part10(build_tid1500_sr(positive(), UidSource(seed=5), Clock(seed=5)))
    second = serialize_part10(build_tid1500_sr(positive(), UidSource(seed=5), Clock(seed=5)))
    assert first == second


@pytest.mark.parametrize(
    "overrides",
    [
        dict(detection="NEG"),
        dict(bbox=(30, 20, 10, 40)),
        dict(bbox=(10, 20, 30, 20)),
        dict(certainty=11),
        dict(priority="URGENT"),
    ],
)
def test_invalid_finding_rejected(overrides):
    with pytest.raises(InvariantViolation):
        positive(**overrides)


def test_polyline_needs_four_points():
    with pytest.raises(InvariantViolation):
        Scoord("POLYLINE", ((0, 0), (1, 0), (0, 0)))


@st.composite
def findings(draw):
    detection = draw(st.sampled_from(["POS", "NEG"]))
    bbox = None
    if detection == "POS" and draw(st.booleans()):
        x0, y0 = draw(st.integers(0, 2000)), draw(st.integers(0, 2000))
        bbox = (x0, y0, x0 + draw(st.integers(1, 2000)), y0 + draw(st.integers(1, 2000)))
    return FindingReport.build(
        priority=draw(st.sampled_from(["HIGH", "MEDIUM", "LOW"])),
        detection=detection,
        certainty=draw(st.integers(0, 10)),
        bbox=bbox,
        **CONTEXT,
    )


@settings(max_examples=200, deadline=None)
@given(findings(), st.sampled_from([None, IMPLICIT_VR_LE]))
def test_build_then_read_recovers_report(report, transfer_syntax):
    file = reread(report, transfer_syntax)
    assert finding_from_tree(parse_sr_tree(file), file.dataset) == report


def test_image_is_not_an_sr(ct):
    with pytest.raises(NotAnSr):
        parse_sr_tree(ct)


def test_unknown_value_type_kept_opaque():
    file = build_tid1500_sr(positive())
    items = list(file.dataset.items("ContentSequence"))
    waveform = DataSet.of(ValueType="WAVEFORM", RelationshipType="CONTAINS")
    file = parse_part10(serialize_part10(file.with_dataset(file.dataset.set("ContentSequence", None, items + [waveform]))))

    tree = parse_sr_tree(file)

    assert len(tree.children) == 5
    assert tree.children[-1].opaque
    assert tree.children[-1].value_type == "WAVEFORM"
    assert tree.find(DETECTION).payload.value == "POS"


def test_code_item_without_value_is_malformed():
    file = build_tid1500_sr(positive())
    items = list(file.dataset.items("ContentSequence"))
    items[1] = items[1].delete("ConceptCodeSequence")
    file = file.with_dataset(file.dataset.set("ContentSequence", None, items))

    with pytest.raises(MalformedContentSequence, match="ConceptCodeSequence"):
        parse_sr_tree(file)


def test_root_must_be_container():
    file = build_tid1500_sr(positive())
    file = file.with_dataset(file.dataset.set("ValueType", None, "TEXT"))

    with pytest.raises(MalformedContentSequence):
        parse_sr_tree(file)


def test_standard_template_parses():
    tpl = parse_mapping_template(STANDARD_TEMPLATE)

    assert [e.field_id for e in tpl.entries] == ["AI_PRIORITY", "AI_DETECTION"]
    assert tpl.entries[0].concept == Code("PRIORITY", SCHEME)
    assert tpl.entries[0].default == "LOW"
    assert tpl.entries[1].default is None
    assert tpl.entries[1].mapped("POS") == "POS"


def test_empty_template():
    assert parse_mapping_template("# nothing mapped\n\n").entries == ()


def test_duplicate_target_rejected():
    text = STANDARD_TEMPLATE + "map AI_PRIORITY concept 99FLOWGATE:CERTAINTY\n"
    with pytest.raises(DuplicateTarget) as info:
        parse_mapping_template(text)
    assert info.value.field_id == "AI_PRIORITY"
    assert info.value.line == 3


@pytest.mark.parametrize(
    "text, line",
    [
        ("map AI_PRIORITY 99FLOWGATE:PRIORITY\n", 1),
        ("# header\nmap AI_PRIORITY concept 99FLOWGATE:PRIORITY { HIGH }\n", 2),
        ("map AI_PRIORITY concept PRIORITY\n", 1),
    ],
)
def test_template_syntax_errors(text, line):
    with pytest.raises(TemplateSyntaxError) as info:
        parse_mapping_template(text)
    assert info.value.line == line


def test_extract_fields_from_positive_report():
    file = reread(positive())
    result = extract_fields(parse_sr_tree(file), parse_mapping_template(STANDARD_TEMPLATE), file.dataset)

    assert result.fields == [("AI_PRIORITY", "HIGH"), ("AI_DETECTION", "POS")]
    assert result.warnings == []
    assert result.context["accession"] == "ACC001"
    assert result.context["patient_given"] == "JANE"


def test_missing_concept_uses_default():
    detection = SrNode(ValueType.CODE, DETECTION, DETECTION_VALUES["NEG"], Relationship.CONTAINS)
    tree = SrNode(ValueType.CONTAINER, IMAGING_MEASUREMENT_REPORT, children=(detection,))

    result = extract_fields(tree, parse_mapping_template(STANDARD_TEMPLATE))

    assert result.fields == [("AI_PRIORITY", "LOW"), ("AI_DETECTION", "NEG")]


def test_missing_concept_without_default_is_omitted():
    tree = report_tree(positive())
    tree = SrNode(tree.value_type, tree.concept, children=tree.children[:1])

    result = extract_fields(tree, parse_mapping_template(STANDARD_TEMPLATE))

    assert result.fields == [("AI_PRIORITY", "HIGH")]
    assert any("not found" in w for w in result.warnings)


def test_unmapped_code_passes_through():
    odd = SrNode(ValueType.CODE, DETECTION, Code("MAYBE", SCHEME, "Maybe"), Relationship.CONTAINS)
    tree = SrNode(ValueType.CONTAINER, IMAGING_MEASUREMENT_REPORT, children=(odd,))

    result = extract_fields(tree, parse_mapping_template(STANDARD_TEMPLATE))

    assert result.get("AI_DETECTION") == "MAYBE"
    assert any("not in value map" in w for w in result.warnings)


def test_first_match_in_document_order_wins():
    nested = SrNode(
        ValueType.CONTAINER,
        Code("GROUP", SCHEME),
        relationship=Relationship.CONTAINS,
        children=(SrNode(ValueType.CODE, PRIORITY, Code("MEDIUM", SCHEME), Relationship.CONTAINS),),
    )
    later = SrNode(ValueType.CODE, PRIORITY, Code("HIGH", SCHEME), Relationship.CONTAINS)
    tree = SrNode(ValueType.CONTAINER, IMAGING_MEASUREMENT_REPORT, children=(nested, later))

    result = extract_fields(tree, parse_mapping_template(STANDARD_TEMPLATE))

    assert result.get("AI_PRIORITY") == "MEDIUM"
