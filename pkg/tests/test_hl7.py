import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lib.errors import InvariantViolation
from lib.hl7.errors import BadDelimiters, BadFrame, Hl7ConnectionRefused, NotHl7
from lib.hl7.message import DEFAULT_DELIMITERS, Delimiters, Hl7Message, Segment, encode_message, msh_segment, parse_message
from lib.hl7.mllp import MllpServer, mllp_frame, mllp_send, mllp_unframe
from lib.hl7.orm import (
    AckCode,
    Layout,
    OrderRef,
    OrmContext,
    PatientRef,
    ack_code,
    build_ack,
    build_orm_o01,
    control_id,
    message_layout,
    message_type,
)
from lib.sim.sinks import AckMode, MllpSink
from tests.conftest import GOLDEN


@pytest.fixture
def orm_context() -> OrmContext:
    return OrmContext(
        sending_app="MONAI_TEST",
        receiving_app="HIS_TEST",
        timestamp="20240101120000",
        control_id="GUID-1",
        processing_id="T",
        version="2.5.1",
        patient=PatientRef(id="12345", assigning="MC", family="DOE", given="JANE", birth_date="19700101"),
        order=OrderRef(
            accession="ACC001",
            study_code="XR1",
            study_description="XRAY CHEST",
            image_id="IMAGEID",
            short_description="CHEST",
            study_date="20240101",
            transaction_datetime="20240101120005",
        ),
        obx=(("AI_PRIORITY_MONAI", "HIGH"), ("AI_DETECTION_MONAI", "POS")),
    )


@pytest.mark.parametrize("strict, golden", [(False, "orm_figure.hl7"), (True, "orm_strict.hl7")])
def test_orm_matches_golden(orm_context, strict, golden):
    data = encode_message(build_orm_o01(orm_context, strict=strict))
    assert data == (GOLDEN / golden).read_bytes()


def test_orm_segment_rows(orm_context):
    lines = encode_message(build_orm_o01(orm_context)).decode().split("\r")

    assert [line[:3] for line in lines if line] == ["MSH", "PID", "ORC", "OBR", "OBX", "OBX"]
    assert "PID|||12345^^^MC^MC||DOE^JANE||19700101" in lines
    assert "OBX|1|ST|AI_PRIORITY_MONAI||HIGH" in lines
    assert "OBX|2|ST|AI_DETECTION_MONAI||POS" in lines


@pytest.mark.parametrize("golden, layout", [("orm_figure.hl7", Layout.FIGURE), ("orm_strict.hl7", Layout.STRICT)])
def test_golden_parses(golden, layout):
    data = (GOLDEN / golden).read_bytes()
    msg = parse_message(data)

    assert message_layout(msg) == layout
    assert message_type(msg) == "ORM^O01"
    assert control_id(msg) == "GUID-1"
    assert encode_message(msg) == data


def test_lf_terminators_accepted():
    data = (GOLDEN / "orm_figure.hl7").read_bytes()
    assert parse_message(data.replace(b"\r", b"\n")) == parse_message(data)
    assert parse_message(data.replace(b"\r", b"\r\n")) == parse_message(data)


@pytest.mark.parametrize("overrides", [dict(obx=()), dict(control_id="")])
def test_orm_needs_rows_and_control_id(orm_context, overrides):
    with pytest.raises(InvariantViolation):
        build_orm_o01(orm_context.model_copy(update=overrides))


def test_delimiters_are_escaped():
    msg = Hl7Message((msh_segment(DEFAULT_DELIMITERS, "APP"), Segment.of("OBX", "1", "ST", "A|B", "", "C\\D")))
    data = encode_message(msg)

    assert b"OBX|1|ST|A\\F\\B||C\\E\\D\r" in data
    assert parse_message(data).segment("OBX").component(3) == "A|B"


def test_escaped_escape_decodes():
    assert DEFAULT_DELIMITERS.unescape_value("A\\E\\B") == "A\\B"
    assert DEFAULT_DELIMITERS.unescape_value("\\.br\\") == "\\.br\\"


@given(st.text(st.characters(min_codepoint=32, max_codepoint=126)))
def test_escape_is_total(value):
    d = DEFAULT_DELIMITERS
    assert d.unescape_value(d.escape_value(value)) == value


_values = st.text(st.characters(exclude_categories=("Cs", "Cc")), max_size=8)
_fields = st.lists(st.lists(_values, min_size=1, max_size=3).map(tuple), min_size=1, max_size=2).map(tuple)
_segments = st.builds(
    lambda seg_id, fields: Segment(seg_id, tuple(fields)),
    st.from_regex(r"[A-Z][A-Z0-9]{2}", fullmatch=True).filter(lambda s: s != "MSH"),
    st.lists(_fields, max_size=6),
)


@settings(max_examples=300)
@given(st.lists(_segments, max_size=5))
def test_parse_inverts_encode(segments):
    msg = Hl7Message((msh_segment(DEFAULT_DELIMITERS, "APP", "HIS"), *segments))
    assert parse_message(encode_message(msg)) == msg


def test_not_hl7():
    with pytest.raises(NotHl7):
        parse_message(b"PID|||12345\r")


@pytest.mark.parametrize("data", [b"MSH|^~\\|APP\r", b"MSH|^^\\&|APP\r", b"MSH|"])
def test_bad_delimiters(data):
    with pytest.raises(BadDelimiters):
        parse_message(data)


def test_delimiters_must_be_distinct():
    with pytest.raises(BadDelimiters):
        Delimiters(component="|")


def test_framing():
    assert mllp_frame(b"") == b"\x0b\x1c\x0d"
    assert mllp_unframe(mllp_frame(b"MSH|x")) == b"MSH|x"
    with pytest.raises(BadFrame):
        mllp_unframe(b"\x0bMSH|x")
    with pytest.raises(BadFrame):
        mllp_unframe(b"MSH|x\x1c\x0d")


def test_ack_echoes_control_id(orm_context):
    ack = build_ack(build_orm_o01(orm_context), AckCode.AE, "20240101120001", "bad order")
    parsed = parse_message(encode_message(ack))

    assert ack_code(parsed) == AckCode.AE
    assert parsed.segment("MSA").component(2) == "GUID-1"
    assert message_type(parsed) == "ACK^O01"


@pytest.mark.parametrize("mode, expected", [(AckMode.AA, AckCode.AA), (AckMode.AE, AckCode.AE)])
def test_send_to_sink(tmp_path, orm_context, mode, expected):
    msg = build_orm_o01(orm_context)
    with MllpSink(0, mode, tmp_path) as sink:
        assert mllp_send(("127.0.0.1", sink.port), msg, timeout=5) == expected
        assert sink.messages() == [msg]


def test_silent_peer_times_out(tmp_path, orm_context):
    with MllpSink(0, AckMode.NONE, tmp_path) as sink:
        assert mllp_send(("127.0.0.1", sink.port), build_orm_o01(orm_context), timeout=0.5) == AckCode.TIMEOUT


def test_connection_refused(free_port, orm_context):
    with pytest.raises(Hl7ConnectionRefused):
        mllp_send(("127.0.0.1", free_port), build_orm_o01(orm_context), timeout=2)


def test_server_acknowledges_each_message(orm_context):
    seen = []

    def respond(msg):
        seen.append(control_id(msg))
        return build_ack(msg, AckCode.AA, "20240101120001")

    with MllpServer("127.0.0.1", 0, respond) as server:
        for n in range(3):
            ctx = orm_context.model_copy(update={"control_id": f"GUID-{n}"})
            assert mllp_send(("127.0.0.1", server.port), build_orm_o01(ctx), timeout=5) == AckCode.AA

    assert seen == ["GUID-0", "GUID-1", "GUID-2"]
