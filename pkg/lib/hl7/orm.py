"""ORM^O01 prioritisation orders and their acknowledgements.

Two MSH/ORC layouts are supported. FIGURE is the layout the HIS worklist
integration reads (timestamp at MSH-6, message type at MSH-8,
transaction time at ORC-6). STRICT uses the v2.5.1 positions (MSH-7, MSH-9, ORC-9).
PID, OBR and OBX are the same in both.
"""

from enum import StrEnum

from pydantic import BaseModel, ConfigDict, Field

from lib.errors import InvariantViolation
from lib.hl7.message import DEFAULT_DELIMITERS, Hl7Message, Segment, msh_segment


class Layout(StrEnum):
    FIGURE = "figure"
    STRICT = "strict"


class AckCode(StrEnum):
    AA = "AA"
    AE = "AE"
    AR = "AR"
    TIMEOUT = "timeout"


class PatientRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(description="Patient identifier (PID-3.1)")
    assigning: str = Field(default="MC", description="Assigning authority and facility (PID-3.4, PID-3.5)")
    family: str = ""
    given: str = ""
    birth_date: str = Field(default="", description="YYYYMMDD")


class OrderRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    accession: str = Field(description="Accession number (OBR-3)")
    study_code: str = ""
    study_description: str = ""
    image_id: str = Field(default="IMAGEID", description="Third OBR-4 component")
    short_description: str = ""
    study_date: str = Field(default="", description="YYYYMMDD, written to OBR-7 and OBR-12")
    transaction_datetime: str = Field(default="", description="YYYYMMDDHHMMSS, written to ORC-6 or ORC-9")


class OrmContext(BaseModel):
    model_config = ConfigDict(frozen=True)

    sending_app: str = Field(default="MONAI_TEST", description="The AI product name")
    receiving_app: str = Field(default="HIS_TEST", description="The hospital information system")
    timestamp: str = Field(description="YYYYMMDDHHMMSS")
    control_id: str = Field(description="Message control id, a GUID")
    processing_id: str = "T"
    version: str = "2.5.1"
    patient: PatientRef
    order: OrderRef
    obx: tuple[tuple[str, str], ...] = Field(default=(), description="(identifier, value) rows in order")


def build_orm_o01(ctx: OrmContext, strict: bool = False) -> Hl7Message:
    if not ctx.control_id:
        raise InvariantViolation("ORM^O01 needs a control id")
    if not ctx.obx:
        raise InvariantViolation("ORM^O01 needs at least one OBX row")

    d = DEFAULT_DELIMITERS
    if strict:
        msh = msh_segment(d, ctx.sending_app, "", ctx.receiving_app, "", ctx.timestamp, "",
                          ("ORM", "O01"), ctx.control_id, ctx.processing_id, ctx.version)
        orc = Segment.of("ORC", "XO", "", "", "", "", "", "", "", ctx.order.transaction_datetime)
    else:
        msh = msh_segment(d, ctx.sending_app, ctx.receiving_app, "", ctx.timestamp, "",
                          ("ORM", "O01"), ctx.control_id, ctx.processing_id, ctx.version)
        orc = Segment.of("ORC", "XO", "", "", "", "", ctx.order.transaction_datetime)

    p = ctx.patient
    pid = Segment.of("PID", "", "", (p.id, "", "", p.assigning, p.assigning), "", (p.family, p.given), "", p.birth_date)

    o = ctx.order
    obr = Segment.of(
        "OBR", "1", "", o.accession,
        (o.study_code, o.study_description, o.image_id, "", o.short_description),
        "", "", o.study_date, "", "", "", "", o.study_date,
    )
    obx = [Segment.of("OBX", str(i), "ST", ident, "", value) for i, (ident, value) in enumerate(ctx.obx, start=1)]
    return Hl7Message((msh, pid, orc, obr, *obx), d)


def message_layout(msg: Hl7Message) -> Layout:
    # MSH-8 (security) is empty in strict messages and holds the type in figure ones.
    return Layout.FIGURE if msg.msh.text(8) else Layout.STRICT


def message_type(msg: Hl7Message) -> str:
    return msg.msh.text(8 if message_layout(msg) == Layout.FIGURE else 9, msg.delimiters)


def control_id(msg: Hl7Message) -> str:
    return msg.msh.component(9 if message_layout(msg) == Layout.FIGURE else 10)


def sending_app(msg: Hl7Message) -> str:
    return msg.msh.component(3)


def receiving_app(msg: Hl7Message) -> str:
    return msg.msh.component(4 if message_layout(msg) == Layout.FIGURE else 5)


def build_ack(msg: Hl7Message, code: AckCode | str, timestamp: str, text: str = "") -> Hl7Message:
    """Strict-layout ACK echoing the original control id in MSA-2."""
    original = control_id(msg)
    figure = message_layout(msg) == Layout.FIGURE
    trigger = msg.msh.component(8 if figure else 9, 2)
    processing = msg.msh.component(10 if figure else 11) or "P"
    msh = msh_segment(msg.delimiters, receiving_app(msg), "", sending_app(msg), "", timestamp, "",
                      ("ACK", trigger) if trigger else "ACK", original, processing, "2.5.1")
    msa = Segment.of("MSA", str(code), original, text)
    return Hl7Message((msh, msa), msg.delimiters)


def ack_code(ack: Hl7Message) -> AckCode:
    msa = ack.segment("MSA")
    value = msa.component(1) if msa is not None else ""
    try:
        return AckCode(value)
    except ValueError:
        raise InvariantViolation(f"acknowledgement carries no valid MSA-1 code: {value!r}") from None
