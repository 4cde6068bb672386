"""Mapping templates: which SR concept feeds which HL7 result field.

    # comment
    map AI_PRIORITY concept 99FLOWGATE:PRIORITY { HIGH=HIGH, MEDIUM=MEDIUM, LOW=LOW } default LOW
"""

import logging
import re
from dataclasses import dataclass, field

from lib.dicom.dataset import DataSet, format_ds
from lib.sr.errors import DuplicateTarget, TemplateSyntaxError
from lib.sr.model import (
    BBOX,
    CERTAINTY,
    DETECTION,
    PRIORITY,
    Code,
    FindingReport,
    Measurement,
    Scoord,
    SrNode,
)

logger = logging.getLogger(__name__)

# Used when a gateway config names no template file.
STANDARD_TEMPLATE = """\
map AI_PRIORITY concept 99FLOWGATE:PRIORITY { HIGH=HIGH, MEDIUM=MEDIUM, LOW=LOW } default LOW
map AI_DETECTION concept 99FLOWGATE:DETECTION { POS=POS, NEG=NEG }
"""

_WORD = r"[^\s,{}=#]+"
_LINE = re.compile(
    rf"^map\s+(?P<field>[A-Za-z_][A-Za-z0-9_]*)\s+concept\s+(?P<scheme>[^\s:]+):(?P<value>[^\s{{}}]+)"
    rf"(?:\s*\{{(?P<map>[^}}]*)\}})?"
    rf"(?:\s+default\s+(?P<default>{_WORD}))?\s*$"
)
_PAIR = re.compile(rf"^\s*({_WORD})\s*=\s*({_WORD})\s*$")


@dataclass(frozen=True)
class TemplateEntry:
    field_id: str
    concept: Code
    value_map: tuple[tuple[str, str], ...] = ()
    default: str | None = None

    def mapped(self, code_value: str) -> str | None:
        return dict(self.value_map).get(code_value)


@dataclass(frozen=True)
class MappingTemplate:
    entries: tuple[TemplateEntry, ...] = ()


def parse_mapping_template(text: str) -> MappingTemplate:
    entries: list[TemplateEntry] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        column = raw.find(line) + 1
        match = _LINE.match(line)
        if not match:
            raise TemplateSyntaxError(
                lineno, column, "expected: map FIELD concept scheme:value { code=out, ... } [default out]"
            )
        pairs = []
        body = match.group("map")
        if body is not None and body.strip():
            offset = column + match.start("map")
            for part in body.split(","):
                pair = _PAIR.match(part)
                if not pair:
                    raise TemplateSyntaxError(lineno, offset, f"expected code=out, got {part.strip()!r}")
                pairs.append((pair.group(1), pair.group(2)))
                offset += len(part) + 1
        field_id = match.group("field")
        if field_id in seen:
            raise DuplicateTarget(field_id, lineno)
        seen.add(field_id)
        entries.append(
            TemplateEntry(
                field_id=field_id,
                concept=Code(match.group("value"), match.group("scheme")),
                value_map=tuple(pairs),
                default=match.group("default"),
            )
        )
    return MappingTemplate(tuple(entries))


def read_mapping_template(path) -> MappingTemplate:
    with open(path, "r", encoding="utf-8") as f:
        return parse_mapping_template(f.read())


@dataclass
class Extraction:
    fields: list[tuple[str, str]] = field(default_factory=list)
    context: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def get(self, field_id: str) -> str | None:
        return dict(self.fields).get(field_id)


def _render(node: SrNode, entry: TemplateEntry, warnings: list[str]) -> str | None:
    match node.payload:
        case Code() as code:
            out = entry.mapped(code.value)
            if out is None:
                warnings.append(f"{entry.field_id}: code {code.value} not in value map, passed through")
                return code.value
            return out
        case Measurement(value, _):
            return format_ds(value)
        case Scoord(_, points):
            return ",".join(format_ds(c) for point in points for c in point)
        case str() as text:
            return text
    warnings.append(f"{entry.field_id}: {node.value_type} node has no renderable value")
    return None


def study_context(dataset: DataSet | None) -> dict[str, str]:
    """Patient, order and study fields an HL7 message needs, read from the SR header."""
    if dataset is None:
        return {}
    name = (dataset.text("PatientName", "") or "").split("^")
    procedure = dataset.items("ProcedureCodeSequence")
    return {
        "accession": dataset.text("AccessionNumber", ""),
        "study_uid": dataset.text("StudyInstanceUID", ""),
        "patient_id": dataset.text("PatientID", ""),
        "patient_issuer": dataset.text("IssuerOfPatientID", ""),
        "patient_family": name[0] if name else "",
        "patient_given": name[1] if len(name) > 1 else "",
        "patient_birth_date": dataset.text("PatientBirthDate", ""),
        "study_date": dataset.text("StudyDate", ""),
        "study_code": procedure[0].text("CodeValue", "") if procedure else "",
        "study_description": dataset.text("StudyDescription", ""),
        "short_description": dataset.text("BodyPartExamined", ""),
        "image_id": dataset.text("StudyID", ""),
        "evaluation_type": dataset.text("Manufacturer", ""),
    }


def extract_fields(tree: SrNode, tpl: MappingTemplate, dataset: DataSet | None = None) -> Extraction:
    """First node (depth-first, document order) whose concept matches each entry.

    Missing concepts fall back to the entry default, otherwise the field is omitted
    with a warning.
    """
    result = Extraction(context=study_context(dataset))
    for entry in tpl.entries:
        node = tree.find(entry.concept)
        value = _render(node, entry, result.warnings) if node is not None else None
        if value is None:
            if entry.default is not None:
                value = entry.default
            else:
                if node is None:
                    result.warnings.append(f"{entry.field_id}: concept {entry.concept} not found")
                continue
        result.fields.append((entry.field_id, value))
    for warning in result.warnings:
        logger.warning(warning)
    return result


def finding_from_tree(tree: SrNode, dataset: DataSet | None = None) -> FindingReport:
    """Rebuild the FindingReport a tree was written from."""

    def code_of(concept: Code, default: str) -> str:
        node = tree.find(concept)
        return node.payload.value if node is not None and isinstance(node.payload, Code) else default

    certainty_node = tree.find(CERTAINTY)
    certainty = 0
    if certainty_node is not None and isinstance(certainty_node.payload, Measurement):
        certainty = int(certainty_node.payload.value)

    bbox = None
    bbox_node = tree.find(BBOX)
    if bbox_node is not None and isinstance(bbox_node.payload, Scoord):
        xs = [p[0] for p in bbox_node.payload.points]
        ys = [p[1] for p in bbox_node.payload.points]
        bbox = (int(min(xs)), int(min(ys)), int(max(xs)), int(max(ys)))

    context = study_context(dataset)
    evaluation_type = context.pop("evaluation_type", "") or "MONAI"
    return FindingReport.build(
        priority=code_of(PRIORITY, "LOW"),
        detection=code_of(DETECTION, "NEG"),
        certainty=certainty,
        bbox=bbox,
        evaluation_type=evaluation_type,
        **context,
    )
