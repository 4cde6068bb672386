from dataclasses import dataclass, field
from enum import StrEnum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from lib.errors import InvariantViolation

SCHEME = "99FLOWGATE"


@dataclass(frozen=True)
class Code:
    value: str
    scheme: str
    meaning: str = ""

    def __post_init__(self):
        if not self.value or not self.scheme:
            raise InvariantViolation(f"code needs a value and a scheme, got {self.scheme!r}:{self.value!r}")

    def same_as(self, other: "Code | None") -> bool:
        """Codes are identified by (scheme, value); the meaning is display text."""
        return other is not None and (self.scheme, self.value) == (other.scheme, other.value)

    def __str__(self) -> str:
        return f"{self.scheme}:{self.value}"


# Concept names used by the report tree.
IMAGING_MEASUREMENT_REPORT = Code("126000", "DCM", "Imaging Measurement Report")
PRIORITY = Code("PRIORITY", SCHEME, "Priority")
DETECTION = Code("DETECTION", SCHEME, "Detection")
CERTAINTY = Code("CERTAINTY", SCHEME, "Certainty")
BBOX = Code("BBOX", SCHEME, "Bounding box")
NO_UNITS = Code("1", "UCUM", "no units")

PRIORITY_VALUES = {
    "HIGH": Code("HIGH", SCHEME, "High"),
    "MEDIUM": Code("MEDIUM", SCHEME, "Medium"),
    "LOW": Code("LOW", SCHEME, "Low"),
}
DETECTION_VALUES = {
    "POS": Code("POS", SCHEME, "Positive"),
    "NEG": Code("NEG", SCHEME, "Negative"),
}


class ValueType(StrEnum):
    CONTAINER = "CONTAINER"
    CODE = "CODE"
    TEXT = "TEXT"
    NUM = "NUM"
    SCOORD = "SCOORD"


class Relationship(StrEnum):
    CONTAINS = "CONTAINS"
    HAS_PROPERTIES = "HAS PROPERTIES"
    INFERRED_FROM = "INFERRED FROM"


@dataclass(frozen=True)
class Measurement:
    value: float
    unit: Code


@dataclass(frozen=True)
class Scoord:
    graphic_type: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.graphic_type == "POLYLINE" and len(self.points) < 4:
            raise InvariantViolation(f"POLYLINE needs at least 4 points, got {len(self.points)}")


Payload = Code | str | Measurement | Scoord | None


@dataclass(frozen=True)
class SrNode:
    value_type: str
    concept: Code | None
    payload: Payload = None
    relationship: str | None = None
    children: tuple["SrNode", ...] = field(default=())
    opaque: bool = False

    def walk(self):
        """Depth-first, document order, the node itself first."""
        yield self
        for child in self.children:
            yield from child.walk()

    def find(self, concept: Code) -> "SrNode | None":
        return next((n for n in self.walk() if not n.opaque and concept.same_as(n.concept)), None)


def closed_box(x0: float, y0: float, x1: float, y1: float) -> tuple[tuple[float, float], ...]:
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))


class FindingReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    priority: Literal["HIGH", "MEDIUM", "LOW"] = Field(description="Worklist priority derived from the finding")
    detection: Literal["POS", "NEG"] = Field(description="Whether the AI detected the finding")
    certainty: int = Field(ge=0, le=10, description="Certainty out of 10")
    bbox: Optional[tuple[int, int, int, int]] = Field(default=None, description="x0, y0, x1, y1 in pixels")
    evaluation_type: str = Field(default="MONAI", description="Which AI produced the result")
    accession: str = Field(default="", description="Accession number of the source study")
    study_uid: str = Field(default="", description="StudyInstanceUID of the source study")
    patient_id: str = ""
    patient_issuer: str = ""
    patient_family: str = ""
    patient_given: str = ""
    patient_birth_date: str = ""
    study_date: str = ""
    study_code: str = ""
    study_description: str = ""
    short_description: str = ""
    image_id: str = ""

    @model_validator(mode="after")
    def _check(self) -> "FindingReport":
        if self.detection == "NEG" and self.bbox is not None:
            raise ValueError("a negative finding carries no bounding box")
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"bounding box {self.bbox} must satisfy x0<x1 and y0<y1")
        return self

    @classmethod
    def build(cls, **values) -> "FindingReport":
        """Construct, turning validation problems into InvariantViolation."""
        try:
            return cls(**values)
        except ValidationError as e:
            raise InvariantViolation(f"invalid finding report: {e}") from e
