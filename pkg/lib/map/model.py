from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from lib.dicom.dataset import DataSet
from lib.errors import InvariantViolation

# Patient and study level attributes a writer copies from the source study.
STUDY_KEYWORDS = (
    "PatientName",
    "PatientID",
    "IssuerOfPatientID",
    "PatientBirthDate",
    "PatientSex",
    "StudyInstanceUID",
    "StudyDate",
    "StudyTime",
    "StudyID",
    "StudyDescription",
    "AccessionNumber",
    "ProcedureCodeSequence",
    "BodyPartExamined",
)


@dataclass(frozen=True)
class Series:
    series_uid: str
    modality: str
    description: str
    slice_thickness: float | None
    instances: tuple[DataSet, ...]

    def attributes(self) -> dict[str, str]:
        """Series-level values a selector expression can test."""
        values = {"modality": self.modality, "series_description": self.description}
        if self.slice_thickness is not None:
            values["slice_thickness"] = repr(self.slice_thickness)
        return values


@dataclass(frozen=True)
class Study:
    study_uid: str
    accession: str
    attributes: DataSet
    series: tuple[Series, ...] = ()

    @property
    def instance_count(self) -> int:
        return sum(len(s.instances) for s in self.series)


@dataclass(frozen=True)
class Volume:
    voxels: np.ndarray  # (nz, ny, nx) int16
    spacing: tuple[float, float, float]  # (dz, dy, dx) mm
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    series_uid: str = ""

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise InvariantViolation(f"volume must be 3-D, got shape {self.voxels.shape}")
        if self.voxels.dtype != np.int16:
            raise InvariantViolation(f"volume voxels must be int16, got {self.voxels.dtype}")

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.voxels.shape
        return nz, ny, nx


@dataclass(frozen=True)
class InferenceResult:
    detection: Literal["POS", "NEG"]
    certainty: int
    bbox: tuple[int, int, int, int] | None = None  # inclusive voxel indices x0, y0, x1, y1
    fraction: float = 0.0
    slice_index: int = 0

    def __post_init__(self):
        if not 0 <= self.certainty <= 10:
            raise InvariantViolation(f"certainty {self.certainty} outside 0-10")
        if self.detection == "NEG" and (self.certainty != 0 or self.bbox is not None):
            raise InvariantViolation("a negative result has certainty 0 and no bounding box")


@dataclass
class OperatorRecord:
    name: str
    kind: str
    status: str = "pending"
    seconds: float = 0.0
    outputs: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    error: str = ""


@dataclass
class RunManifest:
    operators: list[OperatorRecord] = field(default_factory=list)
    failed: bool = False
    failure: Exception | None = None

    def record(self, name: str) -> OperatorRecord:
        return next(r for r in self.operators if r.name == name)

    @property
    def outputs(self) -> list[str]:
        return [path for r in self.operators for path in r.outputs]

    def render(self) -> str:
        """Plain key = value report, one block per operator."""
        lines = [f"status = {'failed' if self.failed else 'ok'}", f"operators = {len(self.operators)}"]
        for r in self.operators:
            lines.append("")
            lines.append(f"[operator {r.name}]")
            lines.append(f"kind = {r.kind}")
            lines.append(f"status = {r.status}")
            lines.append(f"seconds = {r.seconds:.3f}")
            lines.extend(f"output = {path}" for path in r.outputs)
            lines.extend(f"warning = {w}" for w in r.warnings)
            if r.error:
                lines.append(f"error = {r.error}")
        return "\n".join(lines) + "\n"
