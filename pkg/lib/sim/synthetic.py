"""Synthetic CT/MR studies: zero-valued slices with an optional bright block.

All UIDs derive from the seed, so one seed always produces the same bytes.
"""

from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lib.dicom.codec import write_part10
from lib.dicom.dataset import DataSet, DicomFile, code_item
from lib.dicom.tags import Vr
from lib.dicom.uids import CT_IMAGE_STORAGE, EXPLICIT_VR_LE, MR_IMAGE_STORAGE
from lib.errors import InvariantViolation
from lib.identity import UidSource
from lib.sr.model import SCHEME

_STORAGE = {"CT": CT_IMAGE_STORAGE, "MR": MR_IMAGE_STORAGE}


class BrightBlock(BaseModel):
    model_config = ConfigDict(frozen=True)

    z: Optional[int] = Field(default=None, ge=0, description="First slice; every slice when unset")
    y: int = Field(ge=0, description="Top row")
    x: int = Field(ge=0, description="Left column")
    depth: int = Field(default=1, ge=1)
    height: int = Field(default=1, ge=1)
    width: int = Field(default=1, ge=1)
    value: int = Field(default=1000, ge=-32768, le=32767)


class SeriesSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    description: str = "AXIAL"
    slices: int = Field(default=3, ge=1)
    rows: int = Field(default=10, ge=1)
    cols: int = Field(default=10, ge=1)
    slice_thickness: float = Field(default=3.0, gt=0)
    bright: Optional[BrightBlock] = None


class SyntheticStudySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 42
    modality: str = "CT"
    study_description: str = "CT CHEST"
    study_code: str = "CT1"
    body_part: str = "CHEST"
    accession: str = "ACC001"
    study_id: str = Field(default="IMAGEID", description="StudyID, carried into OBR-4 as the image id")
    study_date: str = "20240101"
    patient_id: str = "12345"
    patient_issuer: str = "MC"
    patient_name: str = "DOE^JANE"
    patient_birth_date: str = "19700101"
    patient_sex: str = "F"
    series: tuple[SeriesSpec, ...] = (SeriesSpec(),)

    @classmethod
    def build(cls, **values) -> "SyntheticStudySpec":
        try:
            return cls(**values)
        except ValidationError as e:
            raise InvariantViolation(f"invalid synthetic study: {e}") from e


def series_pixels(series: SeriesSpec) -> np.ndarray:
    """(slices, rows, cols) int16 array, zero outside the bright block."""
    voxels = np.zeros((series.slices, series.rows, series.cols), dtype=np.int16)
    block = series.bright
    if block is None:
        return voxels
    z0, depth = (0, series.slices) if block.z is None else (block.z, block.depth)
    if z0 + depth > series.slices or block.y + block.height > series.rows or block.x + block.width > series.cols:
        raise InvariantViolation(
            f"bright block {block.model_dump()} does not fit {series.slices}x{series.rows}x{series.cols}"
        )
    voxels[z0 : z0 + depth, block.y : block.y + block.height, block.x : block.x + block.width] = block.value
    return voxels


def gen_synthetic_study(spec: SyntheticStudySpec, out_dir) -> list[Path]:
    storage = _STORAGE.get(spec.modality.upper())
    if storage is None:
        raise InvariantViolation(f"synthetic studies are CT or MR, not {spec.modality}")
    uids = UidSource(spec.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    study = DataSet.of(
        SpecificCharacterSet="ISO_IR 192",
        StudyDate=spec.study_date,
        StudyTime="120000",
        AccessionNumber=spec.accession,
        Modality=spec.modality.upper(),
        StudyDescription=spec.study_description,
        ProcedureCodeSequence=[code_item(spec.study_code, SCHEME, spec.study_description)],
        PatientName=spec.patient_name,
        PatientID=spec.patient_id,
        IssuerOfPatientID=spec.patient_issuer,
        PatientBirthDate=spec.patient_birth_date,
        PatientSex=spec.patient_sex,
        BodyPartExamined=spec.body_part,
        StudyInstanceUID=uids.derive("study"),
        StudyID=spec.study_id,
        FrameOfReferenceUID=uids.derive("frame"),
    )

    written = []
    for s, series in enumerate(spec.series):
        pixels = series_pixels(series)
        series_uid = uids.derive(f"series-{s}")
        for k in range(series.slices):
            dataset = study
            for keyword, vr, value in (
                ("SOPClassUID", None, storage),
                ("SOPInstanceUID", None, uids.derive(f"instance-{s}-{k}")),
                ("SeriesInstanceUID", None, series_uid),
                ("SeriesDescription", None, series.description),
                ("SeriesNumber", None, str(s + 1)),
                ("InstanceNumber", None, str(k + 1)),
                ("SliceThickness", None, series.slice_thickness),
                ("ImagePositionPatient", None, [0.0, 0.0, k * series.slice_thickness]),
                ("ImageOrientationPatient", None, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                ("PixelSpacing", None, [1.0, 1.0]),
                ("SamplesPerPixel", None, 1),
                ("PhotometricInterpretation", None, "MONOCHROME2"),
                ("Rows", None, series.rows),
                ("Columns", None, series.cols),
                ("BitsAllocated", None, 16),
                ("BitsStored", None, 16),
                ("HighBit", None, 15),
                ("PixelRepresentation", None, 1),
                ("PixelData", Vr.OW, pixels[k].astype("<i2").tobytes()),
            ):
                dataset = dataset.set(keyword, vr, value)
            path = out_dir / f"s{s + 1:02d}_i{k + 1:04d}.dcm"
            write_part10(path, DicomFile.create(dataset, EXPLICIT_VR_LE))
            written.append(path)
    return written
