import logging
import math
from collections import defaultdict
from fractions import Fraction
from pathlib import Path

import numpy as np

from lib.dicom.codec import read_part10, write_part10
from lib.dicom.dataset import DataSet, DicomFile
from lib.dicom.errors import DicomError
from lib.dicom.tags import Vr
from lib.dicom.uids import EXPLICIT_VR_LE, SECONDARY_CAPTURE_STORAGE
from lib.errors import InvariantViolation
from lib.identity import Clock, UidSource, dicom_date, dicom_time
from lib.map.errors import (
    EmptyVolume,
    InconsistentDimensions,
    NoMatchingSeries,
    NonUniformSpacing,
    NoStudiesFound,
    WriteFailed,
)
from lib.map.model import STUDY_KEYWORDS, InferenceResult, Series, Study, Volume
from lib.rules.engine import matches
from lib.rules.expr import AttributeView
from lib.rules.model import ALWAYS, Expr
from lib.sr.builder import build_tid1500_sr
from lib.sr.model import FindingReport

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 400
DEFAULT_MIN_FRACTION = 0.01
SPACING_TOLERANCE = 0.10


def _warn(warnings: list[str] | None, message: str) -> None:
    logger.warning(message)
    if warnings is not None:
        warnings.append(message)


def _instance_key(ds: DataSet) -> tuple:
    try:
        number = ds.integer("InstanceNumber")
    except DicomError:
        number = None
    return (number is None, number or 0, ds.text("SOPInstanceUID", ""))


def _study_attributes(ds: DataSet) -> DataSet:
    kept = DataSet()
    for keyword in STUDY_KEYWORDS:
        element = ds.get(keyword)
        if element is not None:
            kept = kept.put(element)
    return kept


def op_study_loader(input_dir, warnings: list[str] | None = None) -> list[Study]:
    """Every readable Part 10 file under input_dir, grouped by study then series."""
    root = Path(input_dir)
    if not root.is_dir():
        raise NoStudiesFound(f"input directory {root} does not exist")

    grouped: dict[str, dict[str, list[DataSet]]] = defaultdict(lambda: defaultdict(list))
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        try:
            dataset = read_part10(path).dataset
        except (DicomError, InvariantViolation, OSError) as e:
            _warn(warnings, f"skipped {path.name}: {e}")
            continue
        study_uid = dataset.text("StudyInstanceUID", "")
        series_uid = dataset.text("SeriesInstanceUID", "")
        if not study_uid or not series_uid:
            _warn(warnings, f"skipped {path.name}: no study or series UID")
            continue
        grouped[study_uid][series_uid].append(dataset)

    if not grouped:
        raise NoStudiesFound(f"no DICOM studies found in {root}")

    studies = []
    for study_uid in sorted(grouped):
        series_list = []
        first = None
        for series_uid in sorted(grouped[study_uid]):
            instances = tuple(sorted(grouped[study_uid][series_uid], key=_instance_key))
            head = instances[0]
            if first is None:
                first = head
            try:
                thickness = head.decimal("SliceThickness")
            except DicomError:
                thickness = None
            series_list.append(
                Series(
                    series_uid=series_uid,
                    modality=head.text("Modality", ""),
                    description=head.text("SeriesDescription", ""),
                    slice_thickness=thickness,
                    instances=instances,
                )
            )
        studies.append(
            Study(
                study_uid=study_uid,
                accession=first.text("AccessionNumber", ""),
                attributes=_study_attributes(first),
                series=tuple(series_list),
            )
        )
    return studies


def op_series_selector(study: Study, criteria: Expr = ALWAYS) -> Series:
    """First series, in series UID order, whose series-level attributes satisfy criteria."""
    for series in sorted(study.series, key=lambda s: s.series_uid):
        if matches(criteria, AttributeView.of(series.attributes())):
            return series
    raise NoMatchingSeries(f"no series of study {study.study_uid} matches the criteria")


def _pixels(ds: DataSet, rows: int, columns: int) -> np.ndarray:
    element = ds.get("PixelData")
    if element is None:
        raise InconsistentDimensions(f"instance {ds.text('SOPInstanceUID', '?')} has no pixel data")
    signed = (ds.integer("PixelRepresentation") or 0) == 1
    bits = ds.integer("BitsAllocated") or 16
    if bits != 16:
        raise InconsistentDimensions(f"only 16-bit pixel data is supported, got {bits}")
    raw = np.frombuffer(element.raw, dtype="<i2" if signed else "<u2")
    if raw.size < rows * columns:
        raise InconsistentDimensions(f"pixel data holds {raw.size} values, {rows}x{columns} expected")
    plane = raw[: rows * columns].astype(np.float64).reshape(rows, columns)
    slope = ds.decimal("RescaleSlope")
    intercept = ds.decimal("RescaleIntercept")
    if slope is not None or intercept is not None:
        plane = plane * (slope if slope is not None else 1.0) + (intercept or 0.0)
    return np.clip(np.rint(plane), -32768, 32767).astype(np.int16)


def op_series_to_volume(series: Series) -> Volume:
    """Stack a series into (nz, ny, nx), ordered along the slice normal."""
    instances = series.instances
    if not instances:
        raise EmptyVolume(f"series {series.series_uid} has no instances")

    shapes = {(ds.integer("Rows"), ds.integer("Columns")) for ds in instances}
    if len(shapes) != 1 or None in next(iter(shapes)):
        raise InconsistentDimensions(f"series {series.series_uid} mixes image sizes {sorted(map(str, shapes))}")
    rows, columns = next(iter(shapes))

    positioned = all(ds.get("ImagePositionPatient") is not None for ds in instances)
    orientation = (instances[0].get("ImageOrientationPatient").decimals()
                   if instances[0].get("ImageOrientationPatient") is not None
                   else [1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    if len(orientation) != 6:
        raise InconsistentDimensions(f"ImageOrientationPatient has {len(orientation)} values")

    if positioned:
        normal = np.cross(np.array(orientation[:3]), np.array(orientation[3:]))
        keyed = [
            (float(np.dot(normal, ds.get("ImagePositionPatient").decimals()[:3])), ds.text("SOPInstanceUID", ""), ds)
            for ds in instances
        ]
        keyed.sort(key=lambda k: (k[0], k[1]))
        ordered = [k[2] for k in keyed]
        positions = [k[0] for k in keyed]
    else:
        ordered = sorted(instances, key=_instance_key)
        positions = []

    if len(positions) > 1:
        gaps = np.diff(positions)
        mean = float(gaps.mean())
        if mean <= 0 or np.any(np.abs(gaps - mean) > SPACING_TOLERANCE * mean):
            raise NonUniformSpacing(
                f"series {series.series_uid} slice gaps {[round(g, 4) for g in gaps.tolist()]} "
                f"deviate more than {SPACING_TOLERANCE:.0%} from {mean:.4g}"
            )
        dz = mean
    else:
        dz = series.slice_thickness or 1.0

    spacing = instances[0].get("PixelSpacing")
    dy, dx = (spacing.decimals() + [1.0, 1.0])[:2] if spacing is not None else (1.0, 1.0)

    voxels = np.stack([_pixels(ds, rows, columns) for ds in ordered])
    first_position = ordered[0].get("ImagePositionPatient")
    origin = tuple(first_position.decimals()[:3]) if first_position is not None else (0.0, 0.0, 0.0)
    return Volume(
        voxels=voxels,
        spacing=(dz, dy, dx),
        origin=origin,
        orientation=tuple(orientation),
        series_uid=series.series_uid,
    )


def op_stub_inference(
    v: Volume, threshold: int = DEFAULT_THRESHOLD, min_fraction: float = DEFAULT_MIN_FRACTION
) -> InferenceResult:
    """Deterministic stand-in for a model: bright voxels on the mid-axial slice."""
    nz, ny, nx = v.dims
    if nz == 0 or ny == 0 or nx == 0:
        raise EmptyVolume(f"volume of shape {v.dims} is empty")
    index = nz // 2
    mask = v.voxels[index] >= threshold
    count = int(mask.sum())

    r = Fraction(count, ny * nx)
    f = Fraction(str(min_fraction))
    if count == 0 or r < f:
        return InferenceResult("NEG", 0, None, float(r), index)

    certainty = 10 if f == 0 else min(10, math.floor(10 * r / f))
    ys, xs = np.nonzero(mask)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    return InferenceResult("POS", certainty, bbox, float(r), index)


def finding_report(
    result: InferenceResult, study: Study, evaluation_type: str = "MONAI"
) -> FindingReport:
    attrs = study.attributes
    name = (attrs.text("PatientName", "") or "").split("^")
    procedure = attrs.items("ProcedureCodeSequence")
    bbox = None
    if result.bbox is not None:
        x0, y0, x1, y1 = result.bbox
        # inclusive voxel indices -> pixel-edge rectangle
        bbox = (x0, y0, x1 + 1, y1 + 1)
    return FindingReport.build(
        priority="HIGH" if result.detection == "POS" else "LOW",
        detection=result.detection,
        certainty=result.certainty,
        bbox=bbox,
        evaluation_type=evaluation_type,
        accession=study.accession,
        study_uid=study.study_uid,
        patient_id=attrs.text("PatientID", ""),
        patient_issuer=attrs.text("IssuerOfPatientID", ""),
        patient_family=name[0],
        patient_given=name[1] if len(name) > 1 else "",
        patient_birth_date=attrs.text("PatientBirthDate", ""),
        study_date=attrs.text("StudyDate", ""),
        study_code=procedure[0].text("CodeValue", "") if procedure else "",
        study_description=attrs.text("StudyDescription", ""),
        short_description=attrs.text("BodyPartExamined", ""),
        image_id=attrs.text("StudyID", "") or "IMAGEID",
    )


def _write(output_dir, prefix: str, file: DicomFile) -> Path:
    out = Path(output_dir)
    path = out / f"{prefix}_{file.sop_instance_uid}.dcm"
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_part10(path, file)
    except OSError as e:
        raise WriteFailed(f"cannot write {path}: {e}") from e
    return path


def op_write_sr(
    result: InferenceResult,
    study: Study,
    output_dir,
    uids: UidSource | None = None,
    clock: Clock | None = None,
    evaluation_type: str = "MONAI",
) -> Path:
    report = finding_report(result, study, evaluation_type)
    return _write(output_dir, "SR", build_tid1500_sr(report, uids, clock))


def render_mid_slice(v: Volume, result: InferenceResult) -> np.ndarray:
    """8-bit min-max window of the inference slice with the box drawn as a 1-pixel frame."""
    plane = v.voxels[result.slice_index].astype(np.float64)
    lo, hi = float(plane.min()), float(plane.max())
    scaled = np.zeros_like(plane) if hi == lo else (plane - lo) * (255.0 / (hi - lo))
    image = np.rint(scaled).astype(np.uint8)
    if result.bbox is not None:
        x0, y0, x1, y1 = result.bbox
        image[y0, x0 : x1 + 1] = 255
        image[y1, x0 : x1 + 1] = 255
        image[y0 : y1 + 1, x0] = 255
        image[y0 : y1 + 1, x1] = 255
    return image


def op_write_sc(
    v: Volume,
    result: InferenceResult,
    study: Study,
    output_dir,
    uids: UidSource | None = None,
    clock: Clock | None = None,
) -> Path:
    uids = uids or UidSource()
    clock = clock or Clock()
    now = clock.now()
    image = render_mid_slice(v, result)
    ny, nx = image.shape

    dataset = study.attributes
    for keyword, vr, value in (
        ("SOPClassUID", None, SECONDARY_CAPTURE_STORAGE),
        ("SOPInstanceUID", None, uids.next("sc-instance")),
        ("SeriesInstanceUID", None, uids.next("sc-series")),
        ("Modality", None, "OT"),
        ("ConversionType", None, "WSD"),
        ("ContentDate", None, dicom_date(now)),
        ("ContentTime", None, dicom_time(now)),
        ("SeriesNumber", None, "901"),
        ("InstanceNumber", None, "1"),
        ("SeriesDescription", None, f"AI {result.detection} certainty {result.certainty}/10"),
        ("SamplesPerPixel", None, 1),
        ("PhotometricInterpretation", None, "MONOCHROME2"),
        ("Rows", None, ny),
        ("Columns", None, nx),
        ("BitsAllocated", None, 8),
        ("BitsStored", None, 8),
        ("HighBit", None, 7),
        ("PixelRepresentation", None, 0),
        ("PixelData", Vr.OB, image.tobytes()),
    ):
        dataset = dataset.set(keyword, vr, value)
    return _write(output_dir, "SC", DicomFile.create(dataset, EXPLICIT_VR_LE))
