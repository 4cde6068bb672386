import struct
from io import BytesIO

import pydicom
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydicom.dataset import Dataset, FileMetaDataset
from pydicom.uid import ExplicitVRLittleEndian

from lib.dicom.codec import (
    parse_dataset,
    parse_part10,
    read_part10,
    serialize_dataset,
    serialize_part10,
    write_part10,
)
from lib.dicom.dataset import DataElement, DataSet, DicomFile, build_file_meta, element_delete, element_get, element_set
from lib.dicom.errors import MissingMagic, TruncatedElement, TypeMismatch, UnsupportedTransferSyntax
from lib.dicom.tags import Tag, Vr, dict_vr
from lib.dicom.uids import CT_IMAGE_STORAGE, EXPLICIT_VR_LE, IMPLICIT_VR_LE
from tests.conftest import ct_dataset, ct_file

SYNTAXES = [EXPLICIT_VR_LE, IMPLICIT_VR_LE]
PRIVATE = Tag(0x0009, 0x1010)

_cs = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_ ", max_size=16)
_lo = st.text(alphabet=st.characters(min_codepoint=0x20, max_codepoint=0x7E, exclude_characters="\\"), max_size=40)
_uid = st.lists(st.integers(0, 99999), min_size=2, max_size=8).map(lambda parts: ".".join(map(str, parts)))


@st.composite
def code_items(draw):
    return DataSet.of(CodeValue=draw(_cs), CodingSchemeDesignator="DCM", CodeMeaning=draw(_lo))


@st.composite
def datasets(draw):
    elements = []
    if draw(st.booleans()):
        elements.append(DataElement.from_value("Modality", None, draw(_cs)))
    if draw(st.booleans()):
        elements.append(DataElement.from_value("StudyDescription", None, draw(_lo)))
    if draw(st.booleans()):
        elements.append(DataElement.from_value("StudyInstanceUID", None, draw(_uid)))
    if draw(st.booleans()):
        value = draw(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False))
        elements.append(DataElement.from_value("SliceThickness", None, value))
    if draw(st.booleans()):
        elements.append(DataElement.from_value("Rows", None, draw(st.integers(0, 65535))))
    if draw(st.booleans()):
        elements.append(DataElement.from_value("PixelData", Vr.OW, draw(st.binary(max_size=256))))
    if draw(st.booleans()):
        elements.append(DataElement.from_value(PRIVATE, Vr.UN, draw(st.binary(max_size=32))))
    if draw(st.booleans()):
        items = draw(st.lists(code_items(), max_size=3))
        elements.append(DataElement.from_value("ProcedureCodeSequence", None, items))
    return DataSet(elements)


@settings(max_examples=500, deadline=None)
@given(ds=datasets(), transfer_syntax=st.sampled_from(SYNTAXES))
def test_dataset_round_trip(ds, transfer_syntax):
    encoded = serialize_dataset(ds, transfer_syntax)
    decoded = parse_dataset(encoded, transfer_syntax)
    assert decoded == ds
    assert serialize_dataset(decoded, transfer_syntax) == encoded
    assert decoded.tags() == sorted(decoded.tags())


@settings(max_examples=100, deadline=None)
@given(ds=datasets())
def test_every_value_is_even_length(ds):
    for element in parse_dataset(serialize_dataset(ds, EXPLICIT_VR_LE), EXPLICIT_VR_LE):
        assert len(element.raw) % 2 == 0


@pytest.mark.parametrize("transfer_syntax", SYNTAXES)
def test_part10_round_trip(transfer_syntax):
    f = ct_file(transfer_syntax=transfer_syntax)
    data = serialize_part10(f)
    assert data[:128] == bytes(128)
    assert data[128:132] == b"DICM"
    assert parse_part10(data) == f
    assert serialize_part10(parse_part10(data)) == data


def test_serialization_is_deterministic(ct):
    assert serialize_part10(ct) == serialize_part10(ct)


def test_group_length_counts_the_meta_body(ct):
    data = serialize_part10(ct)
    group, element, vr, length, value = struct.unpack_from("<HH2sHI", data, 132)
    assert (group, element, vr, length) == (0x0002, 0x0000, b"UL", 4)
    meta_end = 132 + 12 + value
    assert struct.unpack_from("<H", data, meta_end)[0] != 0x0002


def test_empty_dataset_writes_meta_only():
    meta = build_file_meta(CT_IMAGE_STORAGE, "1.2.3", EXPLICIT_VR_LE)
    f = DicomFile(meta, DataSet(), EXPLICIT_VR_LE)
    data = serialize_part10(f)
    assert parse_part10(data).dataset == DataSet()
    assert len(data) == 132 + 12 + len(serialize_dataset(meta, EXPLICIT_VR_LE))


def test_missing_magic(ct):
    data = bytearray(serialize_part10(ct))
    data[128:132] = bytes(4)
    with pytest.raises(MissingMagic):
        parse_part10(bytes(data))


def test_unsupported_transfer_syntax():
    meta = build_file_meta(CT_IMAGE_STORAGE, "1.2.3", "1.2.840.10008.1.2.4.70")
    data = bytes(128) + b"DICM" + serialize_dataset(meta, EXPLICIT_VR_LE)
    with pytest.raises(UnsupportedTransferSyntax):
        parse_part10(data)


def test_truncated_element():
    data = serialize_dataset(DataSet.of(StudyDescription="CT CHEST"), EXPLICIT_VR_LE)
    with pytest.raises(TruncatedElement):
        parse_dataset(data[:-3], EXPLICIT_VR_LE)


def test_hand_encoded_modality():
    data = struct.pack("<HH2sH", 0x0008, 0x0060, b"CS", 2) + b"CT"
    ds = parse_dataset(data, EXPLICIT_VR_LE)
    assert element_get(ds, "Modality") == "CT"
    assert parse_dataset(b"", EXPLICIT_VR_LE) == DataSet()


def test_private_tag_in_implicit_is_un():
    data = struct.pack("<HHI", 0x0009, 0x0010, 4) + b"ACME"
    ds = parse_dataset(data, IMPLICIT_VR_LE)
    assert ds[Tag(0x0009, 0x0010)].vr == Vr.UN
    assert ds[Tag(0x0009, 0x0010)].raw == b"ACME"


def test_unknown_explicit_vr_becomes_un():
    data = struct.pack("<HH2sH", 0x0009, 0x1001, b"ZZ", 4) + b"ACME"
    ds = parse_dataset(data, EXPLICIT_VR_LE)

    assert ds[Tag(0x0009, 0x1001)].vr == Vr.UN
    assert ds[Tag(0x0009, 0x1001)].raw == b"ACME"
    assert serialize_dataset(ds, EXPLICIT_VR_LE) == struct.pack("<HH2s2xI", 0x0009, 0x1001, b"UN", 4) + b"ACME"


def test_duplicate_tag_keeps_last():
    one = struct.pack("<HH2sH", 0x0008, 0x0060, b"CS", 2)
    ds = parse_dataset(one + b"CT" + one + b"MR", EXPLICIT_VR_LE)
    assert ds.text("Modality") == "MR"
    assert len(ds) == 1


def test_undefined_length_sequence_reserialized_with_lengths():
    item = serialize_dataset(DataSet.of(CodeValue="CT1"), EXPLICIT_VR_LE)
    data = (
        struct.pack("<HH2s2xI", 0x0008, 0x1032, b"SQ", 0xFFFFFFFF)
        + struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF)
        + item
        + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
        + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    )
    ds = parse_dataset(data, EXPLICIT_VR_LE)
    assert ds.items("ProcedureCodeSequence")[0].text("CodeValue") == "CT1"
    canonical = serialize_dataset(ds, EXPLICIT_VR_LE)
    assert struct.unpack_from("<I", canonical, 8)[0] == 8 + len(item)


def test_odd_text_is_space_padded():
    raw = serialize_dataset(DataSet.of(CodeValue="CT1"), EXPLICIT_VR_LE)
    assert struct.unpack_from("<H", raw, 6)[0] == 4
    assert raw.endswith(b"CT1 ")


def test_uid_is_null_padded():
    raw = serialize_dataset(DataSet.of(SOPInstanceUID="1.2.3"), EXPLICIT_VR_LE)
    assert raw.endswith(b"1.2.3\x00")


def test_element_accessors():
    ds = DataSet.of(SliceThickness="2.5")
    assert element_get(ds, "SliceThickness", "decimal") == 2.5
    assert element_get(ds, "Modality") is None
    with pytest.raises(TypeMismatch):
        element_get(DataSet.of(SliceThickness="abc"), "SliceThickness", "decimal")


def test_element_set_and_delete():
    ds = ct_dataset()
    renamed = element_set(ds, Tag(0x0008, 0x0080), Vr.LO, "CAII")
    assert element_get(renamed, Tag(0x0008, 0x0080)) == "CAII"

    swapped = element_set(ds, "Modality", None, "MR")
    assert [e.tag for e in swapped].count(Tag(0x0008, 0x0060)) == 1
    assert swapped.text("Modality") == "MR"

    assert element_delete(renamed, Tag(0x0008, 0x0080)) == ds
    assert element_delete(ds, Tag(0x0008, 0x0080)) is ds


def test_delete_changes_only_that_span():
    ds = ct_dataset().set(Tag(0x0009, 0x0010), Vr.LO, "ACME")
    before = serialize_dataset(ds, EXPLICIT_VR_LE)
    after = serialize_dataset(element_delete(ds, Tag(0x0009, 0x0010)), EXPLICIT_VR_LE)
    span = serialize_dataset(DataSet([ds[Tag(0x0009, 0x0010)]]), EXPLICIT_VR_LE)
    start = before.index(span)
    assert before[:start] + before[start + len(span):] == after
    assert element_get(element_delete(ds, Tag(0x0009, 0x0010)), "Modality") == "CT"


def test_dictionary():
    assert dict_vr(Tag(0x0008, 0x0060)) == Vr.CS
    assert dict_vr(Tag(0x0020, 0x000D)) == Vr.UI
    assert dict_vr(Tag(0x0009, 0x0001)) == Vr.UN


def test_tag_ordering_and_text():
    assert Tag(0x0008, 0x0060) < Tag(0x0010, 0x0010) < Tag(0x0010, 0x0020)
    assert Tag.parse("(0008,0060)") == Tag(0x0008, 0x0060)
    assert str(Tag(0x7FE0, 0x0010)) == "(7FE0,0010)"
    assert Tag(0x0009, 0x0010).is_private
    assert Tag(0x0002, 0x0010).is_file_meta


def test_pydicom_reads_what_we_write(tmp_path, ct):
    path = tmp_path / "ct.dcm"
    write_part10(path, ct)
    theirs = pydicom.dcmread(path)
    assert theirs.Modality == "CT"
    assert theirs.SOPInstanceUID == ct.sop_instance_uid
    assert theirs.file_meta.TransferSyntaxUID == EXPLICIT_VR_LE
    assert float(theirs.SliceThickness) == 3.0
    assert theirs.Rows == 4
    assert theirs.PixelData == bytes(32)


def test_we_read_what_pydicom_writes():
    theirs = Dataset()
    theirs.SOPClassUID = CT_IMAGE_STORAGE
    theirs.SOPInstanceUID = "1.2.3.99"
    theirs.Modality = "MR"
    theirs.StudyDescription = "MR BRAIN"
    theirs.Rows = 2
    theirs.file_meta = FileMetaDataset()
    theirs.file_meta.MediaStorageSOPClassUID = CT_IMAGE_STORAGE
    theirs.file_meta.MediaStorageSOPInstanceUID = "1.2.3.99"
    theirs.file_meta.TransferSyntaxUID = ExplicitVRLittleEndian
    buffer = BytesIO()
    theirs.save_as(buffer, enforce_file_format=True)

    ours = parse_part10(buffer.getvalue())
    assert ours.transfer_syntax == EXPLICIT_VR_LE
    assert ours.sop_instance_uid == "1.2.3.99"
    assert ours.dataset.text("Modality") == "MR"
    assert ours.dataset.text("StudyDescription") == "MR BRAIN"
    assert ours.dataset.integer("Rows") == 2


def test_read_part10_from_disk(tmp_path, ct):
    path = tmp_path / "x.dcm"
    write_part10(path, ct)
    assert read_part10(path) == ct
