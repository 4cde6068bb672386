import socket
import textwrap
from pathlib import Path

import pytest

import app_config
from lib.dicom.dataset import DataSet, DicomFile
from lib.dicom.tags import Vr
from lib.dicom.uids import CT_IMAGE_STORAGE, EXPLICIT_VR_LE

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def fresh_config(monkeypatch):
    """Forget whatever app_config loaded so a test can init its own file."""
    monkeypatch.setattr(app_config, "_config", None)
    monkeypatch.setattr(app_config, "_config_path", None)
    yield app_config


@pytest.fixture
def app_settings(fresh_config, tmp_path):
    path = tmp_path / "app_config.yaml"
    path.write_text(
        textwrap.dedent(
            """\
            directories:
              work: "./work"
              audit: "./work/audit"
              quarantine: "./work/quarantine"
              dead_letter: "./work/dead_letter"
              sinks: "./work/sinks"
            network:
              max_pdu: 16384
              idle_timeout_s: 5
            identity:
              uid_root: "1.2.826.0.1.3680043.8.498."
            logging:
              level: "DEBUG"
            gateway:
              admin_port: 0
              destinations: "pacs, viewer"
            """
        ),
        encoding="utf-8",
    )
    fresh_config.init_config(path)
    return path


@pytest.fixture
def free_port() -> int:
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


def ct_dataset(sop_instance: str = "1.2.3.4.5.6", **overrides) -> DataSet:
    values = dict(
        SOPClassUID=CT_IMAGE_STORAGE,
        SOPInstanceUID=sop_instance,
        StudyInstanceUID="1.2.3.4",
        SeriesInstanceUID="1.2.3.4.5",
        AccessionNumber="ACC001",
        Modality="CT",
        StudyDescription="CT CHEST",
        SeriesDescription="AXIAL",
        PatientName="DOE^JANE",
        PatientID="12345",
        SliceThickness=3.0,
        Rows=4,
        Columns=4,
    )
    values.update(overrides)
    ds = DataSet.of(**values)
    return ds.set("PixelData", Vr.OW, bytes(32))


def ct_file(sop_instance: str = "1.2.3.4.5.6", transfer_syntax: str = EXPLICIT_VR_LE, **overrides) -> DicomFile:
    return DicomFile.create(ct_dataset(sop_instance, **overrides), transfer_syntax)


@pytest.fixture
def ct():
    return ct_file()
