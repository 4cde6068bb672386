"""End-to-end scenarios: sinks, gateway and AI receiver on one machine.

    [scenario chest]
    variant = bright
    seed = 42
    slices = 5
    ai_timeout_s = 3
"""

import logging
import shutil
import socket
import time
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lib.dicom.codec import read_part10
from lib.dicom.uids import SR_STORAGE_CLASSES
from lib.errors import FlowgateError
from lib.gateway.audit import audit_query
from lib.gateway.config import read_gateway_config
from lib.gateway.lifecycle import StudyState
from lib.gateway.service import Gateway
from lib.hl7.orm import message_type
from lib.map.runner import RunSettings
from lib.sections import ConfigSyntaxError, parse_sections
from lib.sim.ai_receiver import AiReceiver
from lib.sim.errors import ScenarioInvalid
from lib.sim.modality import cli_modality_send
from lib.sim.sinks import AckMode, MllpSink, StoreSink, read_manifest
from lib.sim.synthetic import BrightBlock, SeriesSpec, SyntheticStudySpec, gen_synthetic_study

logger = logging.getLogger(__name__)

GATEWAY_AE = "FLOWGATE"
MODALITY_AE = "MODALITY1"
AI_AE = "AI_RECEIVER"


class Variant(StrEnum):
    BRIGHT = "bright"
    ZERO = "zero"
    AI_DOWN = "ai_down"


_EXPECTED_STATE = {
    Variant.BRIGHT: StudyState.HL7_SENT,
    Variant.ZERO: StudyState.RESULTS_DISTRIBUTED,
    Variant.AI_DOWN: StudyState.FAILED,
}

_EXPECTED_AUDIT = {
    Variant.BRIGHT: {"received", "decision", "forwarded", "ai_result", "hl7_sent"},
    Variant.ZERO: {"received", "decision", "forwarded", "ai_result"},
    Variant.AI_DOWN: {"received", "decision", "forwarded", "error"},
}


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    variant: Variant = Variant.BRIGHT
    seed: int = 42
    slices: int = Field(default=5, ge=1)
    rows: int = Field(default=10, ge=4)
    cols: int = Field(default=10, ge=6)
    slice_thickness: float = Field(default=3.0, gt=0)
    ai_timeout_s: float = Field(default=10.0, gt=0)
    study_idle_s: float = Field(default=1.0, gt=0)
    ai_idle_s: float = Field(default=1.0, gt=0, description="AI receiver quiet period before running the graph")
    timeout_s: float = Field(default=30.0, gt=0)
    strict_layout: bool = False

    def study_spec(self) -> SyntheticStudySpec:
        bright = BrightBlock(y=2, x=5, height=2) if self.variant == Variant.BRIGHT else None
        series = SeriesSpec(
            slices=self.slices, rows=self.rows, cols=self.cols, slice_thickness=self.slice_thickness, bright=bright
        )
        return SyntheticStudySpec(seed=self.seed, series=(series,))


def parse_scenarios(text: str) -> list[ScenarioConfig]:
    scenarios = []
    for section in parse_sections(text):
        if section.kind != "scenario":
            raise section.error(f"unexpected [{section.kind}] in a scenario file")
        try:
            scenarios.append(ScenarioConfig(name=section.name or "scenario", **section.values()))
        except ValidationError as e:
            first = e.errors()[0]
            raise ScenarioInvalid(f"line {section.line}: {'.'.join(map(str, first['loc']))}: {first['msg']}") from e
    if not scenarios:
        raise ScenarioInvalid("no [scenario] sections")
    return scenarios


def read_scenarios(path) -> list[ScenarioConfig]:
    try:
        return parse_scenarios(Path(path).read_text(encoding="utf-8"))
    except ConfigSyntaxError as e:
        raise ScenarioInvalid(f"{path}: {e}") from e


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    name: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def render(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}" + (f": {c.detail}" if c.detail else "") for c in self.checks]
        lines.append(f"scenario {self.name}: {'pass' if self.passed else 'fail'} ({self.seconds:.1f}s)")
        return "\n".join(lines) + "\n"


def _closed_port() -> int:
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


def _gateway_text(cfg: ScenarioConfig, pacs: int, viewer: int, ai: int, mllp: int) -> str:
    return f"""\
[gateway]
listen_port = 0
admin_port = 0
ae_title = {GATEWAY_AE}
viewer_dests = viewer
ai_dests = ai_receiver
hl7_host = 127.0.0.1
hl7_port = {mllp}
hl7_timeout_s = 5
hl7_strict_layout = {str(cfg.strict_layout).lower()}
retry_max = 3
retry_backoff_ms = 200
ai_timeout_s = {cfg.ai_timeout_s}
study_idle_s = {cfg.study_idle_s}
quarantine_dir = quarantine
dead_letter_dir = dead_letter
audit_log = audit/audit.ndjson
seed = {cfg.seed}

[source modality1]
calling_ae = {MODALITY_AE}

[source ai]
calling_ae = {AI_AE}
kind = ai

[destination pacs]
host = 127.0.0.1
port = {pacs}
called_ae = PACS

[destination viewer]
host = 127.0.0.1
port = {viewer}
called_ae = VIEWER

[destination ai_receiver]
host = 127.0.0.1
port = {ai}
called_ae = {AI_AE}

[rule ct_studies]
when = modality == "CT"
route = pacs, ai_receiver : parallel
"""


def _wait_for_state(gateway: Gateway, study_uid: str, state: StudyState, timeout: float) -> StudyState | None:
    deadline = time.monotonic() + timeout
    record = None
    while time.monotonic() < deadline:
        record = gateway.record(study_uid)
        if record is not None and record.state == state:
            return record.state
        time.sleep(0.1)
    return record.state if record is not None else None


def run_scenario_e2e(cfg: ScenarioConfig, work_dir) -> ScenarioReport:
    work = Path(work_dir) / cfg.name
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True, exist_ok=True)
    report = ScenarioReport(cfg.name)
    started = time.perf_counter()
    services = []
    try:
        files = gen_synthetic_study(cfg.study_spec(), work / "study")
        sent = [read_part10(path).dataset for path in files]
        study_uid = sent[0].text("StudyInstanceUID", "")
        sops = {ds.text("SOPInstanceUID") for ds in sent}
        pacs = StoreSink(0, "PACS", work / "pacs").start()
        viewer = StoreSink(0, "VIEWER", work / "viewer").start()
        mllp = MllpSink(0, AckMode.AA, work / "interface").start()
        services += [pacs, viewer, mllp]

        receiver = None
        if cfg.variant != Variant.AI_DOWN:
            receiver = AiReceiver(
                0, AI_AE, work / "ai", gateway_ae=GATEWAY_AE, calling_ae=AI_AE,
                settings=RunSettings(seed=cfg.seed), idle_s=cfg.ai_idle_s,
            ).start()
            services.append(receiver)
        ai_port = receiver.port if receiver is not None else _closed_port()

        config_path = work / "gateway.conf"
        config_path.write_text(_gateway_text(cfg, pacs.port, viewer.port, ai_port, mllp.port), encoding="utf-8")
        gateway = Gateway(*read_gateway_config(config_path)).start()
        services.append(gateway)
        if receiver is not None:
            receiver.gateway = ("127.0.0.1", gateway.port)

        summary = cli_modality_send(work / "study", ("127.0.0.1", gateway.port), MODALITY_AE, GATEWAY_AE)
        report.check("modality send", summary.success == len(files), str(summary))

        expected = _EXPECTED_STATE[cfg.variant]
        reached = _wait_for_state(gateway, study_uid, expected, cfg.timeout_s)
        gateway.drain(timeout=10.0)
        report.check("study state", reached == expected, f"{reached} (expected {expected})")

        stored = set(read_manifest(work / "pacs", latest_only=True)["sop"].to_list())
        report.check("pacs received all instances", sops <= stored, f"{len(sops & stored)}/{len(sops)}")

        if cfg.variant != Variant.AI_DOWN:
            classes = set(read_manifest(work / "viewer")["sop_class"].to_list())
            report.check("viewer received the SR", bool(classes & SR_STORAGE_CLASSES), ", ".join(sorted(classes)))

        messages = mllp.messages()
        if cfg.variant == Variant.BRIGHT:
            rows = {seg.text(3): seg.text(5) for msg in messages for seg in msg.all("OBX")}
            report.check(
                "one ORM with detection POS",
                len(messages) == 1 and message_type(messages[0]) == "ORM^O01" and rows.get("AI_DETECTION_MONAI") == "POS",
                f"{len(messages)} message(s), OBX {rows}",
            )
        else:
            report.check("no HL7 emitted", not messages, f"{len(messages)} message(s)")

        categories = {str(e.category) for e in audit_query(gateway.config.audit_log, study_uid=study_uid)}
        missing = _EXPECTED_AUDIT[cfg.variant] - categories
        report.check("audit trail complete", not missing, "missing " + ", ".join(sorted(missing)) if missing else "")
    except FlowgateError as e:
        logger.error("scenario %s aborted: %s", cfg.name, e)
        report.check("scenario ran", False, str(e))
    finally:
        for service in reversed(services):
            try:
                if isinstance(service, Gateway):
                    service.stop()
                else:
                    service.shutdown()
            except Exception:
                logger.exception("stopping %s failed", type(service).__name__)
        report.seconds = time.perf_counter() - started
    return report
