import time

import pytest

from lib.dicom.codec import read_part10
from lib.gateway.audit import AuditLog, Category, audit_query
from lib.gateway.config import RetryPolicy, parse_gateway_config, read_gateway_config
from lib.gateway.dispatch import Dispatcher
from lib.gateway.errors import AdminError, ConfigInvalid
from lib.gateway.lifecycle import StudyEvent, StudyRecord, StudyState, transition
from lib.gateway.service import Gateway, admin_command
from lib.hl7.orm import control_id, message_type
from lib.net.errors import AssociationRejected
from lib.net.scu import scu_store
from lib.rules.model import DestinationDef, Level, Mode
from lib.sim.sinks import AckMode, MllpSink, StoreSink, parse_behavior, read_manifest
from lib.sr.builder import build_tid1500_sr
from lib.sr.model import FindingReport
from tests.conftest import ct_file

S, E = StudyState, StudyEvent


ROUTES = """\
[rule no_modality2]
when = source == "modality2"
block = true

[rule ct_studies]
when = modality == "CT"
route = pacs, ai_receiver : parallel
morph = set (0008,0080) LO "FLOWGATE"

[rule other]
route = pacs
"""


def gateway_text(
    tmp_path, pacs: int, viewer: int, ai: int, hl7: int | None = None, extra: str = "", rules: str = ROUTES
) -> str:
    hl7_line = f"hl7_port = {hl7}\n" if hl7 else ""
    return f"""\
[gateway]
listen_port = 0
admin_port = 0
ae_title = FLOWGATE
viewer_dests = viewer
ai_dests = ai_receiver
{hl7_line}hl7_timeout_s = 5
retry_max = 2
retry_backoff_ms = 20
quarantine_dir = {tmp_path / "quarantine"}
dead_letter_dir = {tmp_path / "dead_letter"}
audit_log = {tmp_path / "audit" / "audit.ndjson"}
seed = 7
study_idle_s = 60
{extra}
[source modality1]
calling_ae = MODALITY1

[source modality2]
calling_ae = MODALITY2

[source ai]
calling_ae = AI_RECEIVER
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
called_ae = AI_RECEIVER

{rules}"""


def wait_for(predicate, timeout: float = 10.0) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.05)
    return predicate()


def finding(**overrides) -> FindingReport:
    values = dict(
        priority="HIGH", detection="POS", certainty=10, bbox=(5, 2, 6, 4), accession="ACC001", study_uid="1.2.3.4",
        patient_id="12345", patient_family="DOE", patient_given="JANE",
    )
    values.update(overrides)
    return FindingReport.build(**values)


@pytest.fixture
def sinks(tmp_path):
    started = {
        "pacs": StoreSink(0, "PACS", tmp_path / "pacs").start(),
        "viewer": StoreSink(0, "VIEWER", tmp_path / "viewer").start(),
        "ai": StoreSink(0, "AI_RECEIVER", tmp_path / "ai").start(),
        "hl7": MllpSink(0, AckMode.AA, tmp_path / "interface").start(),
    }
    yield started
    for sink in started.values():
        sink.shutdown()


@pytest.fixture
def gateway_file(tmp_path, sinks):
    path = tmp_path / "gateway.conf"
    path.write_text(
        gateway_text(tmp_path, sinks["pacs"].port, sinks["viewer"].port, sinks["ai"].port, sinks["hl7"].port),
        encoding="utf-8",
    )
    return path


@pytest.fixture
def gateway(gateway_file):
    with Gateway(*read_gateway_config(gateway_file)) as running:
        yield running


def send(gateway: Gateway, calling: str, *files) -> list[int]:
    return scu_store(("127.0.0.1", gateway.port), calling, "FLOWGATE", list(files), timeout=10)


def custom_gateway(tmp_path, sinks, viewer=None, hl7=None, **text) -> Gateway:
    """A gateway on the shared sinks with the viewer or interface engine swapped out."""
    viewer = viewer or sinks["viewer"]
    path = tmp_path / "custom.conf"
    path.write_text(gateway_text(tmp_path, sinks["pacs"].port, viewer.port, sinks["ai"].port, hl7, **text), "utf-8")
    return Gateway(*read_gateway_config(path))


# -- audit -----------------------------------------------------------------


def test_audit_append_and_query(tmp_path):
    log = AuditLog(tmp_path / "audit.ndjson")
    log.append(Category.RECEIVED, "a", "1.1", 1)
    log.append(Category.DECISION, "b", "1.1", 1)
    log.append(Category.RECEIVED, "c", "2.2", 2)

    assert [e.seq for e in audit_query(log.path)] == [1, 2, 3]
    assert [e.detail for e in audit_query(log.path, study_uid="1.1")] == ["a", "b"]
    assert [e.detail for e in audit_query(log.path, category=Category.RECEIVED)] == ["a", "c"]
    assert [e.seq for e in audit_query(log.path, seq_range=(2, 3))] == [2, 3]
    assert audit_query(log.path, study_uid="1.1", category="blocked") == []


def test_audit_sequence_survives_reopen(tmp_path):
    AuditLog(tmp_path / "audit.ndjson").append(Category.ERROR, "first")
    event = AuditLog(tmp_path / "audit.ndjson").append(Category.ERROR, "second")
    assert event.seq == 2


def test_audit_query_missing_log(tmp_path):
    assert audit_query(tmp_path / "absent.ndjson") == []


# -- lifecycle -------------------------------------------------------------


def test_full_lifecycle():
    record = StudyRecord("1.2.3")
    for event in (E.INSTANCE_RECEIVED, E.FORWARDED, E.AI_ROUTED, E.AI_RESULT, E.RESULTS_DISTRIBUTED, E.HL7_SENT):
        transition(record, event)

    assert record.state == S.HL7_SENT
    assert [state for state, _ in record.history] == [
        S.RECEIVING, S.FORWARDED, S.AI_PENDING, S.AI_COMPLETE, S.RESULTS_DISTRIBUTED, S.HL7_SENT,
    ]
    assert record.entered(S.AI_PENDING) is not None


def test_repeats_leave_no_history():
    record = StudyRecord("1.2.3")
    for event in (E.INSTANCE_RECEIVED, E.INSTANCE_RECEIVED, E.FORWARDED, E.FORWARDED, E.INSTANCE_RECEIVED):
        transition(record, event)
    assert record.state == S.FORWARDED
    assert len(record.history) == 2


def test_illegal_event_is_reported():
    record = StudyRecord("1.2.3", state=S.HL7_SENT)
    complaints = []

    transition(record, E.INSTANCE_RECEIVED, complaints.append)

    assert record.state == S.HL7_SENT
    assert len(complaints) == 1 and "illegal" in complaints[0]


def test_ai_result_without_ai_route_is_illegal():
    record = transition(StudyRecord("1.2.3"), E.FORWARDED)
    transition(record, E.AI_RESULT)
    assert record.state == S.FORWARDED


@pytest.mark.parametrize("state", list(StudyState))
def test_failure_from_any_state(state):
    assert transition(StudyRecord("1.2.3", state=state), E.FAILURE).state == S.FAILED


def test_ai_timeout_fails_pending_study():
    record = StudyRecord("1.2.3", state=S.AI_PENDING)
    assert transition(record, E.TIMEOUT).state == S.FAILED


# -- config ----------------------------------------------------------------


def test_parse_gateway_config(tmp_path):
    config, rs = parse_gateway_config(gateway_text(tmp_path, 1, 2, 3, 2575), tmp_path / "gateway.conf")

    assert config.ae_title == "FLOWGATE"
    assert config.viewer_dests == ("viewer",)
    assert config.retry == RetryPolicy(max_attempts=2, base_backoff_ms=20)
    assert config.priority_threshold == Level.HIGH
    assert config.rules_path == tmp_path / "gateway.conf"
    assert [r.name for r in rs.rules] == ["no_modality2", "ct_studies", "other"]
    assert (tmp_path / "quarantine").is_dir()


def test_retry_backoff_grows():
    policy = RetryPolicy(max_attempts=4, base_backoff_ms=500, multiplier=2.0)
    assert [policy.backoff_s(n) for n in (1, 2, 3)] == [0.5, 1.0, 2.0]


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda text: text.replace("[gateway]", "[gateways]"), None),
        (lambda text: text.replace("seed = 7", "seed = 7\ncolour = blue"), 14),
        (lambda text: text.replace("viewer_dests = viewer", "viewer_dests = monitor"), 1),
        (lambda text: text.replace("ae_title = FLOWGATE", "ae_title = flowgate!"), 1),
        (lambda text: text.replace("retry_max = 2", "retry_max = 0"), 1),
    ],
)
def test_invalid_gateway_config(tmp_path, mutate, line):
    with pytest.raises(ConfigInvalid) as info:
        parse_gateway_config(mutate(gateway_text(tmp_path, 1, 2, 3)), tmp_path / "gateway.conf")
    assert info.value.line == line


def test_bad_rule_in_gateway_config(tmp_path):
    text = gateway_text(tmp_path, 1, 2, 3).replace("route = pacs\n", "route = archive\n")
    with pytest.raises(ConfigInvalid, match="archive"):
        parse_gateway_config(text, tmp_path / "gateway.conf")


def test_missing_gateway_config(tmp_path):
    with pytest.raises(ConfigInvalid):
        read_gateway_config(tmp_path / "absent.conf")


# -- dispatch --------------------------------------------------------------


def destination(name: str, sink: StoreSink) -> DestinationDef:
    return DestinationDef(name, "127.0.0.1", sink.port, sink.ae_title)


@pytest.fixture
def slow_sinks(tmp_path):
    started = [StoreSink(0, f"SLOW{n}", tmp_path / f"slow{n}", parse_behavior("delay=300")).start() for n in range(3)]
    yield started
    for sink in started:
        sink.shutdown()


def test_parallel_route_overlaps(tmp_path, slow_sinks):
    targets = [(destination(f"d{n}", sink), Mode.PARALLEL) for n, sink in enumerate(slow_sinks)]
    for n in range(10):
        dispatcher = Dispatcher("FLOWGATE", tmp_path / "dead")
        started = time.perf_counter()
        dispatcher.dispatch_forwards("1.2.3.4", ct_file(f"1.2.3.4.5.{n}"), targets)
        assert dispatcher.drain(timeout=10)
        elapsed = time.perf_counter() - started
        dispatcher.stop()
        assert elapsed < 0.6, f"repetition {n}: {elapsed:.3f}s"

    assert all(len(read_manifest(sink.out_dir)) == 10 for sink in slow_sinks)


def test_serial_route_is_a_chain(tmp_path, slow_sinks):
    dispatcher = Dispatcher("FLOWGATE", tmp_path / "dead")
    targets = [(destination(f"d{n}", sink), Mode.SERIAL) for n, sink in enumerate(slow_sinks)]

    started = time.perf_counter()
    dispatcher.dispatch_forwards("1.2.3.4", ct_file(), targets)
    assert dispatcher.drain(timeout=10)
    elapsed = time.perf_counter() - started
    dispatcher.stop()

    assert elapsed >= 0.9
    arrivals = [read_manifest(sink.out_dir)["received_at"][0] for sink in slow_sinks]
    assert arrivals == sorted(arrivals)


def test_destination_order_preserved(tmp_path):
    with StoreSink(0, "PACS", tmp_path / "pacs") as sink:
        dispatcher = Dispatcher("FLOWGATE", tmp_path / "dead")
        sops = [f"1.2.3.4.5.{n}" for n in range(5)]
        for sop in sops:
            dispatcher.dispatch_forwards("1.2.3.4", ct_file(sop), [(destination("pacs", sink), Mode.PARALLEL)])
        assert dispatcher.drain(timeout=20)
        dispatcher.stop()
        assert read_manifest(sink.out_dir)["sop"].to_list() == sops


def test_retry_then_deliver(tmp_path):
    outcomes = []
    with StoreSink(0, "PACS", tmp_path / "pacs", parse_behavior("fail_first=2 status=A700")) as sink:
        dispatcher = Dispatcher("FLOWGATE", tmp_path / "dead", RetryPolicy(max_attempts=3, base_backoff_ms=10), outcomes.append)
        dispatcher.dispatch_forwards("1.2.3.4", ct_file(), [(destination("pacs", sink), Mode.PARALLEL)])
        assert dispatcher.drain(timeout=10)
        dispatcher.stop()

    [outcome] = outcomes
    assert outcome.delivered
    assert outcome.attempts == 3 and outcome.retries == 2
    assert not (tmp_path / "dead").exists()


def test_exhausted_retries_dead_letter(tmp_path):
    outcomes = []
    with StoreSink(0, "PACS", tmp_path / "pacs", parse_behavior("fail_first=9 status=A700")) as sink:
        dispatcher = Dispatcher("FLOWGATE", tmp_path / "dead", RetryPolicy(max_attempts=3, base_backoff_ms=10), outcomes.append)
        dispatcher.dispatch_forwards("1.2.3.4", ct_file(), [(destination("pacs", sink), Mode.PARALLEL)])
        assert dispatcher.drain(timeout=10)
        dispatcher.stop()

    [outcome] = outcomes
    assert not outcome.delivered
    assert outcome.status == 0xA700
    assert read_part10(tmp_path / "dead" / "pacs" / "1.2.3.4.5.6.dcm").sop_instance_uid == "1.2.3.4.5.6"
    assert "status 0xa700" in (tmp_path / "dead" / "pacs" / "1.2.3.4.5.6.reason").read_text(encoding="utf-8")


def test_unreachable_destination_dead_letters(tmp_path, free_port):
    outcomes = []
    dispatcher = Dispatcher("FLOWGATE", tmp_path / "dead", RetryPolicy(max_attempts=2, base_backoff_ms=10), outcomes.append)
    dispatcher.dispatch_forwards("1.2.3.4", ct_file(), [(DestinationDef("gone", "127.0.0.1", free_port, "GONE"), Mode.PARALLEL)])
    assert dispatcher.drain(timeout=10)
    dispatcher.stop()

    assert not outcomes[0].delivered
    assert outcomes[0].status is None
    assert (tmp_path / "dead" / "gone" / "1.2.3.4.5.6.dcm").exists()


# -- service ---------------------------------------------------------------


def test_route_and_morph(gateway, sinks):
    assert send(gateway, "MODALITY1", ct_file("1.2.3.4.5.1"), ct_file("1.2.3.4.5.2")) == [0, 0]
    assert gateway.drain(timeout=10)

    stored = read_manifest(sinks["pacs"].out_dir)["sop"].to_list()
    assert sorted(stored) == ["1.2.3.4.5.1", "1.2.3.4.5.2"]
    assert len(read_manifest(sinks["ai"].out_dir)) == 2
    forwarded = read_part10(sinks["pacs"].out_dir / "1.2.3.4.5.1.dcm")
    assert forwarded.dataset.text("InstitutionName") == "FLOWGATE"

    record = gateway.record("1.2.3.4")
    assert record.state == S.AI_PENDING
    assert record.instances == 2
    assert record.stats("pacs").delivered == 2

    categories = [e.category for e in audit_query(gateway.config.audit_log, study_uid="1.2.3.4")]
    assert categories.count(Category.RECEIVED) == 2
    assert categories.count(Category.MORPHED) == 2
    assert categories.count(Category.FORWARDED) == 4


def test_blocked_source(gateway, sinks):
    assert send(gateway, "MODALITY2", ct_file()) == [0]
    assert gateway.drain(timeout=10)

    assert len(read_manifest(sinks["pacs"].out_dir)) == 0
    blocked = audit_query(gateway.config.audit_log, category=Category.BLOCKED)
    assert len(blocked) == 1 and "no_modality2" in blocked[0].detail


def test_non_ct_takes_default_route(gateway, sinks):
    send(gateway, "MODALITY1", ct_file(Modality="MR"))
    assert gateway.drain(timeout=10)

    assert len(read_manifest(sinks["pacs"].out_dir)) == 1
    assert len(read_manifest(sinks["ai"].out_dir)) == 0
    assert gateway.record("1.2.3.4").state == S.FORWARDED


def test_unknown_source_rejected(gateway):
    with pytest.raises(AssociationRejected):
        send(gateway, "STRANGER", ct_file())


def test_ai_result_becomes_priority_message(gateway, sinks):
    send(gateway, "MODALITY1", ct_file())
    sr = build_tid1500_sr(finding())

    assert send(gateway, "AI_RECEIVER", sr) == [0]
    assert wait_for(lambda: gateway.record("1.2.3.4").state == S.HL7_SENT)
    assert gateway.drain(timeout=10)

    assert read_manifest(sinks["viewer"].out_dir)["sop"].to_list() == [sr.sop_instance_uid]
    [message] = sinks["hl7"].messages()
    assert message_type(message) == "ORM^O01"
    rows = [(seg.text(3), seg.text(5)) for seg in message.all("OBX")]
    assert rows == [("AI_PRIORITY_MONAI", "HIGH"), ("AI_DETECTION_MONAI", "POS")]
    assert message.segment("OBR").component(3) == "ACC001"
    assert gateway.record("1.2.3.4").priority == Level.HIGH
    assert len(audit_query(gateway.config.audit_log, category=Category.HL7_SENT)) == 1


def test_low_priority_result_sends_no_hl7(gateway, sinks):
    send(gateway, "MODALITY1", ct_file())
    send(gateway, "AI_RECEIVER", build_tid1500_sr(finding(priority="LOW", detection="NEG", certainty=0, bbox=None)))
    assert gateway.drain(timeout=10)

    assert gateway.record("1.2.3.4").state == S.RESULTS_DISTRIBUTED
    assert len(read_manifest(sinks["viewer"].out_dir)) == 1
    assert sinks["hl7"].messages() == []


def test_unmatched_result_quarantined(gateway, sinks):
    sr = build_tid1500_sr(finding(accession="NOPE", study_uid="9.9.9"))

    assert send(gateway, "AI_RECEIVER", sr) == [0]

    assert (gateway.config.quarantine_dir / f"{sr.sop_instance_uid}.dcm").exists()
    assert "no study matches" in (gateway.config.quarantine_dir / f"{sr.sop_instance_uid}.reason").read_text(
        encoding="utf-8"
    )
    assert len(read_manifest(sinks["viewer"].out_dir)) == 0


def test_reload_and_rollback(gateway, gateway_file):
    original = gateway.rules.current.rules
    text = gateway_file.read_text(encoding="utf-8")
    gateway_file.write_text(text.replace("[rule other]\nroute = pacs\n", ""), encoding="utf-8")

    assert admin_command(gateway.admin_port, "RELOAD") == "version=2"
    assert [r.name for r in gateway.rules.current.rules] == ["no_modality2", "ct_studies"]

    assert gateway.rollback() == 3
    assert gateway.rules.current.rules == original
    assert admin_command(gateway.admin_port, "STATUS").startswith("version=3 studies=0")


def test_broken_reload_keeps_current_rules(gateway, gateway_file):
    gateway_file.write_text(gateway_file.read_text(encoding="utf-8") + "\n[rule bad]\nroute = nowhere\n", encoding="utf-8")

    with pytest.raises(AdminError, match="nowhere"):
        admin_command(gateway.admin_port, "RELOAD")
    assert gateway.rules.current.version == 1


def test_admin_errors(gateway):
    with pytest.raises(AdminError, match="no earlier rule set"):
        admin_command(gateway.admin_port, "ROLLBACK")
    with pytest.raises(AdminError, match="unknown command"):
        admin_command(gateway.admin_port, "SHUTDOWN")


def test_admin_unreachable(free_port):
    with pytest.raises(AdminError):
        admin_command(free_port, "STATUS", timeout=2)


def test_overdue_ai_result_fails_study(tmp_path, sinks):
    path = tmp_path / "gateway.conf"
    path.write_text(
        gateway_text(tmp_path, sinks["pacs"].port, sinks["viewer"].port, sinks["ai"].port, extra="ai_timeout_s = 0.3\n"),
        encoding="utf-8",
    )
    with Gateway(*read_gateway_config(path)) as running:
        send(running, "MODALITY1", ct_file())
        assert wait_for(lambda: running.record("1.2.3.4").state == S.FAILED)

    errors = audit_query(tmp_path / "audit" / "audit.ndjson", category=Category.ERROR)
    assert any("no AI result" in e.detail for e in errors)


def test_results_wait_for_viewer_delivery(tmp_path, sinks):
    slow_viewer = StoreSink(0, "VIEWER", tmp_path / "slow_viewer", parse_behavior("delay=800")).start()
    try:
        with custom_gateway(tmp_path, sinks, viewer=slow_viewer, hl7=sinks["hl7"].port) as running:
            send(running, "MODALITY1", ct_file())
            send(running, "AI_RECEIVER", build_tid1500_sr(finding()))

            assert running.record("1.2.3.4").state == S.AI_COMPLETE
            assert sinks["hl7"].messages() == []
            assert wait_for(lambda: running.record("1.2.3.4").state == S.HL7_SENT)
            record = running.record("1.2.3.4")
    finally:
        slow_viewer.shutdown()

    assert len(read_manifest(slow_viewer.out_dir)) == 1
    assert record.entered(S.RESULTS_DISTRIBUTED) <= record.entered(S.HL7_SENT)


def test_viewer_dead_letter_fails_study(tmp_path, sinks):
    broken_viewer = StoreSink(0, "VIEWER", tmp_path / "broken_viewer", parse_behavior("fail_first=5 status=A700")).start()
    try:
        with custom_gateway(tmp_path, sinks, viewer=broken_viewer, hl7=sinks["hl7"].port) as running:
            send(running, "MODALITY1", ct_file())
            send(running, "AI_RECEIVER", build_tid1500_sr(finding()))
            assert wait_for(lambda: running.record("1.2.3.4").state == S.FAILED)
            assert running.drain(timeout=10)
            record = running.record("1.2.3.4")
    finally:
        broken_viewer.shutdown()

    assert record.entered(S.RESULTS_DISTRIBUTED) is None
    assert sinks["hl7"].messages() == []
    assert audit_query(tmp_path / "audit" / "audit.ndjson", category=Category.HL7_SENT) == []


def test_late_result_after_timeout_sends_nothing(tmp_path, sinks):
    gateway = custom_gateway(tmp_path, sinks, hl7=sinks["hl7"].port, extra="ai_timeout_s = 0.3\n")
    with gateway as running:
        send(running, "MODALITY1", ct_file())
        assert wait_for(lambda: running.record("1.2.3.4").state == S.FAILED)

        assert send(running, "AI_RECEIVER", build_tid1500_sr(finding())) == [0]
        assert running.drain(timeout=10)
        assert running.record("1.2.3.4").state == S.FAILED

    log = tmp_path / "audit" / "audit.ndjson"
    assert len(audit_query(log, category=Category.AI_RESULT)) == 1
    assert audit_query(log, category=Category.HL7_SENT) == []
    assert sinks["hl7"].messages() == []
    assert len(read_manifest(sinks["viewer"].out_dir)) == 0


@pytest.mark.parametrize("ack_mode", [AckMode.AE, AckMode.NONE])
def test_rejected_hl7_is_dead_lettered(tmp_path, sinks, ack_mode):
    engine = MllpSink(0, ack_mode, tmp_path / "engine").start()
    try:
        with custom_gateway(tmp_path, sinks, hl7=engine.port) as running:
            send(running, "MODALITY1", ct_file())
            send(running, "AI_RECEIVER", build_tid1500_sr(finding()))
            assert wait_for(lambda: running.record("1.2.3.4").state == S.FAILED, timeout=20)
            assert running.drain(timeout=10)
        received = engine.messages()
    finally:
        engine.shutdown()

    assert len(received) == 2
    control = control_id(received[0])
    dead = tmp_path / "dead_letter" / "hl7"
    assert [p.name for p in dead.glob("*.hl7")] == [f"{control}.hl7"]
    assert (dead / f"{control}.reason").exists()
    errors = audit_query(tmp_path / "audit" / "audit.ndjson", category=Category.ERROR)
    assert any(f"HL7 {control} not delivered after 2 attempts" in e.detail for e in errors)
    assert audit_query(tmp_path / "audit" / "audit.ndjson", category=Category.HL7_SENT) == []


MIXED_THICKNESS_ROUTES = """\
[rule thick_to_ai]
when = slice_thickness >= 2.0
route = ai_receiver
continue = true

[rule everything]
route = pacs
"""


def test_mixed_thickness_study_splits_ai_and_pacs(tmp_path, sinks):
    thin = [ct_file(f"1.2.3.4.1.{i}", SeriesInstanceUID="1.2.3.4.1", SliceThickness=0.625) for i in range(1, 4)]
    thick = [ct_file(f"1.2.3.4.2.{i}", SeriesInstanceUID="1.2.3.4.2", SliceThickness=3.0) for i in range(1, 3)]

    with custom_gateway(tmp_path, sinks, rules=MIXED_THICKNESS_ROUTES) as running:
        assert send(running, "MODALITY1", *thin, *thick) == [0] * 5
        assert running.drain(timeout=10)
        assert running.record("1.2.3.4").state == S.AI_PENDING

    assert sorted(read_manifest(sinks["ai"].out_dir)["sop"].to_list()) == ["1.2.3.4.2.1", "1.2.3.4.2.2"]
    assert sorted(read_manifest(sinks["pacs"].out_dir)["sop"].to_list()) == sorted(
        f.sop_instance_uid for f in (*thin, *thick)
    )
