"""The router service: receive, route, track each study, and turn AI results into HL7."""

import logging
import socket
import socketserver
import threading
import time
from collections import Counter
from contextlib import contextmanager
from pathlib import Path

import app_config
from lib.dicom.codec import write_part10
from lib.dicom.dataset import DicomFile
from lib.dicom.uids import SR_STORAGE_CLASSES
from lib.errors import FlowgateError
from lib.gateway.audit import AuditLog, Category
from lib.gateway.config import GatewayConfig, load_rules
from lib.gateway.dispatch import Dispatcher, Outcome
from lib.gateway.errors import AdminError, ConfigInvalid
from lib.gateway.lifecycle import StudyEvent, StudyRecord, StudyState, transition
from lib.hl7.errors import Hl7Error
from lib.hl7.message import Hl7Message, encode_message
from lib.hl7.mllp import mllp_send
from lib.hl7.orm import AckCode, OrderRef, OrmContext, PatientRef, build_orm_o01, control_id
from lib.identity import Clock, UidSource, hl7_timestamp
from lib.net.dimse import Status
from lib.net.scp import AssociationMeta, ListenConfig, StoreServer, scp_serve
from lib.net.service import TcpService
from lib.rules.engine import RulesHolder, apply_morphs, resolve_source, swap_ruleset
from lib.rules.expr import AttributeView
from lib.rules.model import Level, Mode, RuleSet
from lib.rules.parser import format_morph
from lib.sr.errors import SrError
from lib.sr.reader import parse_sr_tree
from lib.sr.template import (
    STANDARD_TEMPLATE,
    MappingTemplate,
    extract_fields,
    finding_from_tree,
    parse_mapping_template,
    read_mapping_template,
)

logger = logging.getLogger(__name__)

AI_SOURCE_KIND = "ai"


class Gateway:
    def __init__(self, config: GatewayConfig, ruleset: RuleSet):
        self.config = config
        self.rules = RulesHolder(ruleset)
        self._previous: RuleSet | None = None
        self.audit = AuditLog(config.audit_log)
        self.uids = UidSource(config.seed)
        self.clock = Clock(config.seed)
        self.template = self._load_template()
        self.records: dict[str, StudyRecord] = {}
        self._records_lock = threading.Lock()
        self._study_locks: dict[str, threading.Lock] = {}
        self.dispatcher = Dispatcher(
            config.ae_title, config.dead_letter_dir, config.retry, self._on_outcome, config.max_pdu
        )
        self._hl7_threads: list[threading.Thread] = []
        # result SOP -> viewers yet to confirm it, and the ORM held back until they do
        self._awaiting: dict[str, set[str]] = {}
        self._held_hl7: dict[str, Hl7Message] = {}
        self._scp: StoreServer | None = None
        self._admin: AdminServer | None = None
        self._monitor: threading.Thread | None = None
        self._stopping = threading.Event()

    def _load_template(self) -> MappingTemplate:
        if self.config.template is None:
            return parse_mapping_template(STANDARD_TEMPLATE)
        try:
            return read_mapping_template(self.config.template)
        except OSError as e:
            raise ConfigInvalid(f"cannot read template {self.config.template}: {e}") from e
        except SrError as e:
            raise ConfigInvalid(f"{self.config.template}: {e}") from e

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Gateway":
        idle = 60.0
        if app_config.is_initialized():
            idle = app_config.get_float(app_config.ConfigKeys.NET_IDLE_TIMEOUT_S, idle)
        listen = ListenConfig(
            port=self.config.listen_port,
            ae_titles=self.config.served_titles,
            host=self.config.listen_host,
            max_pdu=self.config.max_pdu,
            idle_timeout_s=idle,
            accept_calling=None if self.config.allow_unknown_sources else self._known_calling,
        )
        self._scp = scp_serve(listen, self.handle_store)
        try:
            self._admin = AdminServer("127.0.0.1", self.config.admin_port, self).start()
        except FlowgateError:
            self._scp.shutdown()
            raise
        self._stopping.clear()
        self._monitor = threading.Thread(target=self._watch, name="study-monitor", daemon=True)
        self._monitor.start()
        logger.info(
            "gateway %s on %s:%d, rule set version %d",
            self.config.ae_title, self.config.listen_host, self.port, self.rules.current.version,
        )
        return self

    @property
    def port(self) -> int:
        return self._scp.port if self._scp is not None else self.config.listen_port

    @property
    def admin_port(self) -> int:
        return self._admin.port if self._admin is not None else self.config.admin_port

    def stop(self) -> None:
        self._stopping.set()
        for service in (self._scp, self._admin):
            if service is not None:
                service.shutdown()
        self._scp = self._admin = None
        self.drain(timeout=10.0)
        self.dispatcher.stop()
        if self._monitor is not None:
            self._monitor.join(timeout=5.0)
            self._monitor = None
        logger.info("gateway stopped")

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def drain(self, timeout: float | None = None) -> bool:
        """Wait for queued deliveries and HL7 sends in flight."""
        deadline = None if timeout is None else time.monotonic() + timeout
        done = self.dispatcher.drain(timeout)
        for thread in list(self._hl7_threads):
            thread.join(None if deadline is None else max(0.0, deadline - time.monotonic()))
            done = done and not thread.is_alive()
        return done

    def _known_calling(self, calling_ae: str, peer_host: str) -> bool:
        return resolve_source(self.rules.current, calling_ae, peer_host) is not None

    # -- study records -----------------------------------------------------

    @contextmanager
    def _study(self, study_uid: str, accession: str = "", source_ae: str = ""):
        with self._records_lock:
            lock = self._study_locks.setdefault(study_uid, threading.Lock())
        with lock:
            with self._records_lock:
                record = self.records.get(study_uid)
                if record is None:
                    record = StudyRecord(study_uid, accession, source_ae)
                    self.records[study_uid] = record
            yield record

    def _transition(self, record: StudyRecord, event: StudyEvent) -> bool:
        """Apply event to record; False when the state had no edge for it."""
        legal = True

        def illegal(message: str) -> None:
            nonlocal legal
            legal = False
            self.audit.append(Category.ERROR, message, record.study_uid, self.rules.current.version)

        transition(record, event, illegal)
        return legal

    def record(self, study_uid: str) -> StudyRecord | None:
        with self._records_lock:
            return self.records.get(study_uid)

    def _correlate(self, study_uid: str, accession: str) -> StudyRecord | None:
        with self._records_lock:
            record = self.records.get(study_uid) if study_uid else None
            if record is None and accession:
                record = next((r for r in self.records.values() if r.accession == accession), None)
            return record

    # -- inbound -----------------------------------------------------------

    def handle_store(self, meta: AssociationMeta, file: DicomFile) -> int:
        source = resolve_source(self.rules.current, meta.calling_ae, meta.peer_host)
        if source is not None and source.kind == AI_SOURCE_KIND:
            return self.handle_ai_result(meta, file)
        return self.handle_inbound_instance(meta, file)

    def handle_inbound_instance(self, meta: AssociationMeta, file: DicomFile) -> int:
        try:
            return self._route_instance(meta, file)
        except Exception as e:
            logger.exception("routing %s failed", file.sop_instance_uid)
            self.audit.append(Category.ERROR, f"routing {file.sop_instance_uid} failed: {e}")
            return Status.CANNOT_UNDERSTAND

    def _route_instance(self, meta: AssociationMeta, file: DicomFile) -> int:
        rs = self.rules.current
        sop = file.sop_instance_uid
        study_uid = file.dataset.text("StudyInstanceUID", "") or ""
        source = resolve_source(rs, meta.calling_ae, meta.peer_host)
        if source is None and not self.config.allow_unknown_sources:
            self.audit.append(Category.ERROR, f"{sop} from unknown source {meta.calling_ae}", study_uid, rs.version)
            return Status.NOT_AUTHORIZED

        decision = self.rules.evaluate(AttributeView(file.dataset), source)
        with self._study(study_uid, file.dataset.text("AccessionNumber", "") or "", meta.calling_ae) as record:
            record.instances += 1
            record.last_activity = time.monotonic()
            record.completion_reported = False
            self._transition(record, StudyEvent.INSTANCE_RECEIVED)
            self.audit.append(Category.RECEIVED, f"{sop} from {meta.calling_ae}", study_uid, rs.version)
            self.audit.append(
                Category.DECISION,
                f"{sop} matched={','.join(decision.matched) or '-'} targets={','.join(decision.destinations) or '-'}"
                + (f" reason={decision.reason}" if decision.reason else ""),
                study_uid,
                decision.ruleset_version,
            )
            if decision.priority is not None and record.priority is None:
                record.priority = decision.priority
            if decision.blocked:
                self.audit.append(Category.BLOCKED, f"{sop}: {decision.reason}", study_uid, decision.ruleset_version)
                return Status.SUCCESS

            outgoing = file
            if decision.morphs:
                warnings: list[str] = []
                morphed = apply_morphs(file.dataset, decision.morphs, warnings)
                outgoing = DicomFile.create(morphed, file.transfer_syntax, meta.calling_ae)
                detail = "; ".join(format_morph(op) for op in decision.morphs)
                if warnings:
                    detail += " (" + "; ".join(warnings) + ")"
                self.audit.append(Category.MORPHED, f"{sop}: {detail}", study_uid, decision.ruleset_version)

            targets = []
            for target in decision.targets:
                dest = rs.destination(target.name)
                if dest is None:
                    self.audit.append(Category.ERROR, f"{sop}: no destination {target.name}", study_uid, rs.version)
                    continue
                targets.append((dest, target.mode))
            if targets:
                self.dispatcher.dispatch_forwards(study_uid, outgoing, targets)
                self._transition(record, StudyEvent.FORWARDED)
                if any(dest.name in self.config.ai_dests for dest, _ in targets):
                    self._transition(record, StudyEvent.AI_ROUTED)
        return Status.SUCCESS

    def _on_outcome(self, outcome: Outcome) -> None:
        release = None
        if self.record(outcome.study_uid) is not None:
            with self._study(outcome.study_uid) as record:
                stats = record.stats(outcome.destination)
                stats.retries += outcome.retries
                stats.last_status = outcome.status
                if outcome.delivered:
                    stats.delivered += 1
                else:
                    stats.failed += 1
                release = self._settle_result(record, outcome)
        version = self.rules.current.version
        if outcome.delivered:
            detail = f"{outcome.sop_instance_uid} -> {outcome.destination} attempts={outcome.attempts}"
            self.audit.append(Category.FORWARDED, detail, outcome.study_uid, version)
        else:
            detail = f"{outcome.sop_instance_uid} -> {outcome.destination} dead-lettered: {outcome.reason}"
            self.audit.append(Category.ERROR, detail, outcome.study_uid, version)
        if release is not None:
            self._send_later(outcome.study_uid, release)

    def _settle_result(self, record: StudyRecord, outcome: Outcome) -> Hl7Message | None:
        """Track viewer delivery of an AI result; returns the ORM once every viewer has it."""
        sop = outcome.sop_instance_uid
        waiting = self._awaiting.get(sop)
        if waiting is None or outcome.destination not in waiting:
            return None
        if not outcome.delivered:
            del self._awaiting[sop]
            self._held_hl7.pop(sop, None)
            self._transition(record, StudyEvent.FAILURE)
            return None
        waiting.discard(outcome.destination)
        if waiting:
            return None
        del self._awaiting[sop]
        message = self._held_hl7.pop(sop, None)
        if not self._transition(record, StudyEvent.RESULTS_DISTRIBUTED):
            return None
        return message

    # -- AI results --------------------------------------------------------

    def handle_ai_result(self, meta: AssociationMeta, file: DicomFile) -> int:
        try:
            return self._accept_result(meta, file)
        except Exception as e:
            logger.exception("handling AI result %s failed", file.sop_instance_uid)
            self.audit.append(Category.ERROR, f"AI result {file.sop_instance_uid} failed: {e}")
            return Status.CANNOT_UNDERSTAND

    def _accept_result(self, meta: AssociationMeta, file: DicomFile) -> int:
        version = self.rules.current.version
        sop = file.sop_instance_uid
        study_uid = file.dataset.text("StudyInstanceUID", "") or ""
        accession = file.dataset.text("AccessionNumber", "") or ""
        record = self._correlate(study_uid, accession)
        if record is None:
            self._quarantine(file, f"no study matches uid {study_uid or '-'} or accession {accession or '-'}")
            return Status.SUCCESS

        is_sr = file.sop_class_uid in SR_STORAGE_CLASSES
        message = None
        with self._study(record.study_uid) as record:
            record.last_activity = time.monotonic()
            kind = "SR" if is_sr else "object"
            self.audit.append(Category.AI_RESULT, f"{kind} {sop} from {meta.calling_ae}", record.study_uid, version)
            # a result for a study that already failed or never went to AI is kept in the audit only
            if not self._transition(record, StudyEvent.AI_RESULT):
                return Status.SUCCESS

            if is_sr:
                try:
                    message = self._priority_message(record, file)
                except FlowgateError as e:
                    self.audit.append(Category.ERROR, f"SR {sop} unreadable: {e}", record.study_uid, version)

            viewers = []
            for name in self.config.viewer_dests:
                dest = self.rules.current.destination(name)
                if dest is not None:
                    viewers.append((dest, Mode.PARALLEL))
            if viewers:
                # RESULTS_DISTRIBUTED and the ORM wait for every viewer to confirm
                self._awaiting[sop] = {dest.name for dest, _ in viewers}
                if message is not None:
                    self._held_hl7[sop] = message
                self.dispatcher.dispatch_forwards(record.study_uid, file, viewers)
                return Status.SUCCESS
            if not self._transition(record, StudyEvent.RESULTS_DISTRIBUTED):
                return Status.SUCCESS
        if message is not None:
            self._send_later(record.study_uid, message)
        return Status.SUCCESS

    def _quarantine(self, file: DicomFile, reason: str) -> None:
        sop = file.sop_instance_uid
        path = Path(self.config.quarantine_dir) / f"{sop}.dcm"
        try:
            write_part10(path, file)
            path.with_suffix(".reason").write_text(reason + "\n", encoding="utf-8")
        except OSError as e:
            logger.error("cannot quarantine %s: %s", sop, e)
        self.audit.append(Category.ERROR, f"quarantined {sop}: {reason}", "", self.rules.current.version)

    def _priority_message(self, record: StudyRecord, file: DicomFile) -> Hl7Message | None:
        tree = parse_sr_tree(file)
        extraction = extract_fields(tree, self.template, file.dataset)
        finding = finding_from_tree(tree, file.dataset)
        level = Level(finding.priority)
        record.priority = level
        if level.rank < self.config.priority_threshold.rank:
            logger.info("study %s priority %s below %s; no HL7", record.study_uid, level, self.config.priority_threshold)
            return None
        if not extraction.fields:
            logger.warning("study %s: template extracted nothing; no HL7", record.study_uid)
            return None
        if self.config.hl7_port is None:
            logger.warning("study %s: no hl7_port configured; no HL7", record.study_uid)
            return None

        context = extraction.context
        evaluation = context.get("evaluation_type") or self.config.evaluation_type
        ctx = OrmContext(
            sending_app=self.config.sending_app,
            receiving_app=self.config.receiving_app,
            timestamp=hl7_timestamp(self.clock.now()),
            control_id=self.uids.guid("hl7-control"),
            processing_id=self.config.processing_id,
            patient=PatientRef(
                id=context.get("patient_id", ""),
                assigning=context.get("patient_issuer") or "MC",
                family=context.get("patient_family", ""),
                given=context.get("patient_given", ""),
                birth_date=context.get("patient_birth_date", ""),
            ),
            order=OrderRef(
                accession=context.get("accession") or record.accession,
                study_code=context.get("study_code", ""),
                study_description=context.get("study_description", ""),
                image_id=context.get("image_id") or "IMAGEID",
                short_description=context.get("short_description", ""),
                study_date=context.get("study_date", ""),
                transaction_datetime=hl7_timestamp(self.clock.now()),
            ),
            obx=tuple((f"{field_id}_{evaluation}", value) for field_id, value in extraction.fields),
        )
        return build_orm_o01(ctx, strict=self.config.hl7_strict_layout)

    def _send_later(self, study_uid: str, message: Hl7Message) -> None:
        thread = threading.Thread(target=self._send_hl7, args=(study_uid, message), name="hl7-send", daemon=True)
        self._hl7_threads = [t for t in self._hl7_threads if t.is_alive()] + [thread]
        thread.start()

    def _send_hl7(self, study_uid: str, message: Hl7Message) -> None:
        endpoint = (self.config.hl7_host, self.config.hl7_port)
        retry = self.config.retry
        control = control_id(message)
        outcome = ""
        for attempt in range(1, retry.max_attempts + 1):
            if attempt > 1:
                time.sleep(retry.backoff_s(attempt - 1))
            try:
                code = mllp_send(endpoint, message, self.config.hl7_timeout_s)
            except Hl7Error as e:
                outcome = str(e)
                logger.warning("HL7 %s attempt %d: %s", control, attempt, e)
                continue
            if code == AckCode.AA:
                self.audit.append(
                    Category.HL7_SENT, f"ORM^O01 control={control} ack=AA attempts={attempt}", study_uid,
                    self.rules.current.version,
                )
                with self._study(study_uid) as record:
                    self._transition(record, StudyEvent.HL7_SENT)
                return
            outcome = f"ack {code}"
            logger.warning("HL7 %s attempt %d: %s", control, attempt, outcome)

        self._dead_letter_hl7(control, message, outcome)
        self.audit.append(
            Category.ERROR, f"HL7 {control} not delivered after {retry.max_attempts} attempts: {outcome}", study_uid,
            self.rules.current.version,
        )
        with self._study(study_uid) as record:
            self._transition(record, StudyEvent.FAILURE)

    def _dead_letter_hl7(self, control: str, message: Hl7Message, reason: str) -> None:
        folder = Path(self.config.dead_letter_dir) / "hl7"
        try:
            folder.mkdir(parents=True, exist_ok=True)
            (folder / f"{control}.hl7").write_bytes(encode_message(message))
            (folder / f"{control}.reason").write_text(reason + "\n", encoding="utf-8")
        except OSError as e:
            logger.error("cannot dead-letter HL7 %s: %s", control, e)

    # -- monitor -----------------------------------------------------------

    def _watch(self) -> None:
        interval = min(0.5, self.config.study_idle_s / 4)
        while not self._stopping.wait(interval):
            self.check_studies()

    def check_studies(self, now: float | None = None) -> None:
        """Report quiet studies as complete and fail studies whose AI result is overdue."""
        now_mono = time.monotonic() if now is None else now
        with self._records_lock:
            uids = list(self.records)
        for study_uid in uids:
            with self._study(study_uid) as record:
                if (
                    not record.completion_reported
                    and record.instances
                    and now_mono - record.last_activity >= self.config.study_idle_s
                ):
                    record.completion_reported = True
                    self.audit.append(
                        Category.RECEIVED, f"study complete instances={record.instances}", study_uid,
                        self.rules.current.version,
                    )
                if record.state == StudyState.AI_PENDING:
                    since = record.entered(StudyState.AI_PENDING) or time.time()
                    if time.time() - since >= self.config.ai_timeout_s:
                        self._transition(record, StudyEvent.TIMEOUT)
                        self.audit.append(
                            Category.ERROR, f"no AI result within {self.config.ai_timeout_s:g}s", study_uid,
                            self.rules.current.version,
                        )

    # -- administration ----------------------------------------------------

    def reload(self) -> int:
        """Re-read the rules and install them as the next version."""
        current = self.rules.current
        new = load_rules(self.config, None, current.version + 1)
        for name in (*self.config.viewer_dests, *self.config.ai_dests):
            if new.destination(name) is None:
                raise ConfigInvalid(f"reloaded rules drop destination '{name}'")
        self._previous = swap_ruleset(self.rules, new)
        return self.rules.current.version

    def rollback(self) -> int:
        if self._previous is None:
            raise AdminError("no earlier rule set to roll back to")
        self._previous = swap_ruleset(self.rules, self._previous, rollback=True)
        return self.rules.current.version

    def status(self) -> dict:
        with self._records_lock:
            states = Counter(str(r.state) for r in self.records.values())
        return {
            "version": self.rules.current.version,
            "studies": sum(states.values()),
            **{f"state.{state}": count for state, count in sorted(states.items())},
            "pending": self.dispatcher.pending,
        }


class _AdminHandler(socketserver.StreamRequestHandler):
    def handle(self):
        gateway: Gateway = self.server.owner.gateway
        line = self.rfile.readline(256).decode("ascii", "replace").strip().upper()
        try:
            match line:
                case "RELOAD":
                    reply = f"OK version={gateway.reload()}"
                case "ROLLBACK":
                    reply = f"OK version={gateway.rollback()}"
                case "STATUS":
                    reply = "OK " + " ".join(f"{k}={v}" for k, v in gateway.status().items())
                case _:
                    reply = f"ERROR unknown command {line!r}"
        except FlowgateError as e:
            logger.error("admin %s failed: %s", line, e)
            reply = f"ERROR {e}"
        self.wfile.write((reply + "\n").encode("utf-8"))


class AdminServer(TcpService):
    name = "admin channel"

    def __init__(self, host: str, port: int, gateway: Gateway):
        self.gateway = gateway
        super().__init__(host, port, _AdminHandler)


def admin_command(port: int, command: str, host: str = "127.0.0.1", timeout: float = 10.0) -> str:
    """Send one admin command; returns the text after OK, raises AdminError otherwise."""
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.sendall(command.strip().encode("ascii") + b"\n")
            reply = sock.makefile("rb").readline().decode("utf-8").strip()
    except OSError as e:
        raise AdminError(f"gateway admin channel {host}:{port} unreachable: {e}") from e
    if not reply.startswith("OK"):
        raise AdminError(reply.removeprefix("ERROR").strip() or "no reply")
    return reply.removeprefix("OK").strip()
