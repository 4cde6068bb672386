"""Requester side: open an association, C-STORE files, release."""

import logging
import socket
from collections import OrderedDict

from lib.dicom.codec import serialize_dataset
from lib.dicom.dataset import DicomFile
from lib.dicom.uids import SUPPORTED_TRANSFER_SYNTAXES, VERIFICATION
from lib.net.association import Association, AssociationState, effective_max_pdu, merge_contexts
from lib.net.dimse import (
    CommandField,
    CStoreExchange,
    DimseMessage,
    MessageAssembler,
    Status,
    echo_request,
    encode_command,
    fragment,
)
from lib.net.errors import (
    AssociationRejected,
    ConnectionClosed,
    ConnectionRefused,
    DimseError,
    PeerAbort,
)
from lib.net.pdu import (
    DEFAULT_MAX_PDU,
    Abort,
    AeTitle,
    AssociateAc,
    AssociateRj,
    AssociateRq,
    DataTf,
    PresentationContext,
    ReleaseRp,
    ReleaseRq,
    read_pdu,
    send_pdu,
)

logger = logging.getLogger(__name__)

Endpoint = tuple[str, int]


def propose_contexts(files: list[DicomFile], include_verification: bool = False) -> list[PresentationContext]:
    """One context per SOP class: the file's own transfer syntax first, the other LE syntax as fallback."""
    wanted: OrderedDict[str, list[str]] = OrderedDict()
    for f in files:
        syntaxes = wanted.setdefault(f.sop_class_uid, [])
        if f.transfer_syntax not in syntaxes:
            syntaxes.append(f.transfer_syntax)
    if include_verification:
        wanted.setdefault(VERIFICATION, [])

    contexts = []
    for i, (abstract, syntaxes) in enumerate(wanted.items()):
        ordered = syntaxes + [ts for ts in SUPPORTED_TRANSFER_SYNTAXES if ts not in syntaxes]
        contexts.append(PresentationContext(2 * i + 1, abstract, tuple(ordered)))
    if len(contexts) > 128:
        raise DimseError(f"{len(contexts)} SOP classes exceed the 128 presentation contexts one association allows")
    return contexts


class ScuAssociation:
    """A single requested association, used as a context manager.

    Leaving the block normally releases; leaving on an exception aborts.
    """

    def __init__(
        self,
        endpoint: Endpoint,
        calling: AeTitle | str,
        called: AeTitle | str,
        contexts: list[PresentationContext],
        max_pdu: int = DEFAULT_MAX_PDU,
        timeout: float | None = 30.0,
    ):
        self.endpoint = endpoint
        self.calling = AeTitle.of(calling)
        self.called = AeTitle.of(called)
        self.proposed = contexts
        self.max_pdu = max_pdu
        self.timeout = timeout
        self.association: Association | None = None
        self._sock: socket.socket | None = None
        self._message_id = 0

    def __enter__(self) -> "ScuAssociation":
        self.open()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.release()
        else:
            self.abort()

    def open(self) -> Association:
        try:
            self._sock = socket.create_connection(self.endpoint, timeout=self.timeout)
        except OSError as e:
            raise ConnectionRefused(f"cannot connect to {self.endpoint[0]}:{self.endpoint[1]}: {e}") from e

        rq = AssociateRq(self.called, self.calling, tuple(self.proposed), max_pdu_length=self.max_pdu)
        send_pdu(self._sock, rq)
        reply = self._read()
        match reply:
            case AssociateAc():
                self.association = Association(
                    calling=self.calling,
                    called=self.called,
                    max_pdu_length=effective_max_pdu(reply.max_pdu_length),
                    contexts=merge_contexts(rq, reply),
                    peer=self.endpoint,
                    state=AssociationState.ESTABLISHED,
                )
                logger.debug("association %s -> %s established", self.calling, self.called)
                return self.association
            case AssociateRj():
                self._close()
                raise AssociationRejected(reply.result, reply.source, reply.reason)
            case _:
                self._close()
                raise PeerAbort(f"unexpected {type(reply).__name__} during negotiation")

    def _read(self):
        try:
            pdu = read_pdu(self._sock)
        except (ConnectionClosed, OSError) as e:
            self._close()
            raise PeerAbort(f"connection to {self.endpoint[0]}:{self.endpoint[1]} lost: {e}") from e
        if isinstance(pdu, Abort):
            if self.association:
                self.association.state = AssociationState.ABORTED
            self._close()
            raise PeerAbort(f"peer aborted (source {pdu.source}, reason {pdu.reason})")
        return pdu

    def _next_message_id(self) -> int:
        self._message_id = self._message_id % 0xFFFF + 1
        return self._message_id

    def _send_message(self, context_id: int, command: bytes, data: bytes | None) -> None:
        for pdu in fragment(context_id, command, True, self.association.max_pdu_length):
            send_pdu(self._sock, pdu)
        if data is not None:
            for pdu in fragment(context_id, data, False, self.association.max_pdu_length):
                send_pdu(self._sock, pdu)

    def _await_response(self, message_id: int, expected: CommandField) -> DimseMessage:
        assembler = MessageAssembler()
        while True:
            pdu = self._read()
            if not isinstance(pdu, DataTf):
                raise DimseError(f"expected P-DATA-TF, got {type(pdu).__name__}")
            for pdv in pdu.pdvs:
                message = assembler.feed(pdv)
                if message is None:
                    continue
                responded = message.command.integer("MessageIDBeingRespondedTo")
                if message.command_field != expected or responded != message_id:
                    raise DimseError(
                        f"response {message.command_field:#06x} for message {responded}, "
                        f"expected {expected:#06x} for {message_id}"
                    )
                return message

    def store(self, file: DicomFile) -> int:
        if self.association is None or self.association.state != AssociationState.ESTABLISHED:
            raise DimseError("no established association")
        ctx = self.association.context_for(file.sop_class_uid)
        if ctx is None:
            logger.warning("peer accepted no context for %s; %s not sent", file.sop_class_uid, file.sop_instance_uid)
            return Status.SOP_CLASS_NOT_SUPPORTED

        exchange = CStoreExchange(self._next_message_id(), file.sop_class_uid, file.sop_instance_uid)
        if ctx.transfer_syntax != file.transfer_syntax:
            logger.debug("re-encoding %s as %s", file.sop_instance_uid, ctx.transfer_syntax)
        data = serialize_dataset(file.dataset, ctx.transfer_syntax)
        self._send_message(ctx.id, encode_command(exchange.request()), data)
        response = self._await_response(exchange.message_id, CommandField.C_STORE_RSP)
        return response.command.integer("Status") or 0

    def echo(self) -> int:
        ctx = self.association.context_for(VERIFICATION) if self.association else None
        if ctx is None:
            raise DimseError("peer did not accept the verification context")
        message_id = self._next_message_id()
        self._send_message(ctx.id, encode_command(echo_request(message_id)), None)
        response = self._await_response(message_id, CommandField.C_ECHO_RSP)
        return response.command.integer("Status") or 0

    def release(self) -> None:
        if self._sock is None:
            return
        try:
            self.association.state = AssociationState.RELEASING
            send_pdu(self._sock, ReleaseRq())
            reply = self._read()
            if not isinstance(reply, ReleaseRp):
                logger.warning("expected A-RELEASE-RP, got %s", type(reply).__name__)
            self.association.state = AssociationState.CLOSED
        finally:
            self._close()

    def abort(self) -> None:
        if self._sock is None:
            return
        try:
            send_pdu(self._sock, Abort())
        except OSError:
            pass
        finally:
            if self.association:
                self.association.state = AssociationState.ABORTED
            self._close()

    def _close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


def scu_store(
    endpoint: Endpoint,
    calling: AeTitle | str,
    called: AeTitle | str,
    files: list[DicomFile],
    max_pdu: int = DEFAULT_MAX_PDU,
    timeout: float | None = 30.0,
) -> list[int]:
    """Store every file over one association; per-file statuses in input order.

    A non-success status is recorded for that file and the remaining files are still sent.
    """
    if not files:
        return []
    statuses = []
    with ScuAssociation(endpoint, calling, called, propose_contexts(files), max_pdu, timeout) as assoc:
        for f in files:
            status = assoc.store(f)
            if status != Status.SUCCESS:
                logger.warning("C-STORE %s -> %s: status %#06x", f.sop_instance_uid, called, status)
            statuses.append(status)
    return statuses


def scu_echo(
    endpoint: Endpoint,
    calling: AeTitle | str,
    called: AeTitle | str,
    timeout: float | None = 30.0,
) -> int:
    contexts = [PresentationContext(1, VERIFICATION, SUPPORTED_TRANSFER_SYNTAXES)]
    with ScuAssociation(endpoint, calling, called, contexts, timeout=timeout) as assoc:
        return assoc.echo()
