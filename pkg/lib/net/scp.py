"""Acceptor side: a threaded C-STORE / C-ECHO service.

Each association runs on its own thread and is strictly request/response.
Protocol faults abort that association only; a failing handler yields 0xC000.
"""

import logging
import socket
import socketserver
import uuid
from dataclasses import dataclass, field
from typing import Callable

from lib.dicom.codec import parse_dataset
from lib.dicom.dataset import DicomFile, build_file_meta
from lib.dicom.errors import DicomError
from lib.dicom.uids import STORAGE_CLASSES, SUPPORTED_TRANSFER_SYNTAXES, VERIFICATION
from lib.errors import InvariantViolation
from lib.net.association import (
    Association,
    AssociationState,
    LocalConfig,
    effective_max_pdu,
    merge_contexts,
    negotiate_accept,
)
from lib.net.dimse import (
    CommandField,
    CStoreExchange,
    DimseMessage,
    MessageAssembler,
    Status,
    echo_response,
    encode_command,
    fragment,
)
from lib.net.errors import ConnectionClosed, DimseError
from lib.net.pdu import DEFAULT_MAX_PDU, Abort, AssociateRj, AssociateRq, DataTf, ReleaseRp, ReleaseRq, read_pdu, send_pdu
from lib.net.service import TcpService

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssociationMeta:
    calling_ae: str
    called_ae: str
    peer_host: str
    peer_port: int
    association_id: str


StoreHandler = Callable[[AssociationMeta, DicomFile], int]


@dataclass
class ListenConfig:
    port: int
    ae_titles: list[str]
    host: str = "127.0.0.1"
    abstract_syntaxes: tuple[str, ...] = (*STORAGE_CLASSES, VERIFICATION)
    transfer_syntaxes: tuple[str, ...] = SUPPORTED_TRANSFER_SYNTAXES
    max_pdu: int = DEFAULT_MAX_PDU
    idle_timeout_s: float = 60.0
    accept_calling: Callable[[str, str], bool] | None = field(default=None, repr=False)

    def local(self) -> LocalConfig:
        return LocalConfig(
            ae_titles=frozenset(self.ae_titles),
            abstract_syntaxes=frozenset(self.abstract_syntaxes),
            transfer_syntaxes=self.transfer_syntaxes,
            max_pdu_length=self.max_pdu,
            accept_calling=self.accept_calling,
        )


class _AssociationHandler(socketserver.BaseRequestHandler):
    def handle(self):
        service: StoreServer = self.server.owner
        sock: socket.socket = self.request
        sock.settimeout(service.config.idle_timeout_s)
        host, port = self.client_address[:2]
        assoc = None
        try:
            assoc = self._negotiate(service, sock, host, port)
            if assoc is not None:
                self._serve(service, sock, assoc, host, port)
        except TimeoutError:
            logger.info("association from %s:%d idle for %ss; aborting", host, port, service.config.idle_timeout_s)
            self._abort(sock, assoc)
        except ConnectionClosed:
            logger.info("peer %s:%d dropped the connection", host, port)
            if assoc:
                assoc.state = AssociationState.ABORTED
        except (DimseError, DicomError, InvariantViolation) as e:
            logger.warning("protocol error from %s:%d: %s", host, port, e)
            self._abort(sock, assoc)
        except OSError as e:
            logger.warning("socket error from %s:%d: %s", host, port, e)
            self._abort(sock, assoc)

    @staticmethod
    def _abort(sock: socket.socket, assoc: Association | None) -> None:
        try:
            send_pdu(sock, Abort(source=2, reason=0))
        except OSError:
            pass
        if assoc:
            assoc.state = AssociationState.ABORTED

    def _negotiate(self, service: "StoreServer", sock: socket.socket, host: str, port: int) -> Association | None:
        rq = read_pdu(sock)
        if not isinstance(rq, AssociateRq):
            raise DimseError(f"expected A-ASSOCIATE-RQ, got {type(rq).__name__}")
        reply = negotiate_accept(rq, service.local, host)
        send_pdu(sock, reply)
        if isinstance(reply, AssociateRj):
            logger.info("rejected association %s -> %s from %s (reason %d)", rq.calling, rq.called, host, reply.reason)
            return None
        return Association(
            calling=rq.calling,
            called=rq.called,
            max_pdu_length=effective_max_pdu(rq.max_pdu_length),
            contexts=merge_contexts(rq, reply),
            peer=(host, port),
            state=AssociationState.ESTABLISHED,
        )

    def _serve(self, service: "StoreServer", sock: socket.socket, assoc: Association, host: str, port: int) -> None:
        meta = AssociationMeta(str(assoc.calling), str(assoc.called), host, port, uuid.uuid4().hex[:12])
        assembler = MessageAssembler()
        while True:
            pdu = read_pdu(sock)
            match pdu:
                case DataTf():
                    for pdv in pdu.pdvs:
                        message = assembler.feed(pdv)
                        if message is not None:
                            self._dispatch(service, sock, assoc, meta, message)
                case ReleaseRq():
                    assoc.state = AssociationState.RELEASING
                    send_pdu(sock, ReleaseRp())
                    assoc.state = AssociationState.CLOSED
                    return
                case Abort():
                    assoc.state = AssociationState.ABORTED
                    return
                case _:
                    raise DimseError(f"unexpected {type(pdu).__name__} on an established association")

    def _dispatch(
        self, service: "StoreServer", sock: socket.socket, assoc: Association, meta: AssociationMeta, message: DimseMessage
    ) -> None:
        ctx = assoc.context_by_id(message.context_id)
        if ctx is None or not ctx.accepted:
            raise DimseError(f"message on unaccepted presentation context {message.context_id}")

        match message.command_field:
            case CommandField.C_ECHO_RQ:
                response = echo_response(message.command.integer("MessageID") or 0)
            case CommandField.C_STORE_RQ:
                exchange = CStoreExchange.from_request(message.command)
                status = self._store(service, meta, exchange, ctx.transfer_syntax, message.data or b"")
                response = exchange.response(status)
            case other:
                raise DimseError(f"unsupported DIMSE command {other:#06x}")

        for pdu in fragment(ctx.id, encode_command(response), True, assoc.max_pdu_length):
            send_pdu(sock, pdu)

    @staticmethod
    def _store(
        service: "StoreServer", meta: AssociationMeta, exchange: CStoreExchange, transfer_syntax: str, data: bytes
    ) -> int:
        try:
            dataset = parse_dataset(data, transfer_syntax)
        except DicomError as e:
            logger.warning("cannot decode %s from %s: %s", exchange.affected_sop_instance, meta.calling_ae, e)
            return Status.CANNOT_UNDERSTAND

        file = DicomFile(
            file_meta=build_file_meta(
                exchange.affected_sop_class, exchange.affected_sop_instance, transfer_syntax, meta.calling_ae
            ),
            dataset=dataset,
            transfer_syntax=transfer_syntax,
        )
        try:
            status = service.handler(meta, file)
        except Exception:
            logger.exception("store handler failed for %s", exchange.affected_sop_instance)
            return Status.CANNOT_UNDERSTAND
        if not isinstance(status, int) or not 0 <= status <= 0xFFFF:
            logger.error("store handler returned %r, not a DIMSE status", status)
            return Status.CANNOT_UNDERSTAND
        return status


class StoreServer(TcpService):
    name = "dicom scp"

    def __init__(self, config: ListenConfig, handler: StoreHandler):
        self.config = config
        self.local = config.local()
        self.handler = handler
        super().__init__(config.host, config.port, _AssociationHandler)


def scp_serve(config: ListenConfig, handler: StoreHandler) -> StoreServer:
    return StoreServer(config, handler).start()
