"""Threaded TCP service plumbing shared by the DICOM, MLLP and admin listeners."""

import logging
import socketserver
import threading

from lib.net.errors import BindFailed

logger = logging.getLogger(__name__)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    block_on_close = False

    def __init__(self, address, handler_class, owner: "TcpService"):
        self.owner = owner
        super().__init__(address, handler_class)


class TcpService:
    """Owns a listening socket and a serve_forever thread; one thread per connection."""

    name = "service"

    def __init__(self, host: str, port: int, handler_class: type[socketserver.BaseRequestHandler]):
        try:
            self._server = _Server((host, port), handler_class, self)
        except OSError as e:
            raise BindFailed(f"{self.name} cannot bind {host}:{port}: {e}") from e
        self._thread: threading.Thread | None = None

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, name=f"{self.name}:{self.port}", daemon=True)
        self._thread.start()
        logger.info("%s listening on %s:%d", self.name, self.host, self.port)
        return self

    def shutdown(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self._server.server_close()

    def __enter__(self):
        return self if self._thread is not None else self.start()

    def __exit__(self, *exc):
        self.shutdown()
