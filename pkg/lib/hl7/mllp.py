"""Minimal Lower Layer Protocol: framing, a one-shot client and a threaded listener."""

import logging
import socket
import socketserver
from typing import Callable

from lib.hl7.errors import BadFrame, Hl7ConnectionRefused, Hl7Error, Hl7Timeout
from lib.hl7.message import Hl7Message, encode_message, parse_message
from lib.hl7.orm import AckCode, ack_code
from lib.net.service import TcpService

logger = logging.getLogger(__name__)

START_BLOCK = b"\x0b"
END_BLOCK = b"\x1c\x0d"
MAX_FRAME = 4 * 1024 * 1024


def mllp_frame(payload: bytes) -> bytes:
    return START_BLOCK + payload + END_BLOCK


def mllp_unframe(frame: bytes) -> bytes:
    if not frame.startswith(START_BLOCK):
        raise BadFrame("frame does not start with 0x0B")
    if not frame.endswith(END_BLOCK) or len(frame) < 3:
        raise BadFrame("frame does not end with 0x1C 0x0D")
    return frame[1:-2]


class FrameReader:
    """Buffers socket reads and yields whole frames."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buffer = b""

    def read_frame(self) -> bytes | None:
        """Next payload, or None once the peer has closed cleanly between frames."""
        while END_BLOCK not in self.buffer:
            if len(self.buffer) > MAX_FRAME:
                raise BadFrame(f"no frame end within {MAX_FRAME} bytes")
            chunk = self.sock.recv(65536)
            if not chunk:
                if self.buffer.strip():
                    raise BadFrame("connection closed inside a frame")
                return None
            self.buffer += chunk
        end = self.buffer.index(END_BLOCK) + len(END_BLOCK)
        frame, self.buffer = self.buffer[:end], self.buffer[end:]
        return mllp_unframe(frame.lstrip(b"\r\n"))


def mllp_send(endpoint: tuple[str, int], msg: Hl7Message, timeout: float) -> AckCode:
    """Send one message and wait for its acknowledgement; TIMEOUT when none arrives in time."""
    try:
        sock = socket.create_connection(endpoint, timeout=timeout)
    except ConnectionRefusedError as e:
        raise Hl7ConnectionRefused(f"HL7 peer {endpoint[0]}:{endpoint[1]} refused the connection") from e
    except (socket.timeout, TimeoutError) as e:
        raise Hl7Timeout(f"HL7 peer {endpoint[0]}:{endpoint[1]} did not accept within {timeout}s") from e
    except OSError as e:
        raise Hl7ConnectionRefused(f"HL7 peer {endpoint[0]}:{endpoint[1]} unreachable: {e}") from e

    with sock:
        sock.settimeout(timeout)
        try:
            sock.sendall(mllp_frame(encode_message(msg)))
            payload = FrameReader(sock).read_frame()
        except (socket.timeout, TimeoutError):
            logger.warning("no acknowledgement from %s:%d within %ss", endpoint[0], endpoint[1], timeout)
            return AckCode.TIMEOUT
        except ConnectionError as e:
            raise Hl7ConnectionRefused(f"HL7 peer {endpoint[0]}:{endpoint[1]} dropped the connection: {e}") from e
    if payload is None:
        raise BadFrame("peer closed without acknowledging")
    return ack_code(parse_message(payload))


Responder = Callable[[Hl7Message], Hl7Message | None]


class _MllpHandler(socketserver.BaseRequestHandler):
    def handle(self):
        owner: MllpServer = self.server.owner
        peer = "%s:%d" % self.client_address[:2]
        self.request.settimeout(owner.idle_timeout_s)
        reader = FrameReader(self.request)
        try:
            while True:
                payload = reader.read_frame()
                if payload is None:
                    return
                try:
                    msg = parse_message(payload)
                except Hl7Error as e:
                    logger.warning("%s sent an unreadable message: %s", peer, e)
                    continue
                reply = owner.responder(msg)
                if reply is not None:
                    self.request.sendall(mllp_frame(encode_message(reply)))
        except BadFrame as e:
            logger.warning("dropping MLLP connection from %s: %s", peer, e)
        except (socket.timeout, TimeoutError):
            logger.debug("MLLP connection from %s idle, closing", peer)
        except ConnectionError as e:
            logger.debug("MLLP connection from %s lost: %s", peer, e)


class MllpServer(TcpService):
    name = "mllp listener"

    def __init__(self, host: str, port: int, responder: Responder, idle_timeout_s: float = 60):
        self.responder = responder
        self.idle_timeout_s = idle_timeout_s
        super().__init__(host, port, _MllpHandler)
