"""TCP transport: the device-side responder service and the verifier client."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Union

from ..canon import DecodeError
from .evidence import Challenge, Verdict, split_response
from .wire import DEFAULT_PORT, FramingError, MsgType, read_frame, send_frame

log = logging.getLogger(__name__)

# maps a challenge nonce to a response payload (encoded AE followed by the quote)
Responder = Callable[[bytes], bytes]


class AttestTimeout(TimeoutError):
    pass


class TransportError(ConnectionError):
    pass


class MalformedResponse(ValueError):
    pass


class Validator(Protocol):
    def validate(self, ae: bytes, quote: bytes, expected_nonce: bytes) -> Verdict: ...


def parse_endpoint(endpoint: Union[str, tuple[str, int]], default_host: str = "127.0.0.1") -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint
    host, sep, port = endpoint.rpartition(":")
    if not sep:
        return endpoint or default_host, DEFAULT_PORT
    return host or default_host, int(port)


class _Handler(socketserver.BaseRequestHandler):
    server: "AttestationServer"

    def handle(self) -> None:
        sock: socket.socket = self.request
        sock.settimeout(self.server.io_timeout)
        try:
            msg_type, payload = read_frame(sock)
        except (FramingError, OSError) as exc:
            log.warning("dropping session from %s: %s", self.client_address, exc)
            return
        if msg_type != MsgType.CHALLENGE or len(payload) != 32:
            send_frame(sock, MsgType.ERROR, b"expected a 32-byte challenge")
            return
        try:
            response = self.server.responder(payload)
        except Exception as exc:  # reported to the peer, never fatal to the service
            log.exception("responder failed")
            send_frame(sock, MsgType.ERROR, str(exc).encode("utf-8", "replace"))
            return
        send_frame(sock, MsgType.RESPONSE, response)


class AttestationServer(socketserver.ThreadingTCPServer):
    """One challenge/response exchange per connection."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], responder: Responder, io_timeout: float = 10.0) -> None:
        self.responder = responder
        self.io_timeout = io_timeout
        self._thread: Optional[threading.Thread] = None
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def start(self) -> "AttestationServer":
        self._thread = threading.Thread(target=self.serve_forever, name="pdrima-attest", daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "AttestationServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class ChallengeResult:
    verdict: Verdict
    nonce: bytes
    evidence: bytes
    quote: bytes


def fetch_evidence(
    endpoint: Union[str, tuple[str, int]], nonce: bytes, timeout: float = 5.0
) -> tuple[bytes, bytes]:
    """Send one challenge and return the (encoded AE, quote) pair."""
    addr = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection(addr, timeout=timeout)
    except OSError as exc:
        # refused, unroutable or slow to accept: no device answered
        raise AttestTimeout(f"{addr[0]}:{addr[1]} unreachable: {exc}") from exc
    try:
        with sock:
            sock.settimeout(timeout)
            send_frame(sock, MsgType.CHALLENGE, nonce)
            msg_type, payload = read_frame(sock)
    except socket.timeout as exc:
        raise AttestTimeout(f"no response from {addr[0]}:{addr[1]} within {timeout}s") from exc
    except FramingError as exc:
        raise MalformedResponse(str(exc)) from exc
    except OSError as exc:
        raise TransportError(f"{addr[0]}:{addr[1]}: {exc}") from exc
    if msg_type == MsgType.ERROR:
        raise TransportError(f"device error: {payload.decode('utf-8', 'replace')}")
    if msg_type != MsgType.RESPONSE:
        raise MalformedResponse(f"unexpected message type {msg_type.name}")
    try:
        return split_response(payload)
    except DecodeError as exc:
        raise MalformedResponse(str(exc)) from exc


def verifier_challenge(
    endpoint: Union[str, tuple[str, int]],
    ttp: Validator,
    timeout: float = 5.0,
    challenge: Optional[Challenge] = None,
) -> ChallengeResult:
    """Challenge a device and hand its evidence to the TTP unchanged.

    The verifier holds no reference values; the verdict is the TTP's.
    """
    challenge = challenge or Challenge.fresh()
    ae, quote = fetch_evidence(endpoint, challenge.nonce, timeout)
    verdict = ttp.validate(ae, quote, challenge.nonce)
    return ChallengeResult(verdict, challenge.nonce, ae, quote)
