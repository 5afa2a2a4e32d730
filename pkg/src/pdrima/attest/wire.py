"""Length-prefixed frames: ``"PDRA" | version | type | u32 length | payload``."""

from __future__ import annotations

import enum
import socket
import struct

MAGIC = b"PDRA"
VERSION = 0x01
HEADER = struct.Struct(">4sBBI")
HEADER_SIZE = HEADER.size  # 10
MAX_PAYLOAD = 64 * 1024 * 1024
DEFAULT_PORT = 7730


class MsgType(enum.IntEnum):
    CHALLENGE = 0x01
    RESPONSE = 0x02
    ERROR = 0x03


class FramingError(ValueError):
    """Bad magic/version/type, oversized or truncated frame."""


def encode_frame(msg_type: MsgType, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FramingError(f"payload of {len(payload)} bytes exceeds limit")
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def parse_header(header: bytes) -> tuple[MsgType, int]:
    if len(header) != HEADER_SIZE:
        raise FramingError("truncated frame header")
    magic, version, type_byte, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FramingError(f"unsupported protocol version {version}")
    try:
        msg_type = MsgType(type_byte)
    except ValueError:
        raise FramingError(f"unknown message type {type_byte:#x}") from None
    if length > MAX_PAYLOAD:
        raise FramingError(f"declared payload length {length} exceeds limit")
    return msg_type, length


def decode_frame(data: bytes) -> tuple[MsgType, bytes]:
    """Decode exactly one complete frame."""
    msg_type, length = parse_header(data[:HEADER_SIZE])
    payload = data[HEADER_SIZE:]
    if len(payload) != length:
        raise FramingError(f"payload is {len(payload)} bytes, header says {length}")
    return msg_type, payload


def recv_exactly(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 16))
        if not chunk:
            raise FramingError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[MsgType, bytes]:
    msg_type, length = parse_header(recv_exactly(sock, HEADER_SIZE))
    return msg_type, recv_exactly(sock, length)


def send_frame(sock: socket.socket, msg_type: MsgType, payload: bytes) -> None:
    sock.sendall(encode_frame(msg_type, payload))
