"""Canonical byte encoding and the hash/signature primitives.

Everything that gets hashed, signed, written to disk or sent over the wire
goes through :class:`Writer` / :class:`Reader`, so two implementations that
follow the same field order produce identical bytes.

Encoding rules:

* unsigned integers: fixed width, big-endian
* byte strings: u32 length prefix + raw bytes (text is UTF-8 then the same)
* lists: u32 count + concatenated elements
* UUIDs: 16 raw bytes, digests: 32 raw bytes, no prefix
* optionals: one tag byte (0 absent, 1 present) + value
"""

from __future__ import annotations

import enum
import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Protocol, TypeVar

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32
SECRET_KEY_SIZE = 32
UUID_SIZE = 16

HASH_ALG_SHA256 = 0x01

ZERO_DIGEST = bytes(DIGEST_SIZE)

T = TypeVar("T")


class DecodeError(ValueError):
    """Raised on truncated, trailing or out-of-domain bytes."""


class MissingSecretKey(ValueError):
    pass


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors H(.)
    return hashlib.sha256(data).digest()


def check_digest(value: bytes, what: str = "digest") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{what} must be {DIGEST_SIZE} bytes")
    return bytes(value)


def check_uuid(value: bytes, what: str = "uuid") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != UUID_SIZE:
        raise ValueError(f"{what} must be {UUID_SIZE} bytes")
    return bytes(value)


# ---------------------------------------------------------------------------
# Keys and signatures
# ---------------------------------------------------------------------------


class KeyRole(str, enum.Enum):
    ATTEST = "attest"
    RML = "rml"
    TTP = "ttp"
    VERIFIER = "verifier"
    DEVICE = "device"


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 key pair. ``secret`` is the 32-byte seed, or None for a
    verification-only key."""

    role: KeyRole
    public: bytes
    secret: Optional[bytes] = None

    def __post_init__(self) -> None:
        if len(self.public) != PUBLIC_KEY_SIZE:
            raise ValueError("public key must be 32 bytes")
        if self.secret is not None and len(self.secret) != SECRET_KEY_SIZE:
            raise ValueError("secret key must be 32 bytes")

    @classmethod
    def from_secret(cls, role: KeyRole | str, secret: bytes) -> "KeyPair":
        priv = Ed25519PrivateKey.from_private_bytes(bytes(secret))
        public = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(KeyRole(role), public, bytes(secret))

    @classmethod
    def generate(cls, role: KeyRole | str, seed: Optional[int] = None) -> "KeyPair":
        """Fresh key pair; with ``seed`` the result is reproducible (tests only)."""
        role = KeyRole(role)
        if seed is None:
            secret = os.urandom(SECRET_KEY_SIZE)
        else:
            secret = hash(b"pdrima-keygen\x00" + role.value.encode() + b"\x00" + str(seed).encode())
        return cls.from_secret(role, secret)

    def public_only(self) -> "KeyPair":
        return KeyPair(self.role, self.public)


def sign(key: KeyPair, message: bytes) -> bytes:
    if key.secret is None:
        raise MissingSecretKey(f"{key.role.value} key has no secret material")
    return Ed25519PrivateKey.from_private_bytes(key.secret).sign(bytes(message))


def verify(public: bytes, message: bytes, sig: bytes) -> bool:
    if len(public) != PUBLIC_KEY_SIZE or len(sig) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(sig), bytes(message))
    except (InvalidSignature, ValueError):
        return False
    return True


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------


class Writer:
    def __init__(self) -> None:
        self._buf = bytearray()

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def raw(self, data: bytes) -> "Writer":
        self._buf += data
        return self

    def u8(self, value: int) -> "Writer":
        self._buf += struct.pack(">B", value)
        return self

    def u16(self, value: int) -> "Writer":
        self._buf += struct.pack(">H", value)
        return self

    def u32(self, value: int) -> "Writer":
        self._buf += struct.pack(">I", value)
        return self

    def u64(self, value: int) -> "Writer":
        self._buf += struct.pack(">Q", value)
        return self

    def bytes(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._buf += data
        return self

    def text(self, value: str) -> "Writer":
        return self.bytes(value.encode("utf-8"))

    def uuid(self, value: bytes) -> "Writer":
        self._buf += check_uuid(value)
        return self

    def digest(self, value: bytes) -> "Writer":
        self._buf += check_digest(value)
        return self

    def optional(self, value: Optional[T], put: Callable[[T], object]) -> "Writer":
        if value is None:
            self.u8(0)
        else:
            self.u8(1)
            put(value)
        return self

    def list(self, items: Iterable[T], put: Callable[[T], object]) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for item in items:
            put(item)
        return self


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(bytes(data))
        self._pos = 0

    @property
    def pos(self) -> int:
        return self._pos

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def raw(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError(f"truncated: need {n} bytes at offset {self._pos}")
        out = bytes(self._data[self._pos : self._pos + n])
        self._pos += n
        return out

    def u8(self) -> int:
        return self.raw(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.raw(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.raw(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.raw(8))[0]

    def bytes(self) -> bytes:
        return self.raw(self.u32())

    def text(self) -> str:
        try:
            return self.bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8: {exc}") from None

    def uuid(self) -> bytes:
        return self.raw(UUID_SIZE)

    def digest(self) -> bytes:
        return self.raw(DIGEST_SIZE)

    def optional(self, get: Callable[[], T]) -> Optional[T]:
        tag = self.u8()
        if tag == 0:
            return None
        if tag == 1:
            return get()
        raise DecodeError(f"bad optional tag {tag}")

    def list(self, get: Callable[[], T]) -> list[T]:
        count = self.u32()
        # every element takes at least one byte; reject absurd counts early
        if count > self.remaining():
            raise DecodeError(f"list count {count} exceeds remaining input")
        return [get() for _ in range(count)]

    def enum(self, cls: type[enum.IntEnum], width: int = 1):
        value = self.u8() if width == 1 else self.u32()
        try:
            return cls(value)
        except ValueError:
            raise DecodeError(f"unknown {cls.__name__} code {value}") from None

    def done(self) -> None:
        if self.remaining():
            raise DecodeError(f"{self.remaining()} trailing bytes")


class Encodable(Protocol):
    def write(self, w: Writer) -> None: ...


def encode(value: Encodable) -> bytes:
    w = Writer()
    value.write(w)
    return w.getvalue()


def decode(cls: type[T], data: bytes) -> T:
    """Decode a complete value of ``cls``; trailing bytes are an error."""
    r = Reader(data)
    value = cls.read(r)  # type: ignore[attr-defined]
    r.done()
    return value
