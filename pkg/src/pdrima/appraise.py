"""Signed reference measurement list (RML) and appraisal."""

from __future__ import annotations

import enum
import uuid as uuidlib
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import canon
from .canon import DecodeError, KeyPair, Reader, Writer

RML_MAGIC = b"PDRL"
RML_VERSION = 0x01


class DuplicateUuid(ValueError):
    pass


class SignatureInvalid(ValueError):
    pass


class AppraisalResult(enum.IntEnum):
    """Stored in SML event data; 0 is reserved for "not appraised"."""

    TRUSTED = 1
    UNTRUSTED_HASH_MISMATCH = 2
    UNTRUSTED_ROLLBACK = 3
    UNKNOWN_COMPONENT = 4

    @property
    def trusted(self) -> bool:
        return self == AppraisalResult.TRUSTED


@dataclass(frozen=True)
class RmlEntry:
    uuid: bytes
    golden_hash: bytes
    min_version: int = 0

    def __post_init__(self) -> None:
        canon.check_uuid(self.uuid)
        canon.check_digest(self.golden_hash, "golden hash")

    def write(self, w: Writer) -> None:
        w.uuid(self.uuid).digest(self.golden_hash).u32(self.min_version)

    @classmethod
    def read(cls, r: Reader) -> "RmlEntry":
        return cls(r.uuid(), r.digest(), r.u32())


@dataclass(frozen=True)
class Rml:
    entries: tuple[RmlEntry, ...]
    signature: bytes

    def __post_init__(self) -> None:
        _check_unique(self.entries)
        object.__setattr__(self, "_index", {e.uuid: e for e in self.entries})

    def lookup(self, uuid: bytes) -> RmlEntry | None:
        return self._index.get(uuid)  # type: ignore[attr-defined]


def _check_unique(entries: Iterable[RmlEntry]) -> None:
    seen: set[bytes] = set()
    for entry in entries:
        if entry.uuid in seen:
            raise DuplicateUuid(str(uuidlib.UUID(bytes=entry.uuid)))
        seen.add(entry.uuid)


def _signed_body(entries: Sequence[RmlEntry]) -> bytes:
    w = Writer().raw(RML_MAGIC).u8(RML_VERSION)
    w.list(entries, lambda e: e.write(w))
    return w.getvalue()


def build_signed_rml(entries: Sequence[RmlEntry], sk_rml: KeyPair) -> bytes:
    _check_unique(entries)
    body = _signed_body(entries)
    return body + canon.sign(sk_rml, body)


def load_rml(data: bytes, pk_rml: bytes) -> Rml:
    """Parse an RML file. The signature is checked before the entry list is
    decoded, so any change to the signed region reports SignatureInvalid."""
    data = bytes(data)
    if len(data) < 5 or data[:4] != RML_MAGIC:
        raise DecodeError("not an RML file (bad magic)")
    if data[4] != RML_VERSION:
        raise DecodeError(f"unsupported RML version {data[4]}")
    if len(data) < 5 + 4 + canon.SIGNATURE_SIZE:
        raise DecodeError("truncated RML file")
    body, sig = data[: -canon.SIGNATURE_SIZE], data[-canon.SIGNATURE_SIZE :]
    if not canon.verify(pk_rml, body, sig):
        raise SignatureInvalid("RML signature does not verify")
    r = Reader(body)
    r.raw(5)
    entries = r.list(lambda: RmlEntry.read(r))
    r.done()
    try:
        return Rml(tuple(entries), sig)
    except DuplicateUuid as exc:
        raise DecodeError(f"duplicate uuid in RML: {exc}") from None


def appraise(rml: Rml, uuid: bytes, measured: bytes, version: int) -> AppraisalResult:
    entry = rml.lookup(uuid)
    if entry is None:
        return AppraisalResult.UNKNOWN_COMPONENT
    # rollback first: a downgraded but intact binary gets the specific diagnosis
    if version < entry.min_version:
        return AppraisalResult.UNTRUSTED_ROLLBACK
    if measured != entry.golden_hash:
        return AppraisalResult.UNTRUSTED_HASH_MISMATCH
    return AppraisalResult.TRUSTED


def entries_from_json(data: list) -> list[RmlEntry]:
    return [
        RmlEntry(
            uuidlib.UUID(item["uuid"]).bytes,
            bytes.fromhex(item["golden_hash"]),
            int(item.get("min_version", 0)),
        )
        for item in data
    ]


def entry_to_json(entry: RmlEntry) -> dict:
    return {
        "uuid": str(uuidlib.UUID(bytes=entry.uuid)),
        "golden_hash": entry.golden_hash.hex(),
        "min_version": entry.min_version,
    }
