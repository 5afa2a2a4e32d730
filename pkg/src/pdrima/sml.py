"""Security Measurement Log: hash-chained entries plus the vPCR bank.

Each entry's header digest covers ``(vpcr_index, event_type, prev_digest,
event_data, result)``; the header digest is also what gets extended into
the entry's vPCR, so the four registers summarize the whole chain.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from . import canon
from .appraise import AppraisalResult
from .canon import DecodeError, Reader, Writer
from .measure import FailureResponse, ObjectKind, RemeasureStatus, SyscallRecord
from .policy import EventType

SML_MAGIC = b"PDSM"
SML_VERSION = 0x01
NUM_VPCRS = 4
DEFAULT_CAPACITY = 4096

VPCR_KERNEL = 0
VPCR_STATIC = 1
VPCR_USER_TA = 2
VPCR_DYNAMIC = 3

_KIND_VPCR = {
    ObjectKind.KERNEL: VPCR_KERNEL,
    ObjectKind.STATIC_COMPONENT: VPCR_STATIC,
    ObjectKind.USER_TA: VPCR_USER_TA,
}


def vpcr_for_kind(kind: ObjectKind) -> int:
    return _KIND_VPCR[kind]


class CapacityExceeded(RuntimeError):
    pass


class ChainBroken(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


# ---------------------------------------------------------------------------
# Event data carried inside entries
# ---------------------------------------------------------------------------


class EventDataTag(enum.IntEnum):
    STATIC = 1
    DYNAMIC = 2
    REMEASURE = 3


@dataclass(frozen=True)
class StaticEventData:
    uuid: bytes
    kind: ObjectKind
    version: int
    measured: bytes
    appraisal: Optional[AppraisalResult] = None  # None: not appraised

    def write(self, w: Writer) -> None:
        w.u8(EventDataTag.STATIC).uuid(self.uuid).u8(self.kind).u32(self.version)
        w.digest(self.measured).u8(self.appraisal or 0)


@dataclass(frozen=True)
class DynamicEventData:
    record: SyscallRecord
    measured: bytes

    def write(self, w: Writer) -> None:
        w.u8(EventDataTag.DYNAMIC)
        self.record.write(w)
        w.digest(self.measured)


@dataclass(frozen=True)
class RemeasureEventData:
    uuid: bytes
    kind: ObjectKind
    status: RemeasureStatus
    response: Optional[FailureResponse]
    timestamp: int
    measured: bytes

    @property
    def failed(self) -> bool:
        return self.status == RemeasureStatus.FAILED

    def write(self, w: Writer) -> None:
        w.u8(EventDataTag.REMEASURE).uuid(self.uuid).u8(self.kind).u8(self.status)
        w.u8(self.response or 0).u64(self.timestamp).digest(self.measured)


EventData = Union[StaticEventData, DynamicEventData, RemeasureEventData]


def parse_event_data(data: bytes) -> EventData:
    r = Reader(data)
    tag = r.enum(EventDataTag)
    out: EventData
    if tag == EventDataTag.STATIC:
        uuid, kind, version, measured = r.uuid(), r.enum(ObjectKind), r.u32(), r.digest()
        code = r.u8()
        appraisal = None if code == 0 else _enum_or_fail(AppraisalResult, code)
        out = StaticEventData(uuid, kind, version, measured, appraisal)
    elif tag == EventDataTag.DYNAMIC:
        out = DynamicEventData(SyscallRecord.read(r), r.digest())
    else:
        uuid, kind = r.uuid(), r.enum(ObjectKind)
        status = r.enum(RemeasureStatus)
        code = r.u8()
        response = None if code == 0 else _enum_or_fail(FailureResponse, code)
        out = RemeasureEventData(uuid, kind, status, response, r.u64(), r.digest())
    r.done()
    return out


def _enum_or_fail(cls, value):
    try:
        return cls(value)
    except ValueError:
        raise DecodeError(f"unknown {cls.__name__} code {value}") from None


# ---------------------------------------------------------------------------
# Entries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeHeader:
    vpcr_index: int
    event_type: EventType
    digest: bytes
    prev_digest: bytes

    def write(self, w: Writer) -> None:
        w.u8(self.vpcr_index).u8(self.event_type).digest(self.digest).digest(self.prev_digest)

    @classmethod
    def read(cls, r: Reader) -> "SeHeader":
        index = r.u8()
        if index >= NUM_VPCRS:
            raise DecodeError(f"vPCR index {index} out of range")
        return cls(index, r.enum(EventType), r.digest(), r.digest())


@dataclass(frozen=True)
class SmlEntry:
    header: SeHeader
    event_data: bytes
    size: int
    result: bytes

    def write(self, w: Writer) -> None:
        self.header.write(w)
        w.bytes(self.event_data).u32(self.size).digest(self.result)

    @classmethod
    def read(cls, r: Reader) -> "SmlEntry":
        return cls(SeHeader.read(r), r.bytes(), r.u32(), r.digest())

    def parsed(self) -> EventData:
        return parse_event_data(self.event_data)


def entry_digest(
    vpcr_index: int, event_type: EventType, prev_digest: bytes, event_data: bytes, result: bytes
) -> bytes:
    w = Writer().u8(vpcr_index).u8(event_type).digest(prev_digest)
    w.bytes(event_data).digest(result)
    return canon.hash(w.getvalue())


def extend(register: bytes, m: bytes) -> bytes:
    return canon.hash(register + m)


class VpcrBank:
    def __init__(self, registers: Optional[Sequence[bytes]] = None) -> None:
        if registers is None:
            registers = [canon.ZERO_DIGEST] * NUM_VPCRS
        if len(registers) != NUM_VPCRS:
            raise ValueError("a vPCR bank has exactly 4 registers")
        self._regs = [canon.check_digest(r) for r in registers]

    @property
    def registers(self) -> tuple[bytes, ...]:
        return tuple(self._regs)

    def __getitem__(self, i: int) -> bytes:
        return self._regs[i]

    def __eq__(self, other: object) -> bool:
        if isinstance(other, VpcrBank):
            return self._regs == other._regs
        return NotImplemented

    def __repr__(self) -> str:
        return f"VpcrBank({[r.hex()[:16] for r in self._regs]})"

    def copy(self) -> "VpcrBank":
        return VpcrBank(self._regs)


def extend_vpcr(bank: VpcrBank, i: int, m: bytes) -> bytes:
    if not 0 <= i < NUM_VPCRS:
        raise IndexOutOfRange(f"vPCR index {i} out of range")
    bank._regs[i] = extend(bank._regs[i], canon.check_digest(m))
    return bank._regs[i]


@dataclass(frozen=True)
class SmlMetadata:
    format_version: int
    hash_alg_id: int
    entry_count: int
    head_digest: bytes
    capacity: int


@dataclass(frozen=True)
class SmlSnapshot:
    """Point-in-time copy of the log and bank, taken between appends."""

    entries: tuple[SmlEntry, ...]
    vpcrs: tuple[bytes, ...]

    @property
    def entry_count(self) -> int:
        return len(self.entries)

    @property
    def head_digest(self) -> bytes:
        return self.entries[-1].header.digest if self.entries else canon.ZERO_DIGEST


class Sml:
    """Append-only log; the only mutator is :meth:`append`."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: list[SmlEntry] = []
        self._lock = threading.Lock()

    @property
    def entries(self) -> tuple[SmlEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entry_count(self) -> int:
        return len(self._entries)

    @property
    def head_digest(self) -> bytes:
        return self._entries[-1].header.digest if self._entries else canon.ZERO_DIGEST

    @property
    def metadata(self) -> SmlMetadata:
        return SmlMetadata(
            SML_VERSION, canon.HASH_ALG_SHA256, self.entry_count, self.head_digest, self.capacity
        )

    def append(
        self,
        bank: VpcrBank,
        vpcr_index: int,
        event_type: EventType,
        event_data: Union[bytes, EventData],
        result: bytes,
    ) -> SmlEntry:
        if not 0 <= vpcr_index < NUM_VPCRS:
            raise IndexOutOfRange(f"vPCR index {vpcr_index} out of range")
        if not isinstance(event_data, (bytes, bytearray)):
            event_data = canon.encode(event_data)
        with self._lock:
            if len(self._entries) >= self.capacity:
                raise CapacityExceeded(f"SML full ({self.capacity} entries)")
            prev = self.head_digest
            digest = entry_digest(vpcr_index, event_type, prev, event_data, result)
            entry = SmlEntry(
                SeHeader(vpcr_index, EventType(event_type), digest, prev),
                bytes(event_data),
                len(event_data),
                canon.check_digest(result, "result"),
            )
            self._entries.append(entry)
            extend_vpcr(bank, vpcr_index, digest)
        return entry

    def snapshot(self, bank: VpcrBank) -> SmlSnapshot:
        with self._lock:
            return SmlSnapshot(tuple(self._entries), bank.registers)

    def dump(self) -> bytes:
        with self._lock:
            return dump_entries(self._entries, self.capacity)


def dump_entries(entries: Sequence[SmlEntry], capacity: int = DEFAULT_CAPACITY) -> bytes:
    head = entries[-1].header.digest if entries else canon.ZERO_DIGEST
    w = Writer().raw(SML_MAGIC).u8(SML_VERSION)
    w.u8(canon.HASH_ALG_SHA256).u32(len(entries)).digest(head).u32(capacity)
    for entry in entries:
        entry.write(w)
    return w.getvalue()


def parse_dump(data: bytes) -> tuple[SmlMetadata, list[SmlEntry]]:
    r = Reader(data)
    if r.remaining() < 5 or r.raw(4) != SML_MAGIC:
        raise DecodeError("not an SML dump (bad magic)")
    version = r.u8()
    if version != SML_VERSION:
        raise DecodeError(f"unsupported SML version {version}")
    alg = r.u8()
    if alg != canon.HASH_ALG_SHA256:
        raise DecodeError(f"unsupported hash algorithm id {alg}")
    count, head, capacity = r.u32(), r.digest(), r.u32()
    if count > r.remaining():
        raise DecodeError(f"entry count {count} exceeds input")
    entries = [SmlEntry.read(r) for _ in range(count)]
    r.done()
    return SmlMetadata(version, alg, count, head, capacity), entries


# ---------------------------------------------------------------------------
# Verifier-side checks
# ---------------------------------------------------------------------------


class BreakReason(enum.Enum):
    PREV_MISMATCH = "PrevMismatch"
    DIGEST_MISMATCH = "DigestMismatch"
    SIZE_MISMATCH = "SizeMismatch"


@dataclass(frozen=True)
class ChainStatus:
    broken_at: Optional[int] = None
    reason: Optional[BreakReason] = None

    @property
    def ok(self) -> bool:
        return self.broken_at is None

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "Ok" if self.ok else f"BrokenAt({self.broken_at}, {self.reason.value})"


CHAIN_OK = ChainStatus()


def verify_chain(entries: Sequence[SmlEntry]) -> ChainStatus:
    prev = canon.ZERO_DIGEST
    for i, entry in enumerate(entries):
        h = entry.header
        if h.prev_digest != prev:
            return ChainStatus(i, BreakReason.PREV_MISMATCH)
        if entry.size != len(entry.event_data):
            return ChainStatus(i, BreakReason.SIZE_MISMATCH)
        expect = entry_digest(h.vpcr_index, h.event_type, h.prev_digest, entry.event_data, entry.result)
        if expect != h.digest:
            return ChainStatus(i, BreakReason.DIGEST_MISMATCH)
        prev = h.digest
    return CHAIN_OK


def replay_vpcrs(entries: Sequence[SmlEntry]) -> tuple[bytes, ...]:
    status = verify_chain(entries)
    if not status.ok:
        raise ChainBroken(str(status))
    regs = [canon.ZERO_DIGEST] * NUM_VPCRS
    for entry in entries:
        i = entry.header.vpcr_index
        regs[i] = extend(regs[i], entry.header.digest)
    return tuple(regs)


def select_entries(
    entries: Iterable[SmlEntry],
    *,
    vpcr_index: Optional[int] = None,
    uuid: Optional[bytes] = None,
    event_type: Optional[EventType] = None,
) -> list[SmlEntry]:
    """Order-preserving filter; all given criteria must hold."""
    out = []
    for entry in entries:
        if vpcr_index is not None and entry.header.vpcr_index != vpcr_index:
            continue
        if event_type is not None and entry.header.event_type != event_type:
            continue
        if uuid is not None and uuid not in _entry_uuids(entry):
            continue
        out.append(entry)
    return out


def _entry_uuids(entry: SmlEntry) -> tuple[bytes, ...]:
    try:
        data = entry.parsed()
    except DecodeError:
        return ()
    if isinstance(data, DynamicEventData):
        rec = data.record
        return tuple(u for u in (rec.subject_uuid, rec.caller_uuid) if u is not None)
    return (data.uuid,)
