"""Static segmented measurement, syscall digests and timed re-measurement."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import canon
from .canon import Reader, Writer
from .policy import Action, EventContext, EventType, PolicySet, match_rule

PROPERTIES_LABEL = "props"


class EmptySegmentList(ValueError):
    pass


class UnknownTarget(KeyError):
    pass


class ObjectKind(enum.IntEnum):
    KERNEL = 1
    STATIC_COMPONENT = 2
    USER_TA = 3

    @property
    def load_event(self) -> EventType:
        return _LOAD_EVENT[self]


_LOAD_EVENT = {
    ObjectKind.KERNEL: EventType.KERNEL_LOAD,
    ObjectKind.STATIC_COMPONENT: EventType.STATIC_COMPONENT_LOAD,
    ObjectKind.USER_TA: EventType.USER_TA_LOAD,
}


class FailureResponse(enum.IntEnum):
    BLOCK = 1
    ALERT = 2


@dataclass(frozen=True)
class Segment:
    label: str
    data: bytes = b""

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("segment label must be non-empty")


@dataclass
class MeasurableObject:
    uuid: bytes
    kind: ObjectKind
    version: int = 0
    segments: list[Segment] = field(default_factory=list)
    properties: Optional[dict[str, str]] = None

    @property
    def size(self) -> int:
        return sum(len(s.data) for s in self.segments)

    def properties_segment(self) -> Segment:
        w = Writer()
        w.list(sorted((self.properties or {}).items()), lambda kv: (w.text(kv[0]), w.text(kv[1])))
        return Segment(PROPERTIES_LABEL, w.getvalue())


@dataclass(frozen=True)
class SyscallRecord:
    """One intercepted call: metadata (D1), parameters (D2), result (D3)."""

    event: EventType
    timestamp: int
    caller_uuid: Optional[bytes] = None
    subject_uuid: Optional[bytes] = None
    syscall_number: Optional[int] = None
    parameters: bytes = b""
    result: int = 0

    def write_metadata(self, w: Writer) -> None:
        w.u8(self.event)
        w.optional(self.caller_uuid, w.uuid)
        w.optional(self.subject_uuid, w.uuid)
        w.optional(self.syscall_number, w.u32)
        w.u64(self.timestamp)

    def write(self, w: Writer) -> None:
        self.write_metadata(w)
        w.bytes(self.parameters)
        w.u32(self.result)

    @classmethod
    def read(cls, r: Reader) -> "SyscallRecord":
        event = r.enum(EventType)
        caller = r.optional(r.uuid)
        subject = r.optional(r.uuid)
        number = r.optional(r.u32)
        timestamp = r.u64()
        params = r.bytes()
        result = r.u32()
        return cls(event, timestamp, caller, subject, number, params, result)


@dataclass
class RemeasureState:
    target_uuid: bytes
    baseline: bytes
    last_measured: int
    interval: int
    on_failure: FailureResponse = FailureResponse.ALERT

    def __post_init__(self) -> None:
        if self.interval <= 0:
            raise ValueError("re-measurement interval must be positive")

    def is_due(self, now: int) -> bool:
        return now - self.last_measured > self.interval


class RemeasureStatus(enum.IntEnum):
    NOT_DUE = 0
    PASSED = 1
    FAILED = 2


@dataclass(frozen=True)
class RemeasureResult:
    status: RemeasureStatus
    measured: Optional[bytes] = None
    response: Optional[FailureResponse] = None

    @property
    def due(self) -> bool:
        return self.status != RemeasureStatus.NOT_DUE


@dataclass(frozen=True)
class MeasurementOutcome:
    digest: Optional[bytes]
    appraisal_required: bool
    logged: bool
    rule_index: Optional[int] = None


def measure_segments(segments: Sequence[Segment | bytes]) -> bytes:
    """Hash each segment on its own, then fold the hashes into a chain
    seeded with the zero digest."""
    if not segments:
        raise EmptySegmentList("at least one segment is required")
    acc = canon.ZERO_DIGEST
    for seg in segments:
        data = seg.data if isinstance(seg, Segment) else seg
        acc = canon.hash(acc + canon.hash(data))
    return acc


def measure_syscall(rec: SyscallRecord) -> bytes:
    return canon.hash(canon.encode(rec))


def load_context(obj: MeasurableObject, now: int) -> EventContext:
    return EventContext(
        event=obj.kind.load_event,
        subject_uuid=obj.uuid,
        object_size=obj.size,
        timestamp=now,
    )


def static_measure(obj: MeasurableObject, policy: PolicySet, now: int) -> MeasurementOutcome:
    hit = match_rule(policy, load_context(obj, now))
    if hit is None:
        return MeasurementOutcome(None, False, False)
    index, rule = hit
    segments = list(obj.segments)
    if obj.kind == ObjectKind.USER_TA and rule.measure_properties and obj.properties is not None:
        segments.append(obj.properties_segment())
    digest = measure_segments(segments)
    return MeasurementOutcome(digest, rule.action == Action.APPRAISE, True, index)


def maybe_remeasure(state: RemeasureState, obj: MeasurableObject, now: int) -> RemeasureResult:
    if obj.uuid != state.target_uuid:
        raise UnknownTarget(obj.uuid.hex())
    if not state.is_due(now):
        return RemeasureResult(RemeasureStatus.NOT_DUE)
    measured = measure_segments(obj.segments)
    if measured == state.baseline:
        state.last_measured = now
        return RemeasureResult(RemeasureStatus.PASSED, measured)
    return RemeasureResult(RemeasureStatus.FAILED, measured, state.on_failure)
