"""Policy rules: compile, load and first-match evaluation.

A rule is ``<action, event, conditions>``. Conditions within one rule are
conjunctive; rules are scanned in order and the first match wins. No match
means bypass: nothing is measured or logged for the event.
"""

from __future__ import annotations

import enum
import uuid as uuidlib
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from . import canon
from .canon import DecodeError, Reader, Writer

POLICY_MAGIC = b"PDPL"
POLICY_VERSION = 0x01

# rule flag bits
FLAG_MEASURE_PROPERTIES = 0x01


class Action(enum.IntEnum):
    MEASURE = 1
    APPRAISE = 2  # implies MEASURE


class EventType(enum.IntEnum):
    KERNEL_LOAD = 1
    STATIC_COMPONENT_LOAD = 2
    USER_TA_LOAD = 3
    TA_INVOCATION = 4
    INTER_TA_CALL = 5
    SYSCALL = 6
    REMEASUREMENT = 7

    @property
    def is_static(self) -> bool:
        return self in STATIC_EVENTS

    @property
    def is_dynamic(self) -> bool:
        return self in DYNAMIC_EVENTS


STATIC_EVENTS = frozenset(
    {EventType.KERNEL_LOAD, EventType.STATIC_COMPONENT_LOAD, EventType.USER_TA_LOAD}
)
DYNAMIC_EVENTS = frozenset({EventType.TA_INVOCATION, EventType.INTER_TA_CALL, EventType.SYSCALL})

_EVENT_NAMES = {
    "KernelLoad": EventType.KERNEL_LOAD,
    "StaticComponentLoad": EventType.STATIC_COMPONENT_LOAD,
    "UserTaLoad": EventType.USER_TA_LOAD,
    "TaInvocation": EventType.TA_INVOCATION,
    "InterTaCall": EventType.INTER_TA_CALL,
    "Syscall": EventType.SYSCALL,
    "ReMeasurement": EventType.REMEASUREMENT,
}
EVENT_NAME = {v: k for k, v in _EVENT_NAMES.items()}


def event_from_name(name: str) -> EventType:
    try:
        return _EVENT_NAMES[name]
    except KeyError:
        raise ValueError(f"unknown event type {name!r}") from None


class ConditionKind(enum.IntEnum):
    UUID_EQUALS = 1
    SYSCALL_NUMBER_EQUALS = 2
    CALLER_UUID_EQUALS = 3
    MIN_SIZE_BYTES = 4


@dataclass(frozen=True)
class Condition:
    kind: ConditionKind
    operand: Any  # 16-byte UUID for the uuid kinds, int otherwise

    def __post_init__(self) -> None:
        if self.kind in (ConditionKind.UUID_EQUALS, ConditionKind.CALLER_UUID_EQUALS):
            object.__setattr__(self, "operand", canon.check_uuid(self.operand))
        elif self.kind == ConditionKind.SYSCALL_NUMBER_EQUALS:
            if not 0 <= self.operand < 2**32:
                raise ValueError("syscall number must fit in u32")
        elif not 0 <= self.operand < 2**64:
            raise ValueError("size must fit in u64")

    @classmethod
    def uuid_equals(cls, value: bytes) -> "Condition":
        return cls(ConditionKind.UUID_EQUALS, value)

    @classmethod
    def caller_uuid_equals(cls, value: bytes) -> "Condition":
        return cls(ConditionKind.CALLER_UUID_EQUALS, value)

    @classmethod
    def syscall_number_equals(cls, value: int) -> "Condition":
        return cls(ConditionKind.SYSCALL_NUMBER_EQUALS, value)

    @classmethod
    def min_size_bytes(cls, value: int) -> "Condition":
        return cls(ConditionKind.MIN_SIZE_BYTES, value)

    def matches(self, ctx: "EventContext") -> bool:
        # an absent context field fails the condition
        if self.kind == ConditionKind.UUID_EQUALS:
            return ctx.subject_uuid is not None and ctx.subject_uuid == self.operand
        if self.kind == ConditionKind.CALLER_UUID_EQUALS:
            return ctx.caller_uuid is not None and ctx.caller_uuid == self.operand
        if self.kind == ConditionKind.SYSCALL_NUMBER_EQUALS:
            return ctx.syscall_number is not None and ctx.syscall_number == self.operand
        return ctx.object_size is not None and ctx.object_size >= self.operand

    def write(self, w: Writer) -> None:
        w.u8(self.kind)
        if self.kind in (ConditionKind.UUID_EQUALS, ConditionKind.CALLER_UUID_EQUALS):
            w.uuid(self.operand)
        elif self.kind == ConditionKind.SYSCALL_NUMBER_EQUALS:
            w.u32(self.operand)
        else:
            w.u64(self.operand)

    @classmethod
    def read(cls, r: Reader) -> "Condition":
        kind = r.enum(ConditionKind)
        if kind in (ConditionKind.UUID_EQUALS, ConditionKind.CALLER_UUID_EQUALS):
            return cls(kind, r.uuid())
        if kind == ConditionKind.SYSCALL_NUMBER_EQUALS:
            return cls(kind, r.u32())
        return cls(kind, r.u64())


@dataclass(frozen=True)
class PolicyRule:
    action: Action
    event: EventType
    conditions: tuple[Condition, ...] = ()
    measure_properties: bool = False  # user-TA loads only

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "event", EventType(self.event))
        object.__setattr__(self, "conditions", tuple(self.conditions))

    def matches(self, ctx: "EventContext") -> bool:
        return self.event == ctx.event and all(c.matches(ctx) for c in self.conditions)

    def write(self, w: Writer) -> None:
        w.u8(self.action).u8(self.event)
        w.u8(FLAG_MEASURE_PROPERTIES if self.measure_properties else 0)
        w.list(self.conditions, lambda c: c.write(w))

    @classmethod
    def read(cls, r: Reader) -> "PolicyRule":
        action = r.enum(Action)
        event = r.enum(EventType)
        flags = r.u8()
        if flags & ~FLAG_MEASURE_PROPERTIES:
            raise DecodeError(f"unknown rule flags {flags:#x}")
        conditions = r.list(lambda: Condition.read(r))
        return cls(action, event, tuple(conditions), bool(flags & FLAG_MEASURE_PROPERTIES))


@dataclass(frozen=True)
class EventContext:
    event: EventType
    subject_uuid: Optional[bytes] = None
    caller_uuid: Optional[bytes] = None
    syscall_number: Optional[int] = None
    object_size: Optional[int] = None
    timestamp: int = 0


@dataclass(frozen=True)
class PolicySet:
    rules: tuple[PolicyRule, ...]
    blob_digest: bytes = field(default=canon.ZERO_DIGEST)

    def __len__(self) -> int:
        return len(self.rules)


def compile_policy(rules: Sequence[PolicyRule]) -> bytes:
    w = Writer().raw(POLICY_MAGIC).u8(POLICY_VERSION)
    w.list(rules, lambda rule: rule.write(w))
    return w.getvalue()


def load_policy(blob: bytes) -> PolicySet:
    r = Reader(blob)
    if r.remaining() < 5 or r.raw(4) != POLICY_MAGIC:
        raise DecodeError("not a policy blob (bad magic)")
    version = r.u8()
    if version != POLICY_VERSION:
        raise DecodeError(f"unsupported policy version {version}")
    rules = r.list(lambda: PolicyRule.read(r))
    r.done()
    return PolicySet(tuple(rules), canon.hash(bytes(blob)))


def match_rule(policy: PolicySet, ctx: EventContext) -> Optional[tuple[int, PolicyRule]]:
    """First matching rule, or None for the default bypass."""
    for index, rule in enumerate(policy.rules):
        if rule.matches(ctx):
            return index, rule
    return None


# ---------------------------------------------------------------------------
# JSON rule files
# ---------------------------------------------------------------------------


def _uuid_bytes(text: str) -> bytes:
    return uuidlib.UUID(text).bytes


def condition_from_json(obj: dict) -> Condition:
    if len(obj) != 1:
        raise ValueError(f"condition must have exactly one key: {obj!r}")
    (key, value), = obj.items()
    if key == "uuid":
        return Condition.uuid_equals(_uuid_bytes(value))
    if key == "caller_uuid":
        return Condition.caller_uuid_equals(_uuid_bytes(value))
    if key == "syscall":
        return Condition.syscall_number_equals(int(value))
    if key == "min_size":
        return Condition.min_size_bytes(int(value))
    raise ValueError(f"unknown condition key {key!r}")


def condition_to_json(cond: Condition) -> dict:
    if cond.kind == ConditionKind.UUID_EQUALS:
        return {"uuid": str(uuidlib.UUID(bytes=cond.operand))}
    if cond.kind == ConditionKind.CALLER_UUID_EQUALS:
        return {"caller_uuid": str(uuidlib.UUID(bytes=cond.operand))}
    if cond.kind == ConditionKind.SYSCALL_NUMBER_EQUALS:
        return {"syscall": cond.operand}
    return {"min_size": cond.operand}


def rules_from_json(data: list) -> list[PolicyRule]:
    """Parse ``[{"action": "measure", "event": "Syscall", "conditions": [...]}]``."""
    rules = []
    for i, item in enumerate(data):
        try:
            action = Action[item["action"].upper()]
            rules.append(
                PolicyRule(
                    action,
                    event_from_name(item["event"]),
                    tuple(condition_from_json(c) for c in item.get("conditions", [])),
                    bool(item.get("measure_properties", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"rule {i}: {exc}") from None
    return rules


def rule_to_json(rule: PolicyRule) -> dict:
    out: dict = {
        "action": rule.action.name.lower(),
        "event": EVENT_NAME[rule.event],
        "conditions": [condition_to_json(c) for c in rule.conditions],
    }
    if rule.measure_properties:
        out["measure_properties"] = True
    return out
