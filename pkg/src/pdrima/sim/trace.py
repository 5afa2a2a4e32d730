"""Event-trace files (``.jsonl``).

One JSON object per line. Blank lines and lines starting with ``#`` are
skipped. An optional first record ``{"format": "pdrima-trace", "version": 1}``
pins the schema version. Runtime events carry ``"t"`` (simulated ms) and
``"event"``; attack injections carry ``"attack"`` instead. Byte fields are
hex strings. Example::

    {"t": 0, "event": "KernelLoad", "segments": [{"label": "text", "hex": "c0ffee"}]}
    {"t": 5, "event": "UserTaLoad", "uuid": "...", "version": 2,
     "segments": [...], "properties": {"name": "keystore"},
     "remeasure": {"interval_ms": 100, "on_failure": "block"}}
    {"t": 9, "event": "Syscall", "caller_uuid": "...", "number": 5, "params_hex": "01", "result": 0}
    {"t": 20, "event": "Tick"}
    {"attack": "TamperSegment", "uuid": "...", "segment": "text", "offset": 0, "xor": 1, "at_ms": 12}

Segments give their bytes as ``hex``, ``text`` or ``size`` (+ optional
``fill`` byte value).
"""

from __future__ import annotations

import json
import os
import uuid as uuidlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from ..measure import FailureResponse, Segment

TRACE_FORMAT = "pdrima-trace"
TRACE_VERSION = 1

# the kernel has no UUID of its own in OP-TEE; this fixed value names it in logs and RMLs
KERNEL_UUID = uuidlib.UUID("6b65726e-656c-4000-8000-000000000000").bytes


class TraceError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class ParseError(TraceError):
    pass


class NonMonotoneTimestamp(TraceError):
    pass


@dataclass(frozen=True)
class RemeasureConfig:
    interval: int
    on_failure: FailureResponse = FailureResponse.ALERT


# --- runtime events --------------------------------------------------------


@dataclass
class KernelLoad:
    timestamp: int
    segments: list[Segment]
    uuid: bytes = KERNEL_UUID
    version: int = 0
    remeasure: Optional[RemeasureConfig] = None
    on_failure: FailureResponse = FailureResponse.ALERT
    line: int = 0


@dataclass
class StaticComponentLoad:
    timestamp: int
    uuid: bytes
    segments: list[Segment]
    version: int = 0
    remeasure: Optional[RemeasureConfig] = None
    on_failure: FailureResponse = FailureResponse.ALERT
    line: int = 0


@dataclass
class UserTaLoad:
    timestamp: int
    uuid: bytes
    segments: list[Segment]
    version: int = 0
    properties: Optional[dict[str, str]] = None
    remeasure: Optional[RemeasureConfig] = None
    on_failure: FailureResponse = FailureResponse.ALERT
    line: int = 0


@dataclass
class TaInvocation:
    timestamp: int
    uuid: bytes
    params: bytes = b""
    result: int = 0
    caller: Optional[bytes] = None
    line: int = 0


@dataclass
class InterTaCall:
    timestamp: int
    caller_uuid: bytes
    uuid: bytes
    params: bytes = b""
    result: int = 0
    line: int = 0


@dataclass
class Syscall:
    timestamp: int
    number: int
    params: bytes = b""
    result: int = 0
    caller_uuid: Optional[bytes] = None
    line: int = 0


@dataclass
class Tick:
    timestamp: int
    line: int = 0


LoadEvent = Union[KernelLoad, StaticComponentLoad, UserTaLoad]
TraceEvent = Union[KernelLoad, StaticComponentLoad, UserTaLoad, TaInvocation, InterTaCall, Syscall, Tick]
LOAD_EVENTS = (KernelLoad, StaticComponentLoad, UserTaLoad)

# --- attack injections -----------------------------------------------------


@dataclass(frozen=True)
class TamperSegment:
    uuid: bytes
    segment_label: str
    byte_offset: int
    xor_value: int
    at_ms: int


@dataclass(frozen=True)
class DowngradeVersion:
    uuid: bytes
    to_version: int


@dataclass(frozen=True)
class MutateLogByte:
    """Flip one byte of a serialized SML entry, either in the device's
    snapshot before the quote is made or on the wire afterwards."""

    entry_index: int
    byte_offset: int
    xor_value: int
    after_signing: bool = False


@dataclass(frozen=True)
class TruncateLog:
    """Drop the newest ``count`` entries from the attested snapshot."""

    count: int = 1


@dataclass(frozen=True)
class ReplayResponse:
    pass


@dataclass(frozen=True)
class ForgeQuote:
    wrong_key_seed: int


AttackInjection = Union[TamperSegment, DowngradeVersion, MutateLogByte, TruncateLog, ReplayResponse, ForgeQuote]


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)
    attacks: list[AttackInjection] = field(default_factory=list)

    def of_type(self, cls: type) -> list:
        return [a for a in self.attacks if isinstance(a, cls)]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _uuid(value: str) -> bytes:
    return uuidlib.UUID(value).bytes


def _hex(value: Optional[str]) -> bytes:
    return bytes.fromhex(value or "")


def _u32(value, name: str) -> int:
    value = int(value)
    if not 0 <= value < 2**32:
        raise ValueError(f"{name} must fit in u32")
    return value


def _segment(obj: dict) -> Segment:
    label = obj["label"]
    if "hex" in obj:
        data = bytes.fromhex(obj["hex"])
    elif "text" in obj:
        data = obj["text"].encode("utf-8")
    elif "size" in obj:
        data = bytes([int(obj.get("fill", 0))]) * int(obj["size"])
    else:
        data = b""
    return Segment(label, data)


def _segments(obj: dict) -> list[Segment]:
    segs = [_segment(s) for s in obj.get("segments", [])]
    if not segs:
        raise ValueError("load events need at least one segment")
    return segs


def _response(name: Optional[str]) -> FailureResponse:
    return FailureResponse[(name or "alert").upper()]


def _remeasure(obj: Optional[dict]) -> Optional[RemeasureConfig]:
    if obj is None:
        return None
    return RemeasureConfig(int(obj["interval_ms"]), _response(obj.get("on_failure")))


def _event(rec: dict, line: int) -> TraceEvent:
    t = int(rec["t"])
    if t < 0:
        raise ValueError("timestamp must be non-negative")
    kind = rec["event"]
    if kind == "KernelLoad":
        return KernelLoad(
            t,
            _segments(rec),
            _uuid(rec["uuid"]) if "uuid" in rec else KERNEL_UUID,
            _u32(rec.get("version", 0), "version"),
            _remeasure(rec.get("remeasure")),
            _response(rec.get("on_failure")),
            line,
        )
    if kind == "StaticComponentLoad":
        return StaticComponentLoad(
            t,
            _uuid(rec["uuid"]),
            _segments(rec),
            _u32(rec.get("version", 0), "version"),
            _remeasure(rec.get("remeasure")),
            _response(rec.get("on_failure")),
            line,
        )
    if kind == "UserTaLoad":
        props = rec.get("properties")
        if props is not None:
            props = {str(k): str(v) for k, v in props.items()}
        return UserTaLoad(
            t,
            _uuid(rec["uuid"]),
            _segments(rec),
            _u32(rec.get("version", 0), "version"),
            props,
            _remeasure(rec.get("remeasure")),
            _response(rec.get("on_failure")),
            line,
        )
    if kind == "TaInvocation":
        caller = rec.get("caller")
        return TaInvocation(
            t,
            _uuid(rec["uuid"]),
            _hex(rec.get("params_hex")),
            _u32(rec.get("result", 0), "result"),
            _uuid(caller) if caller else None,
            line,
        )
    if kind == "InterTaCall":
        return InterTaCall(
            t,
            _uuid(rec["caller_uuid"]),
            _uuid(rec["uuid"]),
            _hex(rec.get("params_hex")),
            _u32(rec.get("result", 0), "result"),
            line,
        )
    if kind == "Syscall":
        caller = rec.get("caller_uuid")
        return Syscall(
            t,
            _u32(rec["number"], "number"),
            _hex(rec.get("params_hex")),
            _u32(rec.get("result", 0), "result"),
            _uuid(caller) if caller else None,
            line,
        )
    if kind == "Tick":
        return Tick(t, line)
    raise ValueError(f"unknown event kind {kind!r}")


def _attack(rec: dict) -> AttackInjection:
    kind = rec["attack"]
    if kind == "TamperSegment":
        return TamperSegment(
            _uuid(rec["uuid"]),
            rec["segment"],
            int(rec.get("offset", 0)),
            int(rec.get("xor", 0xFF)) & 0xFF,
            int(rec.get("at_ms", 0)),
        )
    if kind == "DowngradeVersion":
        return DowngradeVersion(_uuid(rec["uuid"]), _u32(rec["to_version"], "to_version"))
    if kind == "MutateLogByte":
        stage = rec.get("stage", "before_signing")
        if stage not in ("before_signing", "after_signing"):
            raise ValueError(f"unknown stage {stage!r}")
        return MutateLogByte(
            int(rec["entry_index"]),
            int(rec.get("offset", 0)),
            int(rec.get("xor", 0xFF)) & 0xFF,
            stage == "after_signing",
        )
    if kind == "TruncateLog":
        return TruncateLog(int(rec.get("count", 1)))
    if kind == "ReplayResponse":
        return ReplayResponse()
    if kind == "ForgeQuote":
        return ForgeQuote(int(rec["wrong_key_seed"]))
    raise ValueError(f"unknown attack kind {kind!r}")


def parse_trace(lines: Iterable[str]) -> Trace:
    trace = Trace()
    last_t = None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        try:
            rec = json.loads(text)
            if not isinstance(rec, dict):
                raise ValueError("record must be a JSON object")
            if "format" in rec:
                if rec["format"] != TRACE_FORMAT or int(rec.get("version", 0)) != TRACE_VERSION:
                    raise ValueError(f"unsupported trace format {rec!r}")
                continue
            if "attack" in rec:
                trace.attacks.append(_attack(rec))
                continue
            event = _event(rec, lineno)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(lineno, str(exc) or type(exc).__name__) from None
        if last_t is not None and event.timestamp < last_t:
            raise NonMonotoneTimestamp(lineno, f"timestamp {event.timestamp} < previous {last_t}")
        last_t = event.timestamp
        trace.events.append(event)
    _check_structure(trace)
    return trace


def _check_structure(trace: Trace) -> None:
    # boot order: kernel, then static components, then runtime events
    phase = 0
    loaded: dict[bytes, LoadEvent] = {}
    for ev in trace.events:
        if isinstance(ev, KernelLoad):
            if phase > 0:
                raise ParseError(ev.line, "KernelLoad must be the first event and appear once")
            phase = 1
        elif isinstance(ev, StaticComponentLoad):
            if phase > 1:
                raise ParseError(ev.line, "StaticComponentLoad after runtime events")
            phase = 1
        else:
            phase = 2
        if isinstance(ev, LOAD_EVENTS):
            loaded.setdefault(ev.uuid, ev)
    for attack in trace.attacks:
        if isinstance(attack, (TamperSegment, DowngradeVersion)) and attack.uuid not in loaded:
            raise ParseError(0, f"attack targets unknown uuid {uuidlib.UUID(bytes=attack.uuid)}")
        if isinstance(attack, TamperSegment):
            target = loaded[attack.uuid]
            seg = next((s for s in target.segments if s.label == attack.segment_label), None)
            if seg is None or not 0 <= attack.byte_offset < len(seg.data):
                raise ParseError(0, f"TamperSegment: no byte {attack.byte_offset} in segment {attack.segment_label!r}")


def load_trace(path: Union[str, os.PathLike]) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


# ---------------------------------------------------------------------------
# Writing (fixtures, generated traces)
# ---------------------------------------------------------------------------


def _segment_json(seg: Segment) -> dict:
    return {"label": seg.label, "hex": seg.data.hex()}


def _load_extras(ev: LoadEvent, out: dict) -> dict:
    if ev.version:
        out["version"] = ev.version
    if ev.remeasure is not None:
        out["remeasure"] = {
            "interval_ms": ev.remeasure.interval,
            "on_failure": ev.remeasure.on_failure.name.lower(),
        }
    if ev.on_failure != FailureResponse.ALERT:
        out["on_failure"] = ev.on_failure.name.lower()
    return out


def _s(u: bytes) -> str:
    return str(uuidlib.UUID(bytes=u))


def event_to_json(ev: TraceEvent) -> dict:
    out: dict = {"t": ev.timestamp}
    if isinstance(ev, KernelLoad):
        out.update(event="KernelLoad", segments=[_segment_json(s) for s in ev.segments])
        if ev.uuid != KERNEL_UUID:
            out["uuid"] = _s(ev.uuid)
        return _load_extras(ev, out)
    if isinstance(ev, StaticComponentLoad):
        out.update(event="StaticComponentLoad", uuid=_s(ev.uuid), segments=[_segment_json(s) for s in ev.segments])
        return _load_extras(ev, out)
    if isinstance(ev, UserTaLoad):
        out.update(event="UserTaLoad", uuid=_s(ev.uuid), segments=[_segment_json(s) for s in ev.segments])
        if ev.properties is not None:
            out["properties"] = dict(ev.properties)
        return _load_extras(ev, out)
    if isinstance(ev, TaInvocation):
        out.update(event="TaInvocation", uuid=_s(ev.uuid), params_hex=ev.params.hex(), result=ev.result)
        if ev.caller is not None:
            out["caller"] = _s(ev.caller)
        return out
    if isinstance(ev, InterTaCall):
        out.update(
            event="InterTaCall", caller_uuid=_s(ev.caller_uuid), uuid=_s(ev.uuid),
            params_hex=ev.params.hex(), result=ev.result,
        )
        return out
    if isinstance(ev, Syscall):
        out.update(event="Syscall", number=ev.number, params_hex=ev.params.hex(), result=ev.result)
        if ev.caller_uuid is not None:
            out["caller_uuid"] = _s(ev.caller_uuid)
        return out
    out["event"] = "Tick"
    return out


def attack_to_json(attack: AttackInjection) -> dict:
    if isinstance(attack, TamperSegment):
        return {
            "attack": "TamperSegment", "uuid": _s(attack.uuid), "segment": attack.segment_label,
            "offset": attack.byte_offset, "xor": attack.xor_value, "at_ms": attack.at_ms,
        }
    if isinstance(attack, DowngradeVersion):
        return {"attack": "DowngradeVersion", "uuid": _s(attack.uuid), "to_version": attack.to_version}
    if isinstance(attack, MutateLogByte):
        return {
            "attack": "MutateLogByte", "entry_index": attack.entry_index, "offset": attack.byte_offset,
            "xor": attack.xor_value, "stage": "after_signing" if attack.after_signing else "before_signing",
        }
    if isinstance(attack, TruncateLog):
        return {"attack": "TruncateLog", "count": attack.count}
    if isinstance(attack, ReplayResponse):
        return {"attack": "ReplayResponse"}
    return {"attack": "ForgeQuote", "wrong_key_seed": attack.wrong_key_seed}


def trace_to_lines(trace: Trace) -> list[str]:
    lines = [json.dumps({"format": TRACE_FORMAT, "version": TRACE_VERSION})]
    lines += [json.dumps(event_to_json(ev), sort_keys=True) for ev in trace.events]
    lines += [json.dumps(attack_to_json(a), sort_keys=True) for a in trace.attacks]
    return lines


def write_trace(trace: Trace, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(trace_to_lines(trace)) + "\n")
