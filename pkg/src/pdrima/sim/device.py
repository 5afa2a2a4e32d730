"""The simulated Secure Monitor Agent and the device-side attestation responder."""

from __future__ import annotations

import logging
import threading
import uuid as uuidlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .. import canon
from ..appraise import AppraisalResult, Rml, RmlEntry, appraise, load_rml
from ..attest.evidence import Challenge, device_respond, encode_response
from ..canon import DecodeError, KeyPair, KeyRole
from ..measure import (
    FailureResponse,
    MeasurableObject,
    ObjectKind,
    RemeasureState,
    RemeasureStatus,
    Segment,
    SyscallRecord,
    maybe_remeasure,
    measure_segments,
    measure_syscall,
    static_measure,
)
from ..policy import EventContext, EventType, PolicySet, load_policy, match_rule
from ..sml import (
    DEFAULT_CAPACITY,
    VPCR_DYNAMIC,
    DynamicEventData,
    RemeasureEventData,
    Sml,
    SmlEntry,
    SmlSnapshot,
    StaticEventData,
    VpcrBank,
    vpcr_for_kind,
)
from .trace import (
    DowngradeVersion,
    ForgeQuote,
    InterTaCall,
    KernelLoad,
    LoadEvent,
    MutateLogByte,
    RemeasureConfig,
    ReplayResponse,
    StaticComponentLoad,
    Syscall,
    TaInvocation,
    TamperSegment,
    Tick,
    Trace,
    TraceError,
    TraceEvent,
    TruncateLog,
    UserTaLoad,
)

log = logging.getLogger(__name__)

_KIND_OF = {
    KernelLoad: ObjectKind.KERNEL,
    StaticComponentLoad: ObjectKind.STATIC_COMPONENT,
    UserTaLoad: ObjectKind.USER_TA,
}


def _u(b: Optional[bytes]) -> str:
    return str(uuidlib.UUID(bytes=b)) if b is not None else "-"


@dataclass
class SimReport:
    events_processed: int = 0
    entries_appended: int = 0
    appraisal_failures: list[tuple[bytes, AppraisalResult]] = field(default_factory=list)
    remeasure_failures: list[tuple[bytes, int, FailureResponse]] = field(default_factory=list)
    blocked_calls: list[tuple[int, str, bytes]] = field(default_factory=list)
    final_vpcrs: tuple[bytes, ...] = ()

    def to_json(self) -> dict:
        return {
            "events_processed": self.events_processed,
            "entries_appended": self.entries_appended,
            "appraisal_failures": [{"uuid": _u(u), "outcome": r.name} for u, r in self.appraisal_failures],
            "remeasure_failures": [
                {"uuid": _u(u), "t": t, "response": r.name} for u, t, r in self.remeasure_failures
            ],
            "blocked_calls": [{"t": t, "event": e, "uuid": _u(u)} for t, e, u in self.blocked_calls],
            "final_vpcrs": [v.hex() for v in self.final_vpcrs],
        }

    def render(self) -> str:
        lines = [
            f"events processed : {self.events_processed}",
            f"entries appended : {self.entries_appended}",
        ]
        for u, r in self.appraisal_failures:
            lines.append(f"appraisal failure: {_u(u)} {r.name}")
        for u, t, r in self.remeasure_failures:
            lines.append(f"remeasure failure: {_u(u)} at {t} ms ({r.name})")
        for t, e, u in self.blocked_calls:
            lines.append(f"blocked call     : {e} -> {_u(u)} at {t} ms")
        for i, v in enumerate(self.final_vpcrs):
            lines.append(f"vPCR[{i}]          : {v.hex()}")
        return "\n".join(lines)


class SecureMonitor:
    """Policy-driven measurement, appraisal and logging over one event stream."""

    def __init__(self, policy: PolicySet, rml: Rml, capacity: int = DEFAULT_CAPACITY) -> None:
        self.policy = policy
        self.rml = rml
        self.sml = Sml(capacity)
        self.bank = VpcrBank()
        self.objects: dict[bytes, MeasurableObject] = {}
        self.remeasure: dict[bytes, RemeasureState] = {}
        self.quarantined: set[bytes] = set()
        self.report = SimReport()
        self._stream = threading.Lock()

    # -- logging ------------------------------------------------------------

    def _append(self, vpcr: int, event: EventType, data, result: bytes) -> SmlEntry:
        entry = self.sml.append(self.bank, vpcr, event, data, result)
        self.report.entries_appended += 1
        return entry

    def snapshot(self) -> SmlSnapshot:
        return self.sml.snapshot(self.bank)

    # -- static measurement -------------------------------------------------

    def load_object(
        self,
        obj: MeasurableObject,
        now: int,
        remeasure: Optional[RemeasureConfig] = None,
        on_failure: FailureResponse = FailureResponse.ALERT,
    ) -> Optional[StaticEventData]:
        if obj.uuid in self.objects or obj.uuid in self.quarantined:
            return None  # measured at first load only
        outcome = static_measure(obj, self.policy, now)
        if not outcome.logged:
            self.objects[obj.uuid] = obj
            return None
        appraisal = None
        if outcome.appraisal_required:
            appraisal = appraise(self.rml, obj.uuid, outcome.digest, obj.version)
            if not appraisal.trusted:
                self.report.appraisal_failures.append((obj.uuid, appraisal))
        data = StaticEventData(obj.uuid, obj.kind, obj.version, outcome.digest, appraisal)
        self._append(vpcr_for_kind(obj.kind), obj.kind.load_event, data, outcome.digest)
        if appraisal is not None and not appraisal.trusted and on_failure == FailureResponse.BLOCK:
            self.quarantined.add(obj.uuid)
            return data
        self.objects[obj.uuid] = obj
        if remeasure is not None:
            self.remeasure[obj.uuid] = RemeasureState(
                obj.uuid, measure_segments(obj.segments), now, remeasure.interval, remeasure.on_failure
            )
        return data

    # -- re-measurement -----------------------------------------------------

    def check_remeasure(self, uuid: bytes, now: int) -> Optional[RemeasureEventData]:
        state = self.remeasure.get(uuid)
        if state is None or not state.is_due(now):
            return None
        obj = self.objects[uuid]
        ctx = EventContext(EventType.REMEASUREMENT, subject_uuid=uuid, object_size=obj.size, timestamp=now)
        if match_rule(self.policy, ctx) is None:
            return None
        result = maybe_remeasure(state, obj, now)
        data = RemeasureEventData(uuid, obj.kind, result.status, result.response, now, result.measured)
        self._append(vpcr_for_kind(obj.kind), EventType.REMEASUREMENT, data, result.measured)
        if result.status == RemeasureStatus.FAILED:
            self.report.remeasure_failures.append((uuid, now, result.response))
        return data

    def remeasure_all(self, now: int) -> None:
        for uuid in list(self.remeasure):
            self.check_remeasure(uuid, now)

    # -- dynamic measurement ------------------------------------------------

    def intercept(self, rec: SyscallRecord, targets: Sequence[bytes]) -> Optional[SmlEntry]:
        """Run due re-measurements for ``targets`` then measure the call.
        Returns None when the call is bypassed or blocked."""
        blocked = False
        for uuid in dict.fromkeys(targets):
            data = self.check_remeasure(uuid, rec.timestamp)
            if data is not None and data.failed and data.response == FailureResponse.BLOCK:
                blocked = True
        if rec.subject_uuid is not None and rec.subject_uuid in self.quarantined:
            blocked = True
        if blocked:
            target = rec.subject_uuid or rec.caller_uuid or canon.ZERO_DIGEST[:16]
            self.report.blocked_calls.append((rec.timestamp, rec.event.name, target))
            return None
        ctx = EventContext(
            rec.event,
            subject_uuid=rec.subject_uuid,
            caller_uuid=rec.caller_uuid,
            syscall_number=rec.syscall_number,
            object_size=len(rec.parameters),
            timestamp=rec.timestamp,
        )
        if match_rule(self.policy, ctx) is None:
            return None
        measured = measure_syscall(rec)
        return self._append(VPCR_DYNAMIC, rec.event, DynamicEventData(rec, measured), measured)

    # -- trace driving ------------------------------------------------------

    def run(self, trace: Trace) -> SimReport:
        with self._stream:
            _TraceRunner(self, trace).run()
            self.report.final_vpcrs = self.bank.registers
        return self.report


class _TraceRunner:
    def __init__(self, monitor: SecureMonitor, trace: Trace) -> None:
        self.monitor = monitor
        self.trace = trace
        self.pending = sorted(trace.of_type(TamperSegment), key=lambda a: a.at_ms)
        self.downgrades = {a.uuid: a.to_version for a in trace.of_type(DowngradeVersion)}
        self.kernel_uuid: Optional[bytes] = None

    def _fire_tampers(self, now: int) -> None:
        still = []
        for attack in self.pending:
            obj = self.monitor.objects.get(attack.uuid)
            if attack.at_ms <= now and obj is not None:
                _tamper(obj, attack)
            else:
                still.append(attack)
        self.pending = still

    def _load(self, ev: LoadEvent) -> None:
        kind = _KIND_OF[type(ev)]
        obj = MeasurableObject(
            ev.uuid,
            kind,
            self.downgrades.get(ev.uuid, ev.version),
            [Segment(s.label, s.data) for s in ev.segments],
            dict(ev.properties) if isinstance(ev, UserTaLoad) and ev.properties is not None else None,
        )
        # tampering scheduled before load modifies the image that gets loaded
        for attack in [a for a in self.pending if a.uuid == ev.uuid and a.at_ms <= ev.timestamp]:
            _tamper(obj, attack)
            self.pending.remove(attack)
        if kind == ObjectKind.KERNEL:
            self.kernel_uuid = ev.uuid
        self.monitor.load_object(obj, ev.timestamp, ev.remeasure, ev.on_failure)

    def _targets(self, *uuids: Optional[bytes]) -> list[bytes]:
        out = [self.kernel_uuid] if self.kernel_uuid is not None else []
        return out + [u for u in uuids if u is not None]

    def _dispatch(self, ev: TraceEvent) -> None:
        m = self.monitor
        if isinstance(ev, (KernelLoad, StaticComponentLoad, UserTaLoad)):
            self._load(ev)
        elif isinstance(ev, TaInvocation):
            rec = SyscallRecord(EventType.TA_INVOCATION, ev.timestamp, ev.caller, ev.uuid, None, ev.params, ev.result)
            m.intercept(rec, self._targets(ev.uuid))
        elif isinstance(ev, InterTaCall):
            rec = SyscallRecord(
                EventType.INTER_TA_CALL, ev.timestamp, ev.caller_uuid, ev.uuid, None, ev.params, ev.result
            )
            m.intercept(rec, self._targets(ev.caller_uuid, ev.uuid))
        elif isinstance(ev, Syscall):
            rec = SyscallRecord(EventType.SYSCALL, ev.timestamp, ev.caller_uuid, None, ev.number, ev.params, ev.result)
            m.intercept(rec, self._targets(ev.caller_uuid))
        elif isinstance(ev, Tick):
            m.remeasure_all(ev.timestamp)

    def run(self) -> None:
        for ev in self.trace.events:
            self._fire_tampers(ev.timestamp)
            self._dispatch(ev)
            self.monitor.report.events_processed += 1


def _tamper(obj: MeasurableObject, attack: TamperSegment) -> None:
    for i, seg in enumerate(obj.segments):
        if seg.label == attack.segment_label:
            if not 0 <= attack.byte_offset < len(seg.data):
                raise TraceError(0, f"tamper offset {attack.byte_offset} outside segment {seg.label!r}")
            data = bytearray(seg.data)
            data[attack.byte_offset] ^= attack.xor_value
            obj.segments[i] = Segment(seg.label, bytes(data))
            return
    raise TraceError(0, f"no segment {attack.segment_label!r} in {_u(obj.uuid)}")


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def boot_monitor(policy_blob: bytes, rml_file: bytes, pk_rml: bytes, capacity: int = DEFAULT_CAPACITY) -> SecureMonitor:
    """Load policy and RML; the RML signature is verified before any event."""
    policy = load_policy(policy_blob)
    rml = load_rml(rml_file, pk_rml)
    return SecureMonitor(policy, rml, capacity)


def run_device(
    trace: Trace,
    policy_blob: bytes,
    rml_file: bytes,
    pk_rml: bytes,
    capacity: int = DEFAULT_CAPACITY,
) -> SecureMonitor:
    monitor = boot_monitor(policy_blob, rml_file, pk_rml, capacity)
    monitor.run(trace)
    return monitor


def golden_entries(trace: Trace, policy: PolicySet, min_versions: Optional[dict[bytes, int]] = None) -> list[RmlEntry]:
    """Reference values for every load event the policy measures, computed the
    way the TTP would from known-good images (attacks are ignored)."""
    entries: dict[bytes, RmlEntry] = {}
    for ev in trace.events:
        if not isinstance(ev, (KernelLoad, StaticComponentLoad, UserTaLoad)) or ev.uuid in entries:
            continue
        props = ev.properties if isinstance(ev, UserTaLoad) else None
        obj = MeasurableObject(ev.uuid, _KIND_OF[type(ev)], ev.version, list(ev.segments), props)
        outcome = static_measure(obj, policy, ev.timestamp)
        if outcome.logged:
            floor = (min_versions or {}).get(ev.uuid, ev.version)
            entries[ev.uuid] = RmlEntry(ev.uuid, outcome.digest, floor)
    return list(entries.values())


def _mutate_entry(entry: SmlEntry, attack: MutateLogByte) -> SmlEntry:
    raw = bytearray(canon.encode(entry))
    if not 0 <= attack.byte_offset < len(raw):
        raise TraceError(0, f"MutateLogByte offset {attack.byte_offset} outside entry")
    raw[attack.byte_offset] ^= attack.xor_value
    try:
        return canon.decode(SmlEntry, bytes(raw))
    except DecodeError as exc:
        raise TraceError(0, f"MutateLogByte leaves an undecodable entry: {exc}") from None


def make_responder(
    snapshot: Callable[[], SmlSnapshot],
    sk_attest: KeyPair,
    attacks: Sequence = (),
) -> Callable[[bytes], bytes]:
    """Build the RA responder (nonce -> AE || quote), applying any
    attestation-path attacks from the trace."""
    before = [a for a in attacks if isinstance(a, MutateLogByte) and not a.after_signing]
    after = [a for a in attacks if isinstance(a, MutateLogByte) and a.after_signing]
    truncate = sum(a.count for a in attacks if isinstance(a, TruncateLog))
    forge = next((a for a in attacks if isinstance(a, ForgeQuote)), None)
    replay = any(isinstance(a, ReplayResponse) for a in attacks)
    key = KeyPair.generate(KeyRole.ATTEST, seed=forge.wrong_key_seed) if forge else sk_attest
    captured: list[bytes] = []
    lock = threading.Lock()

    def respond(nonce: bytes) -> bytes:
        with lock:
            if replay and captured:
                return captured[0]
            snap = snapshot()
            entries = list(snap.entries)
            for attack in before:
                if attack.entry_index >= len(entries):
                    raise TraceError(0, f"MutateLogByte entry {attack.entry_index} does not exist")
                entries[attack.entry_index] = _mutate_entry(entries[attack.entry_index], attack)
            if truncate:
                entries = entries[: max(0, len(entries) - truncate)]
            ae, quote = device_respond(Challenge(nonce), SmlSnapshot(tuple(entries), snap.vpcrs), key)
            payload = bytearray(encode_response(ae, quote))
            for attack in after:
                if attack.entry_index >= len(entries):
                    raise TraceError(0, f"MutateLogByte entry {attack.entry_index} does not exist")
                payload[ae.entry_offset(attack.entry_index) + attack.byte_offset] ^= attack.xor_value
            payload = bytes(payload)
            captured.append(payload)
            return payload

    return respond
