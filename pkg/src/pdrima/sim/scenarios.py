"""Built-in attack scenarios, each run end to end over a loopback connection.

Every scenario shares one small device image (kernel, one pTA, two user-TAs)
and a measure/appraise-everything policy; variants differ only in the attack
injections appended to the trace.
"""

from __future__ import annotations

import uuid as uuidlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..appraise import build_signed_rml
from ..attest.evidence import Challenge, Decision, FindingCode, Ttp, Verdict
from ..attest.transport import AttestationServer, verifier_challenge
from ..canon import KeyPair, KeyRole
from ..measure import FailureResponse, RemeasureStatus, Segment
from ..policy import Action, Condition, EventType, PolicyRule, compile_policy, load_policy
from ..sml import RemeasureEventData
from .device import SecureMonitor, golden_entries, make_responder, run_device
from .trace import (
    AttackInjection,
    DowngradeVersion,
    ForgeQuote,
    InterTaCall,
    KernelLoad,
    MutateLogByte,
    RemeasureConfig,
    ReplayResponse,
    StaticComponentLoad,
    Syscall,
    TaInvocation,
    TamperSegment,
    Tick,
    Trace,
    TruncateLog,
    UserTaLoad,
)

PTA_UUID = uuidlib.UUID("a5d0b4c3-0001-4c6e-9d1f-000000000001").bytes
TA_A = uuidlib.UUID("8aaaf200-2450-11e4-abe2-0002a5d5c51b").bytes
TA_B = uuidlib.UUID("d96a5b40-c3e5-21e3-8794-1002a5d5c61b").bytes
TA_ROGUE = uuidlib.UUID("deadbeef-0bad-4bad-8bad-00000000f00d").bytes

KEY_SEEDS = {KeyRole.ATTEST: 1, KeyRole.RML: 2}
SENSITIVE_SYSCALLS = (5, 7)
TA_B_INTERVAL = 100


class UnknownScenario(KeyError):
    pass


def scenario_policy() -> list[PolicyRule]:
    rules = [
        PolicyRule(Action.APPRAISE, EventType.KERNEL_LOAD),
        PolicyRule(Action.APPRAISE, EventType.STATIC_COMPONENT_LOAD),
        PolicyRule(Action.APPRAISE, EventType.USER_TA_LOAD, measure_properties=True),
        PolicyRule(Action.MEASURE, EventType.TA_INVOCATION),
        PolicyRule(Action.MEASURE, EventType.INTER_TA_CALL),
    ]
    rules += [
        PolicyRule(Action.MEASURE, EventType.SYSCALL, (Condition.syscall_number_equals(n),))
        for n in SENSITIVE_SYSCALLS
    ]
    rules.append(PolicyRule(Action.MEASURE, EventType.REMEASUREMENT))
    return rules


def base_trace(on_failure: FailureResponse = FailureResponse.ALERT) -> Trace:
    return Trace(
        events=[
            KernelLoad(0, [Segment("text", b"\x1f\x20\x03\xd5" * 64), Segment("vectors", bytes(range(128)))], version=3),
            StaticComponentLoad(2, PTA_UUID, [Segment("text", b"pta-code" * 16)], version=1),
            UserTaLoad(
                10, TA_A, [Segment("text", b"ta-a-text" * 20), Segment("rodata", b"ta-a-ro" * 8)],
                version=4, properties={"gpd.ta.description": "keystore", "gpd.ta.singleInstance": "true"},
            ),
            UserTaLoad(
                12, TA_B, [Segment("text", b"ta-b-text" * 20), Segment("data", b"\x00" * 32)], version=2,
                remeasure=RemeasureConfig(TA_B_INTERVAL, on_failure),
            ),
            TaInvocation(20, TA_A, bytes.fromhex("00010203"), 0),
            Syscall(25, 5, bytes.fromhex("aabb"), 0, TA_A),
            Syscall(26, 9, bytes.fromhex("cc"), 0, TA_A),  # not selected by policy: bypassed
            InterTaCall(30, TA_A, TA_B, bytes.fromhex("11"), 0),
            Tick(50),
            TaInvocation(150, TA_B, bytes.fromhex("2222"), 0),
            Syscall(160, 7, bytes.fromhex("dd"), 0xFFFF0006, TA_B),
            Tick(300),
        ]
    )


def _golden_trace() -> Trace:
    trace = base_trace()
    trace.events.append(UserTaLoad(400, TA_ROGUE, [Segment("text", b"rogue")]))
    return trace


@dataclass(frozen=True)
class Variant:
    scenario: str
    name: str
    attacks: tuple[AttackInjection, ...]
    decision: Decision
    codes: frozenset[FindingCode]
    on_failure: FailureResponse = FailureResponse.ALERT
    rogue_ta: bool = False
    # "single": one challenge; "resubmit": same evidence validated twice;
    # "second_challenge": verdict of the second of two challenges
    mode: str = "single"
    check: Optional[Callable[[SecureMonitor], Optional[str]]] = None

    @property
    def label(self) -> str:
        return self.scenario if self.name == "default" else f"{self.scenario}/{self.name}"


@dataclass
class ScenarioResult:
    variant: Variant
    verdict: Verdict
    monitor: SecureMonitor
    problems: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.problems

    def to_json(self) -> dict:
        return {
            "scenario": self.variant.label,
            "passed": self.passed,
            "expected": {
                "decision": self.variant.decision.value,
                "findings": sorted(c.value for c in self.variant.codes),
            },
            "verdict": self.verdict.to_json(),
            "report": self.monitor.report.to_json(),
            "problems": self.problems,
        }


def _remeasure_failed(monitor: SecureMonitor) -> Optional[str]:
    if not monitor.report.remeasure_failures:
        return "no re-measurement failure reported"
    return None


def _blocked_and_logged(monitor: SecureMonitor) -> Optional[str]:
    if not any(uuid == TA_B for _, _, uuid in monitor.report.blocked_calls):
        return "no blocked call recorded for the tampered TA"
    for entry in monitor.sml.entries:
        if entry.header.event_type == EventType.REMEASUREMENT:
            data = entry.parsed()
            if isinstance(data, RemeasureEventData) and data.status == RemeasureStatus.FAILED \
                    and data.response == FailureResponse.BLOCK:
                return None
    return "no failed re-measurement entry with Block response in the SML"


def _rollback_reported(monitor: SecureMonitor) -> Optional[str]:
    if not any(uuid == TA_A for uuid, _ in monitor.report.appraisal_failures):
        return "rollback not in appraisal_failures"
    return None


_C = FindingCode
_D = Decision

VARIANTS: tuple[Variant, ...] = (
    Variant("clean", "default", (), _D.TRUSTED, frozenset()),
    Variant(
        "tamper_ta", "load",
        (TamperSegment(TA_A, "text", 3, 0x40, at_ms=0),),
        _D.UNTRUSTED, frozenset({_C.GOLDEN_MISMATCH, _C.APPRAISAL_FAILURE_LOGGED}),
    ),
    Variant(
        "tamper_ta", "runtime",
        (TamperSegment(TA_B, "text", 0, 0x01, at_ms=60),),
        _D.UNTRUSTED, frozenset({_C.APPRAISAL_FAILURE_LOGGED}),
        check=_remeasure_failed,
    ),
    Variant(
        "rollback", "default",
        (DowngradeVersion(TA_A, 3),),
        _D.UNTRUSTED, frozenset({_C.ROLLBACK, _C.APPRAISAL_FAILURE_LOGGED}),
        check=_rollback_reported,
    ),
    Variant(
        "log_mutation", "after_signing",
        (MutateLogByte(2, 70, 0x80, after_signing=True),),
        _D.INVALID, frozenset({_C.QUOTE_INVALID}),
    ),
    Variant(
        "log_mutation", "before_signing",
        (MutateLogByte(2, 40, 0x80),),  # inside the prev-digest field
        _D.UNTRUSTED, frozenset({_C.CHAIN_BROKEN}),
    ),
    Variant(
        "log_mutation", "truncate",
        (TruncateLog(1),),
        _D.UNTRUSTED, frozenset({_C.VPCR_MISMATCH}),
    ),
    Variant("nonce_replay", "resubmit", (), _D.INVALID, frozenset({_C.NONCE_REPLAYED}), mode="resubmit"),
    Variant(
        "nonce_replay", "stale_response", (ReplayResponse(),),
        _D.INVALID, frozenset({_C.NONCE_MISMATCH}), mode="second_challenge",
    ),
    Variant("forged_quote", "default", (ForgeQuote(99),), _D.INVALID, frozenset({_C.QUOTE_INVALID})),
    Variant(
        "unknown_component", "default", (),
        _D.UNTRUSTED, frozenset({_C.UNKNOWN_COMPONENT, _C.APPRAISAL_FAILURE_LOGGED}),
        rogue_ta=True,
    ),
    Variant(
        "remeasure_block", "default",
        (TamperSegment(TA_B, "data", 5, 0xFF, at_ms=60),),
        _D.UNTRUSTED, frozenset({_C.APPRAISAL_FAILURE_LOGGED}),
        on_failure=FailureResponse.BLOCK,
        check=_blocked_and_logged,
    ),
)

SCENARIOS: tuple[str, ...] = tuple(dict.fromkeys(v.scenario for v in VARIANTS))


@dataclass(frozen=True)
class Fixture:
    policy_blob: bytes
    rml_file: bytes
    rml_key: KeyPair
    attest_key: KeyPair


def build_fixture() -> Fixture:
    rules = scenario_policy()
    blob = compile_policy(rules)
    rml_key = KeyPair.generate(KeyRole.RML, seed=KEY_SEEDS[KeyRole.RML])
    attest_key = KeyPair.generate(KeyRole.ATTEST, seed=KEY_SEEDS[KeyRole.ATTEST])
    # the rogue TA is deliberately absent from the reference list
    golden = [e for e in golden_entries(_golden_trace(), load_policy(blob)) if e.uuid != TA_ROGUE]
    return Fixture(blob, build_signed_rml(golden, rml_key), rml_key, attest_key)


def variant_trace(variant: Variant) -> Trace:
    trace = base_trace(variant.on_failure)
    if variant.rogue_ta:
        # a TA the TTP never provisioned, loaded at runtime
        trace.events.insert(5, UserTaLoad(22, TA_ROGUE, [Segment("text", b"rogue")]))
    trace.attacks = list(variant.attacks)
    return trace


def run_variant(variant: Variant, fixture: Optional[Fixture] = None, timeout: float = 5.0) -> ScenarioResult:
    fixture = fixture or build_fixture()
    trace = variant_trace(variant)
    monitor = run_device(trace, fixture.policy_blob, fixture.rml_file, fixture.rml_key.public)
    ttp = Ttp(fixture.attest_key.public, monitor.rml)
    responder = make_responder(monitor.snapshot, fixture.attest_key, trace.attacks)
    with AttestationServer(("127.0.0.1", 0), responder) as server:
        result = verifier_challenge(server.endpoint, ttp, timeout)
        verdict = result.verdict
        if variant.mode == "resubmit":
            verdict = ttp.validate(result.evidence, result.quote, result.nonce)
        elif variant.mode == "second_challenge":
            verdict = verifier_challenge(server.endpoint, ttp, timeout, Challenge.fresh()).verdict

    problems = []
    if verdict.decision != variant.decision:
        problems.append(f"decision {verdict.decision.value}, expected {variant.decision.value}")
    if verdict.codes != variant.codes:
        got = sorted(c.value for c in verdict.codes)
        want = sorted(c.value for c in variant.codes)
        problems.append(f"findings {got}, expected {want}")
    if variant.check is not None:
        msg = variant.check(monitor)
        if msg:
            problems.append(msg)
    return ScenarioResult(variant, verdict, monitor, problems)


def variants_of(name: str) -> list[Variant]:
    found = [v for v in VARIANTS if v.scenario == name or v.label == name]
    if not found:
        raise UnknownScenario(name)
    return found


def run_scenario(name: str, timeout: float = 5.0) -> list[ScenarioResult]:
    """Run every variant of ``name`` (or one ``name/variant``)."""
    variants = variants_of(name)
    fixture = build_fixture()
    return [run_variant(v, fixture, timeout) for v in variants]
