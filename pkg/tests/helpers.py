"""Seeded random traces and device setups for property tests."""

import random
import uuid as uuidlib

from pdrima.appraise import build_signed_rml
from pdrima.measure import FailureResponse, Segment
from pdrima.policy import Action, Condition, EventContext, EventType, PolicyRule, compile_policy, load_policy
from pdrima.sim.device import golden_entries, run_device
from pdrima.sml import Sml, VpcrBank
from pdrima.sim.trace import (
    InterTaCall,
    KernelLoad,
    RemeasureConfig,
    StaticComponentLoad,
    TamperSegment,
    Syscall,
    TaInvocation,
    Tick,
    Trace,
    UserTaLoad,
)

MEASURE_ALL = [
    PolicyRule(Action.APPRAISE, EventType.KERNEL_LOAD),
    PolicyRule(Action.MEASURE, EventType.STATIC_COMPONENT_LOAD),
    PolicyRule(Action.APPRAISE, EventType.USER_TA_LOAD, measure_properties=True),
    PolicyRule(Action.MEASURE, EventType.TA_INVOCATION),
    PolicyRule(Action.MEASURE, EventType.INTER_TA_CALL),
    PolicyRule(Action.MEASURE, EventType.SYSCALL, (Condition.min_size_bytes(1),)),
    PolicyRule(Action.MEASURE, EventType.REMEASUREMENT),
]


def _uuid(rng: random.Random) -> bytes:
    return uuidlib.UUID(int=rng.getrandbits(128)).bytes


def _segments(rng: random.Random, max_size: int = 64) -> list[Segment]:
    return [
        Segment(f"s{i}", rng.randbytes(rng.randint(0, max_size)))
        for i in range(rng.randint(1, 4))
    ]


def random_trace(seed: int, n_runtime: int = 30) -> Trace:
    rng = random.Random(seed)
    t = 0
    events = [KernelLoad(t, _segments(rng), version=rng.randint(0, 5),
                         remeasure=RemeasureConfig(rng.randint(5, 40)) if rng.random() < 0.5 else None)]
    for _ in range(rng.randint(0, 3)):
        t += rng.randint(0, 3)
        events.append(StaticComponentLoad(t, _uuid(rng), _segments(rng)))
    tas = []
    for _ in range(rng.randint(1, 4)):
        t += rng.randint(0, 5)
        u = _uuid(rng)
        tas.append(u)
        props = {"name": f"ta{len(tas)}"} if rng.random() < 0.5 else None
        remeasure = RemeasureConfig(rng.randint(5, 40), rng.choice(list(FailureResponse))) if rng.random() < 0.5 else None
        events.append(UserTaLoad(t, u, _segments(rng), rng.randint(0, 9), props, remeasure))
    for _ in range(n_runtime):
        t += rng.randint(0, 10)
        kind = rng.randrange(4)
        params = rng.randbytes(rng.randint(0, 8))
        if kind == 0:
            events.append(TaInvocation(t, rng.choice(tas), params, rng.getrandbits(32)))
        elif kind == 1:
            events.append(InterTaCall(t, rng.choice(tas), rng.choice(tas), params, 0))
        elif kind == 2:
            events.append(Syscall(t, rng.randint(0, 20), params, 0, rng.choice(tas + [None])))
        else:
            events.append(Tick(t))
    return Trace(events)


def device_for(trace: Trace, rml_key, rules=MEASURE_ALL, capacity: int = 4096):
    blob = compile_policy(rules)
    rml = build_signed_rml(golden_entries(trace, load_policy(blob)), rml_key)
    return run_device(trace, blob, rml, rml_key.public, capacity), blob, rml


UUIDS = [bytes([i]) * 16 for i in range(3)]


def oracle_rules(policy):
    return [(int(r.event), [(int(c.kind), c.operand) for c in r.conditions]) for r in policy.rules]


def oracle_ctx(ctx):
    return {"event": int(ctx.event), "subject": ctx.subject_uuid, "caller": ctx.caller_uuid,
            "number": ctx.syscall_number, "size": ctx.object_size}


def random_policy_and_ctx(rng):
    events = list(EventType)[:3]  # small alphabet so matches are common
    def cond():
        k = rng.randrange(4)
        if k == 0:
            return Condition.uuid_equals(rng.choice(UUIDS))
        if k == 1:
            return Condition.caller_uuid_equals(rng.choice(UUIDS))
        if k == 2:
            return Condition.syscall_number_equals(rng.randrange(3))
        return Condition.min_size_bytes(rng.randrange(10))
    rs = [PolicyRule(rng.choice(list(Action)), rng.choice(events),
                     tuple(cond() for _ in range(rng.randrange(3)))) for _ in range(rng.randint(0, 10))]
    pick = lambda v: v if rng.random() < 0.7 else None  # noqa: E731
    ctx = EventContext(rng.choice(events), pick(rng.choice(UUIDS)), pick(rng.choice(UUIDS)),
                       pick(rng.randrange(3)), pick(rng.randrange(12)))
    return load_policy(compile_policy(rs)), ctx


EVENT_FOR_VPCR = [EventType.KERNEL_LOAD, EventType.STATIC_COMPONENT_LOAD, EventType.USER_TA_LOAD, EventType.SYSCALL]


def build_log(n, seed=0, capacity=4096):
    rng = random.Random(seed)
    sml, bank = Sml(capacity), VpcrBank()
    for _ in range(n):
        i = rng.randrange(4)
        sml.append(bank, i, EVENT_FOR_VPCR[i], rng.randbytes(rng.randint(0, 40)), rng.randbytes(32))
    return sml, bank


TA = bytes.fromhex("8aaaf200245011e4abe20002a5d5c51b")


def schedule_trace(interval, horizon, tamper_at=None):
    events = [
        KernelLoad(0, [Segment("text", b"kernel")]),
        UserTaLoad(3, TA, [Segment("text", b"ta-image")], remeasure=RemeasureConfig(interval)),
    ]
    events += [Tick(t) for t in range(4, horizon)]
    attacks = [TamperSegment(TA, "text", 0, 1, tamper_at)] if tamper_at is not None else []
    return Trace(events, attacks)
