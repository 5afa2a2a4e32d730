import os
import random

import pytest

from pdrima import canon
from pdrima.canon import DecodeError
from pdrima.measure import ObjectKind
from pdrima.policy import EventType
from pdrima.sml import (
    BreakReason,
    CapacityExceeded,
    ChainBroken,
    IndexOutOfRange,
    Sml,
    SmlEntry,
    StaticEventData,
    VpcrBank,
    dump_entries,
    entry_digest,
    extend_vpcr,
    parse_dump,
    replay_vpcrs,
    select_entries,
    verify_chain,
)

import oracles
from helpers import build_log

def test_entry_digest_frozen():
    result = oracles.sha256(b"r")
    got = entry_digest(2, EventType.USER_TA_LOAD, bytes(32), b"hello", result)
    assert got.hex() == "1b452b9da9322d28aa7eddc3433694309e2a434a811f9cb13e82ceb7b9cc67cc"


def test_entry_digest_binds_every_field():
    base = (1, EventType.STATIC_COMPONENT_LOAD, bytes(32), b"data", bytes(range(32)))
    d0 = entry_digest(*base)
    variants = [
        (2,) + base[1:],
        base[:1] + (EventType.USER_TA_LOAD,) + base[2:],
        base[:2] + (b"\x01" * 32,) + base[3:],
        base[:3] + (b"datb",) + base[4:],
        base[:4] + (bytes(32),),
    ]
    assert all(entry_digest(*v) != d0 for v in variants)


def test_first_append_seeds_with_zero():
    sml, bank = Sml(), VpcrBank()
    entry = sml.append(bank, 0, EventType.KERNEL_LOAD, b"x", bytes(32))
    assert entry.header.prev_digest == canon.ZERO_DIGEST
    assert entry.size == 1
    assert sml.head_digest == entry.header.digest
    assert bank[0] == oracles.extend(bytes(32), entry.header.digest)


def test_append_accepts_event_data_objects():
    sml, bank = Sml(), VpcrBank()
    data = StaticEventData(bytes(16), ObjectKind.KERNEL, 1, bytes(32))
    entry = sml.append(bank, 0, EventType.KERNEL_LOAD, data, bytes(32))
    assert entry.parsed() == data


def test_capacity_exceeded_is_atomic():
    sml, bank = build_log(3, capacity=3)
    before_entries, before_bank = sml.entries, bank.registers
    with pytest.raises(CapacityExceeded):
        sml.append(bank, 1, EventType.STATIC_COMPONENT_LOAD, b"", bytes(32))
    assert sml.entries == before_entries and bank.registers == before_bank


def test_extend_vpcr():
    bank = VpcrBank()
    m = oracles.sha256(b"x")
    new = extend_vpcr(bank, 2, m)
    assert new.hex() == "7f85193790de75e46b70bfec3614098f47332a6993dabac6e38ad35f47df5da4"
    assert new == oracles.extend(bytes(32), m)
    assert bank[0] == bank[1] == bank[3] == bytes(32)
    with pytest.raises(IndexOutOfRange):
        extend_vpcr(bank, 4, m)


def test_extend_order_matters():
    rng = random.Random(1)
    for _ in range(50):
        m1, m2 = rng.randbytes(32), rng.randbytes(32)
        a, b = VpcrBank(), VpcrBank()
        extend_vpcr(a, 0, m1), extend_vpcr(a, 0, m2)
        extend_vpcr(b, 0, m2), extend_vpcr(b, 0, m1)
        assert a[0] != b[0]


def test_verify_empty_and_honest():
    assert verify_chain([]).ok
    assert replay_vpcrs([]) == (bytes(32),) * 4
    sml, bank = build_log(50)
    assert verify_chain(sml.entries).ok
    assert replay_vpcrs(sml.entries) == bank.registers


@pytest.mark.parametrize("seed", range(100))
def test_replay_equals_live_bank(seed):
    sml, bank = build_log(random.Random(seed).randint(0, 60), seed)
    assert verify_chain(sml.entries).ok
    assert replay_vpcrs(sml.entries) == bank.registers


def test_dropping_last_entry_changes_only_its_register():
    sml, bank = build_log(20, seed=4)
    entries = sml.entries
    replayed = replay_vpcrs(entries[:-1])
    dropped = entries[-1].header.vpcr_index
    for i in range(4):
        assert (replayed[i] != bank[i]) == (i == dropped)


def test_truncation_is_evident():
    sml, bank = build_log(15, seed=8)
    for k in range(len(sml)):
        assert replay_vpcrs(sml.entries[:k]) != bank.registers


def test_single_byte_flip_sweep_reports_index():
    sml, bank = build_log(5, seed=2)
    entries = list(sml.entries)
    for index, entry in enumerate(entries):
        raw = canon.encode(entry)
        for off in range(len(raw)):
            mutated = bytearray(raw)
            mutated[off] ^= 0x5A
            try:
                bad = canon.decode(SmlEntry, bytes(mutated))
            except DecodeError:
                continue  # rejected at parse time
            status = verify_chain(entries[:index] + [bad] + entries[index + 1 :])
            assert not status.ok
            assert status.broken_at in (index, index + 1)
            if status.broken_at == index + 1:
                # only a corrupted own-digest can push the break to the successor
                assert 2 <= off < 34 and status.reason == BreakReason.PREV_MISMATCH


def test_break_reasons():
    sml, _ = build_log(3, seed=3)
    e = list(sml.entries)
    h = e[1].header
    wrong_prev = SmlEntry(type(h)(h.vpcr_index, h.event_type, h.digest, bytes(32)), e[1].event_data, e[1].size, e[1].result)
    assert verify_chain([e[0], wrong_prev, e[2]]).reason == BreakReason.PREV_MISMATCH
    wrong_size = SmlEntry(h, e[1].event_data, e[1].size + 1, e[1].result)
    assert verify_chain([e[0], wrong_size, e[2]]).reason == BreakReason.SIZE_MISMATCH
    wrong_result = SmlEntry(h, e[1].event_data, e[1].size, bytes(32))
    status = verify_chain([e[0], wrong_result, e[2]])
    assert (status.broken_at, status.reason) == (1, BreakReason.DIGEST_MISMATCH)
    assert str(status) == "BrokenAt(1, DigestMismatch)"
    with pytest.raises(ChainBroken):
        replay_vpcrs([e[0], wrong_result])


def test_dump_round_trip():
    sml, _ = build_log(12, seed=9, capacity=64)
    data = sml.dump()
    meta, entries = parse_dump(data)
    assert entries == list(sml.entries)
    assert meta.entry_count == 12 and meta.capacity == 64
    assert meta.head_digest == sml.head_digest
    assert dump_entries(entries, 64) == data
    with pytest.raises(DecodeError):
        parse_dump(data + b"\x00")
    with pytest.raises(DecodeError):
        parse_dump(b"XXXX" + data[4:])


def test_select_entries():
    sml, bank = build_log(40, seed=11)
    entries = sml.entries
    parts = [select_entries(entries, vpcr_index=i) for i in range(4)]
    assert all(e.header.vpcr_index == i for i, part in enumerate(parts) for e in part)
    merged = sorted((e for p in parts for e in p), key=entries.index)
    assert merged == list(entries)
    assert select_entries(entries, uuid=os.urandom(16)) == []


def test_select_by_uuid():
    sml, bank = Sml(), VpcrBank()
    a, b = b"\x0a" * 16, b"\x0b" * 16
    for u, kind, vp in [(a, ObjectKind.USER_TA, 2), (b, ObjectKind.USER_TA, 2), (a, ObjectKind.USER_TA, 2)]:
        sml.append(bank, vp, EventType.USER_TA_LOAD, StaticEventData(u, kind, 0, bytes(32)), bytes(32))
    picked = select_entries(sml.entries, uuid=a)
    assert [sml.entries.index(e) for e in picked] == [0, 2]
    assert select_entries(sml.entries, uuid=a, event_type=EventType.SYSCALL) == []


def test_no_mutating_interface():
    sml, _ = build_log(2)
    assert isinstance(sml.entries, tuple)
    with pytest.raises(AttributeError):
        sml.entries[0].header.digest = bytes(32)  # frozen
