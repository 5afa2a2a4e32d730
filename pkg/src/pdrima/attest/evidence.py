"""Attestation evidence, quotes, and the TTP-side validation."""

from __future__ import annotations

import enum
import os
import threading
import uuid as uuidlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .. import canon
from ..appraise import AppraisalResult, Rml, appraise
from ..canon import DecodeError, KeyPair, Reader, Writer
from ..sml import (
    NUM_VPCRS,
    RemeasureEventData,
    SmlEntry,
    SmlSnapshot,
    StaticEventData,
    replay_vpcrs,
    verify_chain,
)

NONCE_SIZE = 32
MIN_EVIDENCE_SIZE = NONCE_SIZE + NUM_VPCRS * canon.DIGEST_SIZE + 4


class SnapshotUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class Challenge:
    nonce: bytes

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError("nonce must be 32 bytes")

    @classmethod
    def fresh(cls) -> "Challenge":
        return cls(os.urandom(NONCE_SIZE))


@dataclass(frozen=True)
class AttestationEvidence:
    nonce: bytes
    vpcr_snapshot: tuple[bytes, ...]
    sml_entries: tuple[SmlEntry, ...]

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError("nonce must be 32 bytes")
        if len(self.vpcr_snapshot) != NUM_VPCRS:
            raise ValueError("evidence carries exactly 4 vPCR values")
        object.__setattr__(self, "vpcr_snapshot", tuple(self.vpcr_snapshot))
        object.__setattr__(self, "sml_entries", tuple(self.sml_entries))

    @property
    def sml_entry_count(self) -> int:
        return len(self.sml_entries)

    def write(self, w: Writer) -> None:
        w.raw(self.nonce)
        for reg in self.vpcr_snapshot:
            w.digest(reg)
        w.u32(self.sml_entry_count)
        for entry in self.sml_entries:
            entry.write(w)

    @classmethod
    def read(cls, r: Reader) -> "AttestationEvidence":
        nonce = r.raw(NONCE_SIZE)
        vpcrs = tuple(r.digest() for _ in range(NUM_VPCRS))
        count = r.u32()
        if count > r.remaining():
            raise DecodeError(f"entry count {count} exceeds input")
        entries = tuple(SmlEntry.read(r) for _ in range(count))
        return cls(nonce, vpcrs, entries)

    def entry_offset(self, index: int) -> int:
        """Byte offset of entry ``index`` inside the encoded evidence."""
        offset = MIN_EVIDENCE_SIZE
        for entry in self.sml_entries[:index]:
            offset += len(canon.encode(entry))
        return offset


def evidence_digest(ae: Union[AttestationEvidence, bytes]) -> bytes:
    return canon.hash(ae if isinstance(ae, (bytes, bytearray)) else canon.encode(ae))


def device_respond(
    challenge: Challenge, snapshot: Optional[SmlSnapshot], sk_attest: KeyPair
) -> tuple[AttestationEvidence, bytes]:
    """Bind the nonce to a log/bank snapshot and sign H(encode(AE))."""
    if snapshot is None:
        raise SnapshotUnavailable("no SML snapshot available")
    ae = AttestationEvidence(challenge.nonce, snapshot.vpcrs, snapshot.entries)
    return ae, canon.sign(sk_attest, evidence_digest(ae))


def encode_response(ae: AttestationEvidence, quote: bytes) -> bytes:
    return canon.encode(ae) + quote


def split_response(payload: bytes) -> tuple[bytes, bytes]:
    if len(payload) < MIN_EVIDENCE_SIZE + canon.SIGNATURE_SIZE:
        raise DecodeError("response payload too short")
    return payload[: -canon.SIGNATURE_SIZE], payload[-canon.SIGNATURE_SIZE :]


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------


class Decision(enum.Enum):
    TRUSTED = "Trusted"
    UNTRUSTED = "Untrusted"
    INVALID = "Invalid"


class FindingCode(enum.Enum):
    QUOTE_INVALID = "QuoteInvalid"
    NONCE_MISMATCH = "NonceMismatch"
    NONCE_REPLAYED = "NonceReplayed"
    CHAIN_BROKEN = "ChainBroken"
    VPCR_MISMATCH = "VpcrMismatch"
    GOLDEN_MISMATCH = "GoldenMismatch"
    ROLLBACK = "Rollback"
    UNKNOWN_COMPONENT = "UnknownComponent"
    APPRAISAL_FAILURE_LOGGED = "AppraisalFailureLogged"


# evidence unusable; everything else means authentic evidence of a bad state
INVALIDATING = frozenset(
    {FindingCode.QUOTE_INVALID, FindingCode.NONCE_MISMATCH, FindingCode.NONCE_REPLAYED}
)

_APPRAISAL_FINDING = {
    AppraisalResult.UNTRUSTED_HASH_MISMATCH: FindingCode.GOLDEN_MISMATCH,
    AppraisalResult.UNTRUSTED_ROLLBACK: FindingCode.ROLLBACK,
    AppraisalResult.UNKNOWN_COMPONENT: FindingCode.UNKNOWN_COMPONENT,
}


@dataclass(frozen=True)
class Finding:
    code: FindingCode
    detail: str = ""
    uuid: Optional[bytes] = None

    def to_json(self) -> dict:
        out = {"code": self.code.value, "detail": self.detail}
        if self.uuid is not None:
            out["uuid"] = str(uuidlib.UUID(bytes=self.uuid))
        return out


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    findings: tuple[Finding, ...] = ()

    @classmethod
    def from_findings(cls, findings: Sequence[Finding]) -> "Verdict":
        if not findings:
            return cls(Decision.TRUSTED)
        if any(f.code in INVALIDATING for f in findings):
            return cls(Decision.INVALID, tuple(findings))
        return cls(Decision.UNTRUSTED, tuple(findings))

    @property
    def codes(self) -> frozenset[FindingCode]:
        return frozenset(f.code for f in self.findings)

    def to_json(self) -> dict:
        return {
            "decision": self.decision.value,
            "findings": [f.to_json() for f in self.findings],
        }


class NonceCache:
    """Accepted nonces; the only shared mutable state on the TTP side."""

    def __init__(self) -> None:
        self._seen: set[bytes] = set()
        self._lock = threading.Lock()

    def __contains__(self, nonce: bytes) -> bool:
        with self._lock:
            return nonce in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def add_if_new(self, nonce: bytes) -> bool:
        with self._lock:
            if nonce in self._seen:
                return False
            self._seen.add(nonce)
            return True


def ttp_validate(
    ae: Union[AttestationEvidence, bytes],
    quote: bytes,
    expected_nonce: bytes,
    pk_attest: bytes,
    rml: Rml,
    nonce_cache: NonceCache,
) -> Verdict:
    """Check quote, freshness, chain, vPCR replay and reference values, in
    that order. ``ae`` may be the raw encoded evidence as received; the
    quote is checked on those bytes before anything is decoded."""
    ae_bytes = bytes(ae) if isinstance(ae, (bytes, bytearray)) else canon.encode(ae)
    if not canon.verify(pk_attest, evidence_digest(ae_bytes), quote):
        return Verdict.from_findings([Finding(FindingCode.QUOTE_INVALID, "quote does not verify")])
    try:
        evidence = canon.decode(AttestationEvidence, ae_bytes)
    except (DecodeError, ValueError) as exc:
        return Verdict.from_findings(
            [Finding(FindingCode.QUOTE_INVALID, f"signed evidence is malformed: {exc}")]
        )

    if evidence.nonce != expected_nonce:
        return Verdict.from_findings([Finding(FindingCode.NONCE_MISMATCH, "nonce differs from challenge")])
    if not nonce_cache.add_if_new(evidence.nonce):
        return Verdict.from_findings([Finding(FindingCode.NONCE_REPLAYED, "nonce already accepted")])

    entries = evidence.sml_entries
    status = verify_chain(entries)
    if not status.ok:
        return Verdict.from_findings([Finding(FindingCode.CHAIN_BROKEN, str(status))])

    findings: list[Finding] = []
    if replay_vpcrs(entries) != evidence.vpcr_snapshot:
        replayed = replay_vpcrs(entries)
        bad = [i for i in range(NUM_VPCRS) if replayed[i] != evidence.vpcr_snapshot[i]]
        findings.append(Finding(FindingCode.VPCR_MISMATCH, f"registers {bad} differ from replay"))

    for index, entry in enumerate(entries):
        try:
            data = entry.parsed()
        except DecodeError as exc:
            findings.append(Finding(FindingCode.CHAIN_BROKEN, f"entry {index}: {exc}"))
            continue
        if isinstance(data, StaticEventData):
            outcome = appraise(rml, data.uuid, entry.result, data.version)
            if outcome != AppraisalResult.TRUSTED:
                findings.append(
                    Finding(_APPRAISAL_FINDING[outcome], f"entry {index}: {outcome.name}", data.uuid)
                )
            if data.appraisal is not None and not data.appraisal.trusted:
                findings.append(
                    Finding(
                        FindingCode.APPRAISAL_FAILURE_LOGGED,
                        f"entry {index}: device appraisal {data.appraisal.name}",
                        data.uuid,
                    )
                )
        elif isinstance(data, RemeasureEventData) and data.failed:
            findings.append(
                Finding(
                    FindingCode.APPRAISAL_FAILURE_LOGGED,
                    f"entry {index}: re-measurement failed ({data.response.name if data.response else '-'})",
                    data.uuid,
                )
            )
    return Verdict.from_findings(findings)


@dataclass
class Ttp:
    """Validator holding the reference values; the verifier only forwards."""

    pk_attest: bytes
    rml: Rml
    nonce_cache: NonceCache = field(default_factory=NonceCache)

    def validate(self, ae: Union[AttestationEvidence, bytes], quote: bytes, expected_nonce: bytes) -> Verdict:
        return ttp_validate(ae, quote, expected_nonce, self.pk_attest, self.rml, self.nonce_cache)
