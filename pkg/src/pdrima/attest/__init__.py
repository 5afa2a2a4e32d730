"""Remote attestation: evidence, TTP validation, framing and transport."""

from .evidence import (
    AttestationEvidence,
    Challenge,
    Decision,
    Finding,
    FindingCode,
    NonceCache,
    SnapshotUnavailable,
    Ttp,
    Verdict,
    device_respond,
    encode_response,
    evidence_digest,
    split_response,
    ttp_validate,
)
from .transport import (
    AttestationServer,
    AttestTimeout,
    ChallengeResult,
    MalformedResponse,
    TransportError,
    fetch_evidence,
    verifier_challenge,
)
from .wire import DEFAULT_PORT, FramingError, MsgType, decode_frame, encode_frame

__all__ = [
    "AttestationEvidence",
    "AttestationServer",
    "AttestTimeout",
    "Challenge",
    "ChallengeResult",
    "DEFAULT_PORT",
    "Decision",
    "Finding",
    "FindingCode",
    "FramingError",
    "MalformedResponse",
    "MsgType",
    "NonceCache",
    "SnapshotUnavailable",
    "TransportError",
    "Ttp",
    "Verdict",
    "decode_frame",
    "device_respond",
    "encode_frame",
    "encode_response",
    "evidence_digest",
    "fetch_evidence",
    "split_response",
    "ttp_validate",
    "verifier_challenge",
]
