"""Policy-driven runtime integrity measurement and remote attestation for a
simulated TrustZone TEE."""

__version__ = "0.1.0"
