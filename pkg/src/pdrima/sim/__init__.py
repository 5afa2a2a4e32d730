"""Trace-driven device simulation and built-in attack scenarios."""

from .device import SecureMonitor, SimReport, boot_monitor, golden_entries, make_responder, run_device
from .scenarios import SCENARIOS, VARIANTS, ScenarioResult, UnknownScenario, run_scenario, run_variant, variants_of
from .trace import (
    KERNEL_UUID,
    NonMonotoneTimestamp,
    ParseError,
    Trace,
    TraceError,
    load_trace,
    parse_trace,
    trace_to_lines,
    write_trace,
)

__all__ = [
    "KERNEL_UUID",
    "NonMonotoneTimestamp",
    "ParseError",
    "SCENARIOS",
    "ScenarioResult",
    "SecureMonitor",
    "SimReport",
    "Trace",
    "TraceError",
    "UnknownScenario",
    "VARIANTS",
    "boot_monitor",
    "golden_entries",
    "load_trace",
    "make_responder",
    "parse_trace",
    "run_device",
    "run_scenario",
    "run_variant",
    "trace_to_lines",
    "variants_of",
    "write_trace",
]
