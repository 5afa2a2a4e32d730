"""``pdrima`` command line: ttp, device, verifier, sim and inspect roles.

Exit codes: 0 success/Trusted, 1 Untrusted, 2 Invalid evidence or invalid
file, 3 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import uuid as uuidlib
from pathlib import Path
from typing import Optional, Sequence

from . import canon
from .appraise import (
    RML_MAGIC,
    RmlEntry,
    SignatureInvalid,
    build_signed_rml,
    entries_from_json,
    entry_to_json,
    load_rml,
)
from .attest.evidence import Decision, Ttp
from .attest.transport import (
    AttestationServer,
    AttestTimeout,
    MalformedResponse,
    TransportError,
    parse_endpoint,
    verifier_challenge,
)
from .attest.wire import DEFAULT_PORT
from .canon import DecodeError, KeyPair, KeyRole, Reader
from .policy import (
    EVENT_NAME,
    POLICY_MAGIC,
    compile_policy,
    load_policy,
    rule_to_json,
    rules_from_json,
)
from .sim.device import golden_entries, make_responder, run_device
from .sim.scenarios import VARIANTS, UnknownScenario, run_scenario
from .sim.trace import TraceError, load_trace
from .sml import SML_MAGIC, parse_dump, verify_chain

EXIT_OK = 0
EXIT_UNTRUSTED = 1
EXIT_INVALID = 2
EXIT_USAGE = 3

_DECISION_EXIT = {
    Decision.TRUSTED: EXIT_OK,
    Decision.UNTRUSTED: EXIT_UNTRUSTED,
    Decision.INVALID: EXIT_INVALID,
}

log = logging.getLogger("pdrima")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _load_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None


def _public_key(path: str) -> bytes:
    data = _read(path)
    if len(data) != canon.PUBLIC_KEY_SIZE:
        raise UsageError(f"{path}: expected a {canon.PUBLIC_KEY_SIZE}-byte public key")
    return data


def _secret_key(path: str, role: KeyRole) -> KeyPair:
    data = _read(path)
    if len(data) != canon.SECRET_KEY_SIZE:
        raise UsageError(f"{path}: expected a {canon.SECRET_KEY_SIZE}-byte secret key")
    return KeyPair.from_secret(role, data)


def _uuid(b: bytes) -> str:
    return str(uuidlib.UUID(bytes=b))


# ---------------------------------------------------------------------------
# ttp
# ---------------------------------------------------------------------------


def cmd_ttp_keygen(args) -> int:
    if args.seed is not None:
        log.warning("seeded keys are reproducible; use them for tests only")
    key = KeyPair.generate(args.role, seed=args.seed)
    _write(f"{args.output}.sk", key.secret)
    _write(f"{args.output}.pk", key.public)
    print(f"{args.role} key: {args.output}.sk, {args.output}.pk")
    print(f"public: {key.public.hex()}")
    return EXIT_OK


def cmd_ttp_compile_policy(args) -> int:
    try:
        rules = rules_from_json(_load_json(args.rules))
    except ValueError as exc:
        raise UsageError(f"{args.rules}: {exc}") from None
    blob = compile_policy(rules)
    _write(args.output, blob)
    print(f"{len(rules)} rules -> {args.output} ({len(blob)} bytes, digest {canon.hash(blob).hex()})")
    return EXIT_OK


def cmd_ttp_sign_rml(args) -> int:
    try:
        entries = entries_from_json(_load_json(args.entries))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.entries}: {exc}") from None
    key = _secret_key(args.key, KeyRole.RML)
    try:
        data = build_signed_rml(entries, key)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(args.output, data)
    print(f"{len(entries)} entries -> {args.output}")
    return EXIT_OK


def cmd_ttp_golden(args) -> int:
    trace = _trace(args.trace)
    policy = _policy(args.policy)
    entries = golden_entries(trace, policy)
    text = json.dumps([entry_to_json(e) for e in entries], indent=2) + "\n"
    if args.output:
        _write(args.output, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# device
# ---------------------------------------------------------------------------


def _trace(path: str):
    try:
        return load_trace(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except TraceError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _policy(path: str):
    try:
        return load_policy(_read(path))
    except DecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _run(args):
    trace = _trace(args.trace)
    try:
        monitor = run_device(
            trace, _read(args.policy), _read(args.rml), _public_key(args.pk_rml), args.capacity
        )
    except (DecodeError, SignatureInvalid) as exc:
        raise UsageError(f"device boot failed: {exc}") from None
    return trace, monitor


def cmd_device_run(args) -> int:
    _, monitor = _run(args)
    if args.dump_sml:
        _write(args.dump_sml, monitor.sml.dump())
    if args.json:
        print(json.dumps(monitor.report.to_json(), indent=2))
    else:
        print(monitor.report.render())
    return EXIT_OK


def cmd_device_dump_sml(args) -> int:
    _, monitor = _run(args)
    _write(args.output, monitor.sml.dump())
    print(f"{monitor.sml.entry_count} entries -> {args.output}")
    return EXIT_OK


def cmd_device_serve(args) -> int:
    trace, monitor = _run(args)
    key = _secret_key(args.key, KeyRole.ATTEST)
    responder = make_responder(monitor.snapshot, key, trace.attacks)
    host, port = parse_endpoint(args.listen, default_host="0.0.0.0")
    try:
        server = AttestationServer((host, port), responder)
    except OSError as exc:
        raise UsageError(f"cannot listen on {host}:{port}: {exc.strerror}") from None
    bound = server.endpoint
    print(f"listening on {bound[0]}:{bound[1]} ({monitor.sml.entry_count} SML entries)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# verifier
# ---------------------------------------------------------------------------


def cmd_verifier_challenge(args) -> int:
    try:
        rml = load_rml(_read(args.rml), _public_key(args.pk_rml))
    except (DecodeError, SignatureInvalid) as exc:
        raise UsageError(f"{args.rml}: {exc}") from None
    ttp = Ttp(_public_key(args.pk_attest), rml)
    try:
        result = verifier_challenge(args.target, ttp, args.timeout)
    except (AttestTimeout, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedResponse as exc:
        print(f"malformed response: {exc}", file=sys.stderr)
        return EXIT_INVALID
    verdict = result.verdict
    if args.json:
        print(json.dumps(verdict.to_json(), indent=2))
    else:
        print(f"verdict: {verdict.decision.value}")
        for f in verdict.findings:
            suffix = f" [{_uuid(f.uuid)}]" if f.uuid else ""
            print(f"  {f.code.value}{suffix}: {f.detail}")
    return _DECISION_EXIT[verdict.decision]


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------


def cmd_sim_scenario(args) -> int:
    names = [args.name] if args.name != "all" else list(dict.fromkeys(v.scenario for v in VARIANTS))
    results = []
    try:
        for name in names:
            results += run_scenario(name)
    except UnknownScenario:
        known = ", ".join(dict.fromkeys(v.scenario for v in VARIANTS))
        raise UsageError(f"unknown scenario {args.name!r} (known: {known})") from None
    if args.json:
        print(json.dumps([r.to_json() for r in results], indent=2))
    else:
        for r in results:
            codes = ",".join(sorted(c.value for c in r.verdict.codes)) or "-"
            status = "PASS" if r.passed else "FAIL"
            print(f"{status}  {r.variant.label:32s} {r.verdict.decision.value:9s} {codes}")
            for problem in r.problems:
                print(f"      {problem}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_UNTRUSTED


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


def _inspect_policy(data: bytes) -> int:
    try:
        policy = load_policy(data)
    except DecodeError as exc:
        print(f"invalid policy blob: {exc}")
        return EXIT_INVALID
    print(f"policy blob, digest {policy.blob_digest.hex()}")
    print(f"{len(policy.rules)} rules")
    for i, rule in enumerate(policy.rules):
        print(f"  [{i}] {json.dumps(rule_to_json(rule))}")
    return EXIT_OK


def _inspect_rml(data: bytes, pk: Optional[bytes]) -> int:
    try:
        r = Reader(data[: -canon.SIGNATURE_SIZE])
        r.raw(5)
        entries = r.list(lambda: RmlEntry.read(r))
        r.done()
    except (DecodeError, ValueError) as exc:
        print(f"invalid RML: {exc}")
        return EXIT_INVALID
    print(f"RML, {len(entries)} entries")
    for e in entries:
        print(f"  {_uuid(e.uuid)}  golden {e.golden_hash.hex()}  min_version {e.min_version}")
    if pk is None:
        print("signature not checked (pass --pk-rml)")
        return EXIT_USAGE
    try:
        load_rml(data, pk)
    except (DecodeError, SignatureInvalid) as exc:
        print(f"signature INVALID: {exc}")
        return EXIT_INVALID
    print("signature OK")
    return EXIT_OK


def _inspect_sml(data: bytes) -> int:
    try:
        meta, entries = parse_dump(data)
    except DecodeError as exc:
        print(f"invalid SML dump: {exc}")
        return EXIT_INVALID
    print(
        f"SML v{meta.format_version}, hash alg {meta.hash_alg_id}, {meta.entry_count} entries, "
        f"capacity {meta.capacity}, head {meta.head_digest.hex()}"
    )
    for i, e in enumerate(entries):
        h = e.header
        print(
            f"  [{i:4d}] vPCR[{h.vpcr_index}] {EVENT_NAME[h.event_type]:20s} "
            f"digest {h.digest.hex()[:16]}.. result {e.result.hex()[:16]}.. size {e.size}"
        )
    status = verify_chain(entries)
    if not status.ok:
        print(f"chain: {status}")
        return EXIT_INVALID
    head = entries[-1].header.digest if entries else canon.ZERO_DIGEST
    if head != meta.head_digest:
        print("chain: head digest does not match metadata")
        return EXIT_INVALID
    print("chain: Ok")
    return EXIT_OK


def _inspect_trace(path: str) -> int:
    try:
        trace = load_trace(path)
    except TraceError as exc:
        print(f"invalid trace: {exc}")
        return EXIT_INVALID
    counts: dict[str, int] = {}
    for ev in trace.events:
        counts[type(ev).__name__] = counts.get(type(ev).__name__, 0) + 1
    print(f"trace, {len(trace.events)} events, {len(trace.attacks)} attacks")
    for name, n in counts.items():
        print(f"  {name:20s} {n}")
    for attack in trace.attacks:
        print(f"  attack: {attack}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    data = _read(args.file)
    magic = data[:4]
    if magic == POLICY_MAGIC:
        return _inspect_policy(data)
    if magic == RML_MAGIC:
        return _inspect_rml(data, _public_key(args.pk_rml) if args.pk_rml else None)
    if magic == SML_MAGIC:
        return _inspect_sml(data)
    if args.file.endswith(".jsonl") or data[:1] in (b"{", b"#") or not data:
        return _inspect_trace(args.file)
    print("unrecognized file format")
    return EXIT_INVALID


# ---------------------------------------------------------------------------


def _device_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", required=True, help="event trace (.jsonl)")
    p.add_argument("--policy", required=True, help="compiled policy blob")
    p.add_argument("--rml", required=True, help="signed reference measurement list")
    p.add_argument("--pk-rml", required=True, help="RML verification key (.pk)")
    p.add_argument("--capacity", type=int, default=4096, help="SML entry budget")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdrima", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    roles = parser.add_subparsers(dest="role", required=True, parser_class=_Parser)

    ttp = roles.add_parser("ttp", help="enrollment and reference values").add_subparsers(dest="cmd", required=True)
    p = ttp.add_parser("keygen", help="generate a key pair")
    p.add_argument("--role", choices=[r.value for r in KeyRole], default="attest")
    p.add_argument("--seed", type=int, help="deterministic key (tests only)")
    p.add_argument("-o", "--output", required=True, help="output prefix; writes PREFIX.sk and PREFIX.pk")
    p.set_defaults(func=cmd_ttp_keygen)
    p = ttp.add_parser("compile-policy", help="compile JSON rules into a policy blob")
    p.add_argument("rules")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ttp_compile_policy)
    p = ttp.add_parser("sign-rml", help="sign a JSON reference list")
    p.add_argument("entries")
    p.add_argument("--key", required=True, help="RML secret key (.sk)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ttp_sign_rml)
    p = ttp.add_parser("golden", help="compute reference entries from a known-good trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ttp_golden)

    device = roles.add_parser("device", help="simulated TEE device").add_subparsers(dest="cmd", required=True)
    p = device.add_parser("run", help="replay a trace and print the report")
    _device_inputs(p)
    p.add_argument("--dump-sml", metavar="PATH")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_device_run)
    p = device.add_parser("dump-sml", help="replay a trace and write the SML")
    _device_inputs(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_device_dump_sml)
    p = device.add_parser("serve", help="replay a trace, then answer attestation challenges")
    _device_inputs(p)
    p.add_argument("--key", required=True, help="attestation secret key (.sk)")
    p.add_argument("--listen", default=f":{DEFAULT_PORT}", help="[host]:port")
    p.set_defaults(func=cmd_device_serve)

    verifier = roles.add_parser("verifier", help="remote challenger").add_subparsers(dest="cmd", required=True)
    p = verifier.add_parser("challenge", help="attest a device; the TTP check runs in-process")
    p.add_argument("--target", required=True, help="host:port")
    p.add_argument("--rml", required=True, help="TTP reference list")
    p.add_argument("--pk-rml", required=True)
    p.add_argument("--pk-attest", required=True)
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verifier_challenge)

    sim = roles.add_parser("sim", help="built-in attack scenarios").add_subparsers(dest="cmd", required=True)
    p = sim.add_parser("scenario", help="run a scenario (or 'all')")
    p.add_argument("name")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_sim_scenario)

    p = roles.add_parser("inspect", help="describe and check a policy, RML, SML dump or trace")
    p.add_argument("file")
    p.add_argument("--pk-rml", help="key for checking an RML signature")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pdrima: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
