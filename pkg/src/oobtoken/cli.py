"""Command-line entry point.

Exit codes: 0 success, 1 a token did not validate, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import random
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from . import netsim
from .endpoint import format_ms
from .keys import KeyRegistry
from .tokens import (
    DEFAULT_LIFETIME_S,
    CanonicalAddress,
    MalformedToken,
    Verdict,
    decode_token,
    encode_token,
    issue_token,
    validate_token,
)

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _address(text: str) -> CanonicalAddress:
    try:
        return CanonicalAddress.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an IP address: {text!r}") from None


def _hex(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not hex: {text!r}") from None


def _number(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _wall_ms() -> int:
    return time.time_ns() // 1_000_000


def _load_keys(args) -> KeyRegistry:
    try:
        with open(args.key_file) as secrets:
            if getattr(args, "registry_file", None):
                with open(args.registry_file) as state:
                    return KeyRegistry.load(secrets, state)
            return KeyRegistry.load(secrets)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read keys: {exc}") from None


def cmd_token_keygen(args) -> int:
    source = random.Random(args.seed).randbytes if args.seed is not None else None
    reg = KeyRegistry(source)
    for owner in args.owner:
        try:
            reg.register(owner)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    state = io.StringIO()
    with open(args.out, "w") as secrets:
        reg.export(state, secrets)
    if args.registry_out:
        Path(args.registry_out).write_text(state.getvalue())
    for rec in reg:
        print(f"{rec.key_id.hex()} {rec.owner_entity}")
    return EXIT_OK


def cmd_token_issue(args) -> int:
    reg = _load_keys(args)
    if args.key_id is not None:
        key = reg.lookup(args.key_id)
        if key is None:
            raise UsageError(f"key {args.key_id.hex()} not in {args.key_file}")
    else:
        key = next(iter(reg), None)
        if key is None:
            raise UsageError(f"{args.key_file} holds no keys")
    if key.revoked:
        raise UsageError(f"key {key.key_id.hex()} is revoked")
    nonce_source = random.Random(args.seed).randbytes if args.seed is not None else os.urandom
    now = args.now if args.now is not None else _wall_ms()
    if not 0 <= args.lifetime < 1 << 32 or not 0 <= now < 1 << 64:
        raise UsageError("--lifetime must fit 32 bits and --now 64 bits, both non-negative")
    token = issue_token(key, args.ip, now, args.lifetime, nonce_source)
    print(encode_token(token).hex())
    return EXIT_OK


def cmd_token_inspect(args) -> int:
    try:
        token = decode_token(args.token_hex)
    except MalformedToken as exc:
        print(f"Malformed: {exc}")
        return EXIT_INVALID
    print(token.render())
    return EXIT_OK


def cmd_token_validate(args) -> int:
    reg = _load_keys(args)
    now = args.now if args.now is not None else _wall_ms()
    verdict = validate_token(reg.lookup, args.token_hex, args.ip, now)
    print(verdict)
    return EXIT_OK if verdict is Verdict.VALID else EXIT_INVALID


def cmd_sweep(args) -> int:
    if args.rtt_max < 0 or args.rtt_step <= 0 or args.t_proc < 0:
        raise UsageError("need --rtt-max >= 0, --rtt-step > 0 and --t-proc >= 0")
    rtts = []
    rtt = Fraction(0)
    while rtt <= args.rtt_max:
        rtts.append(rtt)
        rtt += args.rtt_step
    try:
        rows = netsim.sweep(rtts, args.t_proc)
    except netsim.ScenarioError as exc:
        raise UsageError(str(exc)) from None
    _write(args.out, netsim.sweep_csv(rows))
    ratio = netsim.overhead_ratio(90, args.t_proc)
    print(f"rtt=90: {float(ratio) * 100:.1f}%", file=sys.stderr)
    return EXIT_OK


def cmd_website(args) -> int:
    if args.depth <= 0:
        raise UsageError("--depth must be > 0")
    if args.rtt < 0 or args.connections <= 0:
        raise UsageError("--rtt must be >= 0 and --connections > 0")
    analytic = netsim.website_savings(args.depth, args.rtt)
    print(f"connections: {format_ms(args.connections)} (each saves one round trip: "
          f"{format_ms(args.connections * args.rtt)} ms of handshake time in total)")
    print(f"sequential depth: {format_ms(args.depth)}")
    print(f"rtt: {format_ms(args.rtt)} ms")
    if not args.simulate:
        print(f"savings: {format_ms(analytic)} ms")
        return EXIT_OK
    if args.depth.denominator != 1:
        raise UsageError("--simulate needs a whole-number --depth")
    report = netsim.run(netsim.chain(int(args.depth), args.rtt, args.t_proc, netsim.Mechanism.DNS_TOKEN))
    print(f"analytic: {format_ms(analytic)} ms")
    print(f"baseline page establishment: {format_ms(report.baseline_page_time)} ms")
    print(f"proposal page establishment: {format_ms(report.page_establishment_time)} ms")
    print(f"savings: {format_ms(report.total_savings)} ms")
    return EXIT_OK


def _resolve_scenario(name: str) -> netsim.ScenarioConfig:
    path = Path(name)
    if path.exists():
        return netsim.ScenarioConfig.load(path)
    if name in netsim.bundled_scenarios() or f"{name}.json" in netsim.bundled_scenarios():
        return netsim.load_bundled(name)
    raise UsageError(f"no scenario file {name!r} (bundled: {', '.join(netsim.bundled_scenarios())})")


def cmd_run(args) -> int:
    try:
        config = _resolve_scenario(args.scenario)
    except netsim.ScenarioError as exc:
        raise UsageError(f"{args.scenario}: {exc}") from None
    report = netsim.run(config)
    _write(args.out, report.to_csv())
    for ev in report.events:
        print(f"{ev.kind}: t={format_ms(ev.time_ms)} ms server={ev.server} key={ev.key_id} "
              f"owner={ev.owner} unrequited={ev.spoof_count}", file=sys.stderr)
    if report.page_establishment_time is not None:
        print(f"page established at {format_ms(report.page_establishment_time)} ms; "
              f"savings vs no tokens: {format_ms(report.total_savings or 0)} ms", file=sys.stderr)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name in netsim.bundled_scenarios():
        print(name)
    return EXIT_OK


def _write(out: str, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oobtoken", description="Out-of-band address validation tokens.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    tok = sub.add_parser("token", help="issue, inspect and validate tokens")
    tsub = tok.add_subparsers(dest="token_command", required=True)

    kg = tsub.add_parser("keygen", help="create a secrets file")
    kg.add_argument("--owner", action="append", required=True, help="issuer entity; repeat for several keys")
    kg.add_argument("--out", required=True, help="secrets file to write")
    kg.add_argument("--registry-out", help="also write the key state file")
    kg.add_argument("--seed", type=int)
    kg.set_defaults(func=cmd_token_keygen)

    iss = tsub.add_parser("issue")
    iss.add_argument("--key-file", required=True)
    iss.add_argument("--key-id", type=_hex)
    iss.add_argument("--ip", type=_address, required=True)
    iss.add_argument("--lifetime", type=int, default=DEFAULT_LIFETIME_S)
    iss.add_argument("--now", type=int, help="clock in ms (default: wall clock)")
    iss.add_argument("--seed", type=int, help="seed the nonce generator")
    iss.set_defaults(func=cmd_token_issue)

    ins = tsub.add_parser("inspect")
    ins.add_argument("--token-hex", type=_hex, required=True)
    ins.set_defaults(func=cmd_token_inspect)

    val = tsub.add_parser("validate")
    val.add_argument("--key-file", required=True)
    val.add_argument("--registry-file", help="key state file carrying revocations")
    val.add_argument("--ip", type=_address, required=True)
    val.add_argument("--now", type=int, help="clock in ms (default: wall clock)")
    val.add_argument("--token-hex", type=_hex, required=True)
    val.set_defaults(func=cmd_token_validate)

    sw = sub.add_parser("sweep", help="handshake delay over RTT, as CSV")
    sw.add_argument("--rtt-max", type=_number, default=Fraction(300))
    sw.add_argument("--rtt-step", type=_number, default=Fraction(30))
    sw.add_argument("--t-proc", type=_number, default=Fraction(netsim.DEFAULT_T_PROC_MS))
    sw.add_argument("--out", default="-")
    sw.set_defaults(func=cmd_sweep)

    web = sub.add_parser("website", help="savings until the last connection of a page is up")
    web.add_argument("--depth", type=_number, default=Fraction("4.04"))
    web.add_argument("--connections", type=_number, default=Fraction("20.24"))
    web.add_argument("--rtt", type=_number, default=Fraction(90))
    web.add_argument("--t-proc", type=_number, default=Fraction(netsim.DEFAULT_T_PROC_MS))
    web.add_argument("--simulate", action="store_true", help="also run paired chain simulations")
    web.set_defaults(func=cmd_website)

    rn = sub.add_parser("run", help="simulate a scenario file")
    rn.add_argument("--scenario", required=True, help="path, or the name of a bundled scenario")
    rn.add_argument("--out", default="-")
    rn.set_defaults(func=cmd_run)

    ls = sub.add_parser("scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_scenarios)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
