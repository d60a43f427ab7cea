"""Spoof threshold tradeoff under a flood of validating spoofed Initials.

For each threshold, reports when the shared key gets revoked and how many
spoofed Initials drew a full server flight before that. A lower threshold
cuts the reflected traffic but revokes a key sooner, leaving its honest
clients on the retry path.

    python3 scripts/dos_threshold.py --count 2000 --thresholds 10 50 100 500 1000
"""

import argparse
import math
from dataclasses import replace
from fractions import Fraction

from oobtoken.endpoint import format_ms
from oobtoken.netsim import AttackerSpec, ServerSpec, load_bundled, run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=2000, help="spoofed Initials sent")
    p.add_argument("--interval", type=Fraction, default=Fraction(1), help="ms between spoofs")
    p.add_argument("--thresholds", type=int, nargs="+", default=[10, 50, 100, 500, 1000, 5000])
    args = p.parse_args()

    base = load_bundled("dos_revocation")
    print("threshold,revoked,revoked_at_ms,unrequited_at_revocation,flights_before_revocation,alice_after_round_trips")
    for threshold in args.thresholds:
        servers = tuple(replace(s, spoof_threshold=threshold) for s in base.servers)
        attacker = AttackerSpec("mallory", "www.example", "isp-resolver", args.count, interval_ms=args.interval)
        cfg = replace(base, servers=servers, attackers=(attacker,))
        report = run(cfg, paired=False)
        after = report.result("alice-after").transcript.round_trips
        if not report.events:
            print(f"{threshold},false,,,{args.count},{after}")
            continue
        ev = report.events[0]
        # every spoof that reached the server before revocation validated and drew a flight
        arrived = math.floor((ev.time_ms - cfg.rtt_ms / 2) / args.interval) + 1
        flights = min(args.count, max(arrived, 0))
        print(f"{threshold},true,{format_ms(ev.time_ms)},{ev.spoof_count},{flights},{after}")


if __name__ == "__main__":
    main()
