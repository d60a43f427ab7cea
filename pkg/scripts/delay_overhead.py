"""Handshake delay with and without an out-of-band token, over RTT.

Writes the sweep CSV (simulated and analytic delay per RTT) and prints the
ratio at a few reference RTTs.

    python3 scripts/delay_overhead.py --rtt-max 300 --rtt-step 10 --out delay.csv
"""

import argparse
from fractions import Fraction
from pathlib import Path

from oobtoken.netsim import format_ratio, overhead_ratio, sweep, sweep_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rtt-max", type=Fraction, default=Fraction(300))
    p.add_argument("--rtt-step", type=Fraction, default=Fraction(10))
    p.add_argument("--t-proc", type=Fraction, default=Fraction(40))
    p.add_argument("--out", type=Path, default=Path("delay_overhead.csv"))
    args = p.parse_args()

    rtts = []
    rtt = Fraction(0)
    while rtt <= args.rtt_max:
        rtts.append(rtt)
        rtt += args.rtt_step
    rows = sweep(rtts, args.t_proc)
    mismatched = [r for r in rows if r.simulated_ms != r.analytic_ms]
    args.out.write_text(sweep_csv(rows))
    print(f"wrote {len(rows)} rows to {args.out}; simulation off the model in {len(mismatched)} rows")
    for ref in (10, 30, 90, 300, 10**4, 10**6):
        print(f"rtt={ref:>8} ms  proposal/default = {format_ratio(overhead_ratio(ref, args.t_proc))}")


if __name__ == "__main__":
    main()
