"""Page-level savings: analytic depth x RTT next to paired chain simulations.

    python3 scripts/website_savings.py --rtt 30 90 150 --max-depth 8
"""

import argparse
from fractions import Fraction

from oobtoken.endpoint import format_ms
from oobtoken.netsim import Mechanism, chain, run, website_savings


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rtt", type=Fraction, nargs="+", default=[Fraction(30), Fraction(90), Fraction(150)])
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--t-proc", type=Fraction, default=Fraction(40))
    p.add_argument("--mean-depth", type=Fraction, default=Fraction("4.04"))
    args = p.parse_args()

    print("rtt_ms,depth,baseline_ms,proposal_ms,simulated_savings_ms,analytic_savings_ms")
    for rtt in args.rtt:
        for depth in range(1, args.max_depth + 1):
            report = run(chain(depth, rtt, args.t_proc, Mechanism.DNS_TOKEN))
            print(",".join(format_ms(v) for v in (
                rtt, depth, report.baseline_page_time, report.page_establishment_time,
                report.total_savings, website_savings(depth, rtt))))
    for rtt in args.rtt:
        print(f"# mean depth {format_ms(args.mean_depth)} at {format_ms(rtt)} ms: "
              f"{format_ms(website_savings(args.mean_depth, rtt))} ms saved")


if __name__ == "__main__":
    main()
