#!/usr/bin/env python3
"""Wire messages with and without PFA and ACC on the built-in workloads.

Messages are the desk-scale stand-in for monitoring overhead: each one is a
round of serialization plus a network hop on a real deployment.
"""

from __future__ import annotations

import argparse

from nvxsim.harness import run_scenario
from nvxsim.harness.corpus import message_law_program, static_read_benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reads", type=int, default=5, help="reads per static file")
    ap.add_argument("--transport", choices=("mem", "tcp"), default="mem")
    args = ap.parse_args(argv)

    bench = static_read_benchmark(args.reads)
    n_reads = sum(1 for i in bench.program.steps if i.op == "read")
    print(f"{'scenario':24} {'pfa':>4} {'acc':>4} {'messages':>9}")
    for cfg in (bench, message_law_program()):
        totals = {}
        for pfa in (True, False):
            for acc in (True, False):
                r = run_scenario(cfg, transport=args.transport, pfa=pfa, acc=acc)
                assert r.status == "ok", r.to_text()
                totals[pfa, acc] = r.total_messages()
                print(f"{cfg.name:24} {'on' if pfa else 'off':>4} {'on' if acc else 'off':>4} {r.total_messages():9d}")
        if cfg is bench:
            saved = totals[False, True] - totals[True, True]
            print(f"PFA saved {saved} messages over {n_reads} static reads")


if __name__ == "__main__":
    main()
