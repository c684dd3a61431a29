"""Command line entry point.

    nvxsim run --config scenarios/web.toml [--transport mem|tcp] [--pfa on|off] [--acc on|off] [--report out.json]
    nvxsim daemon --config scenarios/daemon.toml --variant arm
    nvxsim gadgets --ptrs-a a.ptrs --gadgets-a a.gadgets --ptrs-b b.ptrs --gadgets-b b.gadgets --strategy offset
    nvxsim structdiff --defs structs.toml --abi-a x86_64 --abi-b armv7_eabi

Exit codes: 0 clean run, 2 divergence detected, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import NvxError
from .platform import load_platform, load_struct_defs

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2


def _onoff(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return v == "on"


def _write_report(path: str | None, text: str):
    if path:
        Path(path).write_text(text)


def cmd_run(args) -> int:
    from .harness import load_config, run_scenario

    cfg = load_config(args.config)
    report = run_scenario(cfg, transport=args.transport, pfa=args.pfa, acc=args.acc)
    print(report.to_text())
    _write_report(args.report, report.to_json())
    return report.exit_code()


def cmd_daemon(args) -> int:
    from .harness import load_config, run_daemon

    cfg = load_config(args.config)
    report = run_daemon(cfg, args.variant, pfa=args.pfa, acc=args.acc)
    print(report.to_text())
    _write_report(args.report, report.to_json())
    return report.exit_code()


def _platform_or_none(name):
    return load_platform(name) if name else None


def cmd_gadgets(args) -> int:
    from . import gadgets as G

    pa, pb = _platform_or_none(args.platform_a), _platform_or_none(args.platform_b)
    report = G.analyze(
        G.read_pointers(args.ptrs_a), G.read_gadgets(args.gadgets_a, pa),
        G.read_pointers(args.ptrs_b), G.read_gadgets(args.gadgets_b, pb),
        strategy=args.strategy, align_b=args.align_b,
    )
    print(report.to_text())
    _write_report(args.report, json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_structdiff(args) -> int:
    from .gadgets import layout_diversity_report

    defs = load_struct_defs(args.defs)
    report = layout_diversity_report(defs, load_platform(args.abi_a), load_platform(args.abi_b))
    print(report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvxsim", description="Cross-ISA N-variant execution simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("run", cmd_run, "run a scenario in this process"),
                               ("daemon", cmd_daemon, "run one variant of a scenario over TCP")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        if name == "run":
            p.add_argument("--transport", choices=("mem", "tcp"))
        else:
            p.add_argument("--variant", required=True)
        p.add_argument("--pfa", type=_onoff, metavar="on|off")
        p.add_argument("--acc", type=_onoff, metavar="on|off")
        p.add_argument("--report", help="write the full report as JSON here")
        p.set_defaults(fn=fn)

    p = sub.add_parser("gadgets", help="gadget survivability between two binaries")
    for side in ("a", "b"):
        p.add_argument(f"--ptrs-{side}", required=True)
        p.add_argument(f"--gadgets-{side}", required=True)
        p.add_argument(f"--platform-{side}", help="map load:<reg> tokens through this ABI's syscall registers")
    p.add_argument("--strategy", choices=("offset", "partial"), default="offset")
    p.add_argument("--align-b", type=int, default=4)
    p.add_argument("--report")
    p.set_defaults(fn=cmd_gadgets)

    p = sub.add_parser("structdiff", help="count structs whose layout differs between two ABIs")
    p.add_argument("--defs", required=True)
    p.add_argument("--abi-a", required=True)
    p.add_argument("--abi-b", required=True)
    p.set_defaults(fn=cmd_structdiff)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (NvxError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
