"""Command line: ``sgxio run <scenario-file> [options]`` and ``sgxio list``.

Exit status 0 when every expectation holds, 1 when one fails, 2 for a
scenario that does not load or validate.
"""

from __future__ import annotations

import argparse
import sys

from .query import ExpectationFailed
from .runner import run
from .scenario import ConfigError, builtin_names, resolve

EXIT_OK = 0
EXIT_EXPECTATION = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgxio", description="Run trusted I/O path scenarios.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario file (or shipped scenario name)")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace", metavar="PATH", help="write the event trace here")
    r.add_argument("--no-aik-pinning", dest="aik_pinning", action="store_const", const=False, default=None)
    r.add_argument("--expose-tpm-to-os", dest="expose_tpm_to_os", action="store_const", const=True, default=None)
    r.add_argument("--disable-debug-tweak", dest="encls_tweak", action="store_const", const=False, default=None)
    r.add_argument("-q", "--quiet", action="store_true", help="print only the verdict line")
    sub.add_parser("list", help="list shipped scenarios")
    return p


def run_command(args) -> int:
    try:
        scenario = resolve(args.scenario)
        result = run(scenario, args.seed, aik_pinning=args.aik_pinning,
                     expose_tpm_to_os=args.expose_tpm_to_os, encls_tweak=args.encls_tweak)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.trace:
        result.trace.write(args.trace)
    if not args.quiet:
        for r in result.results:
            print(r.line())
    verdict = "pass" if result.passed else "fail"
    print(f"{scenario.name} seed={result.seed} verdict={verdict}")
    if not result.passed:
        err = ExpectationFailed(", ".join(r.name for r in result.failures()))
        print(f"expectation failed: {err}", file=sys.stderr)
        return EXIT_EXPECTATION
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name in builtin_names():
            print(name)
        return EXIT_OK
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
