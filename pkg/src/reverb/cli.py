"""Command line front end: ``reverb run``, ``reverb explore``, ``reverb verify``.

Exit codes: 0 pass or final, 1 violation found, 2 usage or parse error,
3 runtime fault.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import CHECK_NAMES, ScriptDiverged, TraceFormatError, explore, load_file, make_policy, run, verify
from .lang import ParseError, SemanticsError

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_FAULT = 0, 1, 2, 3
SEMANTICS = ("standard", "rollback", "reversible")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reverb", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a program and write its trace")
    r.add_argument("file")
    r.add_argument("--semantics", choices=SEMANTICS, default="rollback")
    r.add_argument("--policy", default="default", help="default | random | script:PATH")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-steps", type=int, default=1000)
    r.add_argument("--mode", choices=("faithful", "handler"), default="faithful")
    r.add_argument("--snapshots", action="store_true", help="write the system after every step")
    r.add_argument("--out", help="trace file (default: stdout)")

    e = sub.add_parser("explore", help="enumerate all derivations up to a depth")
    e.add_argument("file")
    e.add_argument("--semantics", choices=SEMANTICS, default="rollback")
    e.add_argument("--depth", type=int, default=10)
    e.add_argument("--check", default="", help="comma list of " + ",".join(CHECK_NAMES))
    e.add_argument("--max-states", type=int, default=200_000)
    e.add_argument("--report", help="report file (default: stdout)")

    v = sub.add_parser("verify", help="replay a trace and run the conformance checks")
    v.add_argument("trace")
    return ap


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    prog = load_file(args.file)
    policy = make_policy(args.policy, args.seed, args.semantics)
    trace = run(prog, args.semantics, policy, args.max_steps, args.mode, args.seed, args.snapshots)
    _emit(trace.render(), args.out)
    if trace.status == "runtime-fault":
        print(f"runtime fault: {trace.fault}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _cmd_explore(args) -> int:
    checks = tuple(c for c in args.check.split(",") if c)
    prog = load_file(args.file)
    report = explore(prog, args.semantics, args.depth, checks, max_states=args.max_states)
    _emit(report.render(), args.report)
    if report.truncated:
        print("warning: state bound reached, report truncated", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_VIOLATION


def _cmd_verify(args) -> int:
    result = verify(Path(args.trace).read_text())
    if result.divergence is not None:
        print(f"divergence at record {result.divergence}: {result.message}")
        return EXIT_VIOLATION
    print(f"replay ok, status {result.status}")
    for name, verdict in result.verdicts.items():
        print(f"{name}\t{'pass' if verdict.passed else 'FAIL'}")
        for v in verdict.violations:
            print(f"  {v}")
    if not result.passed:
        return EXIT_VIOLATION
    return EXIT_FAULT if result.status == "runtime-fault" else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    handler = {"run": _cmd_run, "explore": _cmd_explore, "verify": _cmd_verify}[args.command]
    try:
        return handler(args)
    except ParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
    except (TraceFormatError, ScriptDiverged, SemanticsError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
