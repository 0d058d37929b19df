"""Command-line frontend.

    capexec run --service cat.svc [--backend simulation|native]
                [--trace trace.txt] -- /bin/cat test.txt
    capexec validate cat.svc
    capexec check /bin/cat [--edges extra.txt] [--policy policy.txt]
                [--emit-declaration draft.svc] [--json]
    capexec bench --scenario single-file --sizes 1,10,100 --repeat 10

Exit codes follow the sysexits bands for tool failures and pass the
workload's status through otherwise:

    65  invalid declaration / malformed edge or policy file
    66  unreadable or unparsable binary (check)
    71  sandbox setup failure
    74  benchmark scratch-space failure
    77  binary argument does not match the declaration
     1  check found violations
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

from . import capcheck
from .declaration import has_errors, load_declaration, validate_declaration
from .errors import (
    AnalysisInputError,
    CapexecError,
    DeclarationError,
    MalformedSymbolTable,
    NotAnObjectFile,
    SpawnFailed,
    WorkloadExecFailed,
)
from .supervisor import build_plan, launch

EX_OK = 0
EX_VIOLATIONS = 1
EX_USAGE = 64
EX_DATAERR = 65
EX_NOINPUT = 66
EX_OSERR = 71
EX_IOERR = 74
EX_NOPERM = 77


def _err(message: str) -> None:
    print(f"capexec: {message}", file=sys.stderr)


def _load_and_validate(path: str):
    """Returns (declaration, exit_code); declaration is None on failure."""
    try:
        decl = load_declaration(path)
    except OSError as exc:
        _err(f"{path}: {exc.strerror or exc}")
        return None, EX_DATAERR
    except DeclarationError as exc:
        _err(f"{path}: {exc}")
        return None, EX_DATAERR
    diagnostics = validate_declaration(decl)
    for diag in diagnostics:
        print(f"{path}: {diag}", file=sys.stderr)
    if has_errors(diagnostics):
        return None, EX_DATAERR
    return decl, EX_OK


def cmd_run(args) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        _err("no workload command given (use: run --service FILE -- BINARY ARGS...)")
        return EX_USAGE

    decl, status = _load_and_validate(args.service)
    if decl is None:
        return status
    if command[0] != decl.binary:
        _err(f"workload binary {command[0]!r} does not match declared "
             f"binary {decl.binary!r}")
        return EX_NOPERM

    plan = build_plan(decl, args.backend)
    for warning in plan.warnings:
        _err(f"warning: {warning}")

    try:
        service = launch(plan, command, trace_path=args.trace, stdin=None)
    except (SpawnFailed, WorkloadExecFailed, CapexecError) as exc:
        _err(f"sandbox setup failed: {exc}")
        return EX_OSERR
    status = service.wait()
    if status is None:
        return EX_OSERR
    if status < 0:
        return 128 - status  # child died on signal -status
    return status


def cmd_validate(args) -> int:
    decl, status = _load_and_validate(args.declaration)
    if decl is None:
        return status
    print(f"{args.declaration}: ok "
          f"(binary {decl.binary}, {len(decl.grants)} grant(s))")
    return EX_OK


def cmd_check(args) -> int:
    try:
        facts = capcheck.extract_facts(args.binary)
    except OSError as exc:
        _err(f"{args.binary}: {exc.strerror or exc}")
        return EX_NOINPUT
    except (NotAnObjectFile, MalformedSymbolTable) as exc:
        _err(str(exc))
        return EX_NOINPUT

    try:
        sources = [capcheck.default_edge_corpus()]
        for path in args.edges or ():
            sources.append(capcheck.TextEdgeList.from_file(path))
        if args.policy:
            policy = capcheck.SyscallPolicy.from_file(args.policy)
        else:
            policy = capcheck.default_policy()
    except AnalysisInputError as exc:
        _err(str(exc))
        return EX_DATAERR

    graph = capcheck.build_call_graph([facts], sources)
    if args.entry:
        entries = [e if ":" in e else f"{facts.name}:{e}" for e in args.entry]
        missing = [e for e in entries if e not in graph.nodes]
        if missing:
            _err(f"entry symbols not in the call graph: {', '.join(missing)}")
            return EX_DATAERR
    else:
        # Default entries: everything the binary imports (any of which the
        # binary may call directly).
        entries = [f"{facts.name}:{symbol}" for symbol, _ in facts.imports]
        entries = [e for e in entries if e in graph.nodes]

    violations = capcheck.find_violations(graph, entries, policy)
    if args.json:
        sys.stdout.write(capcheck.format_json_report(violations))
    else:
        notes = list(facts.notes) + list(graph.warnings)
        sys.stdout.write(capcheck.format_report(
            violations, binary=args.binary, warnings=notes))

    if args.emit_declaration:
        draft = capcheck.suggest_declaration(violations, binary=args.binary)
        with open(args.emit_declaration, "w", encoding="utf-8") as fh:
            fh.write(draft)
        print(f"draft declaration written to {args.emit_declaration}",
              file=sys.stderr)
    return EX_VIOLATIONS if violations else EX_OK


def cmd_bench(args) -> int:
    from . import bench  # deferred: pulls in psutil

    try:
        scratch = args.scratch or tempfile.mkdtemp(prefix="capexec-bench-")
        os.makedirs(scratch, exist_ok=True)
        probe = os.path.join(scratch, ".probe")
        with open(probe, "wb") as fh:
            fh.write(b"x")
        os.unlink(probe)
    except OSError as exc:
        _err(f"scratch space unavailable: {exc}")
        return EX_IOERR

    sizes = _int_list(args.sizes) if args.sizes else None
    counts = _int_list(args.counts) if args.counts else None
    try:
        rows = bench.run_scenario(
            args.scenario, scratch=scratch, repeat=args.repeat,
            sizes_mb=sizes, counts=counts,
            progress=lambda msg: print(msg, file=sys.stderr),
        )
    except OSError as exc:
        _err(f"benchmark failed: {exc}")
        return EX_IOERR
    bench.write_csv(rows, args.out)
    sys.stdout.write(bench.summarize(rows))
    print(f"results written to {args.out}", file=sys.stderr)
    return EX_OK


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capexec",
        description="Run a workload sandboxed behind capability brokers, "
                    "validate declarations, analyze binaries, benchmark.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_run = sub.add_parser("run", help="run a workload under a service declaration")
    p_run.add_argument("--service", required=True, metavar="DECL",
                       help="service declaration file")
    p_run.add_argument("--backend", choices=("simulation", "native"),
                       default="simulation")
    p_run.add_argument("--trace", metavar="PATH",
                       help="append the run's trace events to this file")
    p_run.add_argument("command", nargs=argparse.REMAINDER,
                       metavar="-- BINARY ARGS...")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="parse and validate a declaration")
    p_val.add_argument("declaration", metavar="DECL")
    p_val.set_defaults(func=cmd_validate)

    p_chk = sub.add_parser("check", help="find call paths to disallowed syscalls")
    p_chk.add_argument("binary")
    p_chk.add_argument("--edges", action="append", metavar="FILE",
                       help="extra edge-list file (repeatable)")
    p_chk.add_argument("--policy", metavar="FILE",
                       help="syscall policy file (default: built-in)")
    p_chk.add_argument("--entry", action="append", metavar="SYMBOL",
                       help="entry symbol (default: every import of the binary)")
    p_chk.add_argument("--emit-declaration", metavar="PATH",
                       help="write a draft declaration covering the findings")
    p_chk.add_argument("--json", action="store_true",
                       help="machine-readable report")
    p_chk.set_defaults(func=cmd_check)

    p_bench = sub.add_parser("bench", help="benchmark sandboxed vs plain runs")
    p_bench.add_argument("--scenario", required=True,
                         choices=("single-file", "many-files", "setup-scaling"))
    p_bench.add_argument("--sizes", metavar="MB,MB,...",
                         help="file sizes for single-file (default 1,10,100)")
    p_bench.add_argument("--counts", metavar="N,N,...",
                         help="file counts for many-files/setup-scaling")
    p_bench.add_argument("--repeat", type=int, default=10, metavar="N")
    p_bench.add_argument("--scratch", metavar="DIR",
                         help="scratch directory (default: a fresh temp dir)")
    p_bench.add_argument("--out", default="capexec-bench.csv", metavar="CSV")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
