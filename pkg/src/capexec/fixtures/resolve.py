"""Reverse-lookup workload: print the canonical name of an IPv4 address.

The shape of the classic program that breaks inside a sandbox: it parses
an address literal, then asks the resolver who it is.  Routed through a
dns broker it keeps working in capability mode.
"""

from __future__ import annotations

import sys

from ..capclient import ClientContext, c_gethostbyaddr, client_init
from ..declaration import AddressFamily
from ..errors import CapabilityError, ResolutionFailed
from ..resources import parse_address


def run_resolve(ctx: ClientContext, argv: list[str], stdout, stderr) -> int:
    text = argv[1] if len(argv) > 1 else "127.0.0.1"
    try:
        address = parse_address(text, AddressFamily.AF_INET)
    except OSError:
        stderr.write(f"resolve: cannot parse address {text!r}\n".encode())
        return 2
    try:
        entry = c_gethostbyaddr(ctx, address, AddressFamily.AF_INET)
    except (CapabilityError, ResolutionFailed) as exc:
        stderr.write(f"resolve: {text}: {exc}\n".encode())
        return 1
    stdout.write((entry.canonical_name + "\n").encode())
    return 0


def workload(runtime) -> int:
    return run_resolve(runtime.client, runtime.argv, runtime.stdout, runtime.stderr)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv if argv is None else argv
    ctx = client_init()
    status = run_resolve(ctx, argv, sys.stdout.buffer, sys.stderr.buffer)
    sys.stdout.buffer.flush()
    return status


if __name__ == "__main__":
    raise SystemExit(main())
