"""cat-equivalent workload: open each argument, copy it to stdout.

All file access goes through the capability client, so the same code
runs ambiently (no channels), against a fileargs broker, or denied in
capability mode.
"""

from __future__ import annotations

import os
import sys

from ..capclient import ClientContext, c_open, client_init
from ..errors import CapabilityError


def run_cat(ctx: ClientContext, argv: list[str], stdout, stderr) -> int:
    status = 0
    for name in argv[1:]:
        try:
            desc = c_open(ctx, name, os.O_RDONLY)
        except (CapabilityError, OSError) as exc:
            stderr.write(f"cat: {name}: {exc}\n".encode())
            status = 1
            continue
        try:
            while True:
                chunk = desc.read(65536)
                if not chunk:
                    break
                stdout.write(chunk)
        except (CapabilityError, OSError) as exc:
            stderr.write(f"cat: {name}: {exc}\n".encode())
            status = 1
        finally:
            desc.close()
    return status


def workload(runtime) -> int:
    return run_cat(runtime.client, runtime.argv, runtime.stdout, runtime.stderr)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv if argv is None else argv
    ctx = client_init()
    status = run_cat(ctx, argv, sys.stdout.buffer, sys.stderr.buffer)
    sys.stdout.buffer.flush()
    return status


if __name__ == "__main__":
    raise SystemExit(main())
