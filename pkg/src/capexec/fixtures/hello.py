"""Zero-grant workload: writes one line to the stdout it inherited.

Pre-held descriptors stay usable in capability mode, so this runs clean
under an empty declaration.
"""

from __future__ import annotations

import sys


def run_hello(stdout) -> int:
    stdout.write(b"hello from the sandbox\n")
    return 0


def workload(runtime) -> int:
    return run_hello(runtime.stdout)


def main() -> int:
    status = run_hello(sys.stdout.buffer)
    sys.stdout.buffer.flush()
    return status


if __name__ == "__main__":
    raise SystemExit(main())
