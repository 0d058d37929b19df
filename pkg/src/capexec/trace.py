"""Audit-trail events recorded during a sandboxed run.

The line format mirrors a kernel syscall trace: a process-role column, an
event-kind column, and free-form detail, with denials carrying an
``errno <code> <label>`` suffix:

    workload   CALL   open#1("test.txt",RDONLY)
    workload   RET    open#1 3
    workload   CAP_DENIED open#2 errno 94 Not permitted in capability mode

A run is adequately provisioned exactly when its trace holds zero
CAP_DENIED events.
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass, field

from .errors import error_label

ROLES = ("workload", "broker", "supervisor")
KINDS = ("CALL", "RET", "CAP_DENIED", "CHANNEL_SEND", "CHANNEL_RECV")


@dataclass
class TraceEvent:
    role: str
    kind: str
    detail: str
    error_code: int | None = None
    timestamp: float = field(default_factory=time.time)

    def to_line(self) -> str:
        suffix = ""
        if self.error_code is not None:
            suffix = f" errno {self.error_code} {error_label(self.error_code)}"
        return f"{self.role:<10} {self.kind:<12} {self.detail}{suffix}"


_LINE_RE = re.compile(
    r"^(?P<role>\S+)\s+(?P<kind>[A-Z_]+)\s+(?P<detail>.*?)"
    r"(?:\s+errno\s+(?P<code>-?\d+)\s+(?P<label>.*))?$"
)


def parse_line(line: str) -> TraceEvent:
    match = _LINE_RE.match(line.rstrip("\n"))
    if match is None or match.group("kind") not in KINDS:
        raise ValueError(f"not a trace line: {line!r}")
    code = match.group("code")
    return TraceEvent(
        role=match.group("role"),
        kind=match.group("kind"),
        detail=match.group("detail").rstrip(),
        error_code=int(code) if code is not None else None,
        timestamp=0.0,
    )


class TraceSink:
    """In-memory append-only event sink, safe for concurrent writers."""

    def __init__(self):
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def record(self, event: TraceEvent) -> None:
        with self._lock:
            self._events.append(event)

    def events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)

    def lines(self) -> list[str]:
        return [e.to_line() for e in self.events()]


class FileTraceSink(TraceSink):
    """Sink that additionally appends each event as one line to a file.

    Lines are written with a single O_APPEND write apiece so interleaved
    writers (supervisor, forked brokers, the workload process) stay
    intact.
    """

    def __init__(self, path: str):
        super().__init__()
        self.path = path
        self._fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)

    def record(self, event: TraceEvent) -> None:
        super().record(event)
        os.write(self._fd, (event.to_line() + "\n").encode("utf-8", "replace"))

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


def read_trace_file(path: str) -> list[TraceEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                events.append(parse_line(line))
    return events


def assert_clean_trace(events) -> bool:
    """True iff the run needed nothing beyond its declaration: the trace
    contains no capability denials."""
    if isinstance(events, TraceSink):
        events = events.events()
    return all(e.kind != "CAP_DENIED" for e in events)
