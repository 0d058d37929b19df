"""Violation search and declaration drafting.

``find_violations`` walks the call graph from each entry symbol and
reports, for every reachable syscall the policy does not allow, one
minimal witness path: shortest, ties broken lexicographically by node
sequence.  Reports are deterministic end to end, so identical inputs
produce byte-identical output.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from ..declaration import (
    SERVICE_DNS,
    SERVICE_FILEARGS,
    SERVICE_NET,
    SERVICE_SYSCTL,
)
from .graph import CallGraph
from .policy import PolicyStatus, SyscallPolicy


@dataclass(frozen=True)
class Violation:
    """One entry symbol reaching one disallowed syscall."""

    entry: str
    path: tuple[str, ...]
    syscall: str
    suggested_service: str | None = None
    note: str | None = None

    def sort_key(self):
        return (self.entry, self.syscall, self.path)


@dataclass
class SuggestionTable:
    """Maps violations to the service that would broker them."""

    by_syscall: dict[str, str] = field(default_factory=dict)
    by_symbol: dict[str, str] = field(default_factory=dict)

    def suggest(self, path: tuple[str, ...], syscall: str) -> str | None:
        for node in path:
            bare = node.split(":", 1)[-1]
            service = self.by_symbol.get(bare)
            if service is not None:
                return service
        return self.by_syscall.get(syscall)


DEFAULT_SUGGESTIONS = SuggestionTable(
    by_syscall={
        "open": SERVICE_FILEARGS,
        "openat": SERVICE_FILEARGS,
        "connect": SERVICE_NET,
        "bind": SERVICE_NET,
        "sendto": SERVICE_NET,
        "sysctl": SERVICE_SYSCTL,
        "__sysctl": SERVICE_SYSCTL,
        "sysctlbyname": SERVICE_SYSCTL,
    },
    by_symbol={
        "gethostbyname": SERVICE_DNS,
        "gethostbyaddr": SERVICE_DNS,
        "getaddrinfo": SERVICE_DNS,
        "getnameinfo": SERVICE_DNS,
        "res_query": SERVICE_DNS,
        "res_search": SERVICE_DNS,
    },
)


def find_violations(graph: CallGraph, entries, policy: SyscallPolicy,
                    suggestions: SuggestionTable | None = None) -> list[Violation]:
    """Search the graph for disallowed, reachable syscall sinks.

    Per entry, every node is expanded at most once (cycles are fine) and
    each offending syscall gets exactly one witness: the minimal
    (length, node-sequence) path.  Output is sorted by
    (entry, syscall, path).
    """
    suggestions = suggestions if suggestions is not None else DEFAULT_SUGGESTIONS
    violations: list[Violation] = []
    for entry in sorted(entries):
        if entry not in graph.nodes:
            raise KeyError(f"entry symbol {entry!r} is not a graph node")
        violations.extend(_search_entry(graph, entry, policy, suggestions))
    violations.sort(key=Violation.sort_key)
    return violations


def _search_entry(graph: CallGraph, entry: str, policy: SyscallPolicy,
                  suggestions: SuggestionTable) -> list[Violation]:
    # Uniform-cost search keyed by (length, path): the first time a node
    # pops it carries its shortest, lexicographically-least path.
    found: dict[str, Violation] = {}
    visited: set[str] = set()
    heap: list[tuple[int, tuple[str, ...]]] = [(1, (entry,))]
    while heap:
        _, path = heapq.heappop(heap)
        node = path[-1]
        if node in visited:
            continue
        visited.add(node)
        syscall = graph.syscall_sinks.get(node)
        if syscall is not None and syscall not in found:
            policy_entry, known = policy.lookup(syscall)
            if policy_entry.status is not PolicyStatus.ALLOWED:
                if not known:
                    note = "syscall not in policy (fail-closed: treated as denied)"
                elif policy_entry.status is PolicyStatus.CONDITIONAL:
                    note = f"conditional: {policy_entry.rule}"
                else:
                    note = None
                found[syscall] = Violation(
                    entry=entry, path=path, syscall=syscall,
                    suggested_service=suggestions.suggest(path, syscall),
                    note=note,
                )
        for nxt in graph.successors(node):
            if nxt not in visited:
                heapq.heappush(heap, (len(path) + 1, path + (nxt,)))
    return [found[name] for name in sorted(found)]


# --- reporting ------------------------------------------------------------------


def format_report(violations: list[Violation], *, binary: str | None = None,
                  warnings=()) -> str:
    lines = []
    if binary:
        lines.append(f"target: {binary}")
    for warning in warnings:
        lines.append(f"warning: {warning}")
    if not violations:
        lines.append("no disallowed syscalls reachable from the given entry points")
        return "\n".join(lines) + "\n"
    lines.append(f"{len(violations)} disallowed call path(s) found:")
    for v in violations:
        lines.append("")
        lines.append(f"entry {v.entry} reaches syscall {v.syscall}")
        lines.append(f"  path: {' -> '.join(v.path)}")
        if v.note:
            lines.append(f"  note: {v.note}")
        if v.suggested_service:
            lines.append(f"  suggestion: grant {v.suggested_service}")
    return "\n".join(lines) + "\n"


def report_records(violations: list[Violation]) -> list[dict]:
    return [
        {
            "entry": v.entry,
            "syscall": v.syscall,
            "path": list(v.path),
            "suggestion": v.suggested_service,
            "note": v.note,
        }
        for v in violations
    ]


def format_json_report(violations: list[Violation]) -> str:
    return json.dumps(report_records(violations), indent=2, sort_keys=True) + "\n"


# --- declaration drafting ---------------------------------------------------------

_DRAFT_BLOCKS = {
    SERVICE_FILEARGS: [
        '    "system.fileargs": {',
        '        operations: "OPEN",',
        '        flags: "RDONLY",',
        '        cap_rights: "READ",',
        "        # PLACEHOLDER: list every file the workload must open",
        '        filename: "/path/to/required/file"',
        "    }",
    ],
    SERVICE_DNS: [
        '    "system.dns": {',
        "        # PLACEHOLDER: pick the address families actually used",
        "        family: AF_INET",
        "    }",
    ],
    SERVICE_NET: [
        '    "system.net": {',
        "        # PLACEHOLDER: name each peer the workload connects to",
        '        host: "peer.example",',
        "        family: AF_INET",
        "    }",
    ],
    SERVICE_SYSCTL: [
        '    "system.sysctl": {',
        "        # PLACEHOLDER: one entry per key the workload reads",
        '        "kern.some.key": { type: "mib", flag: "CAP_SYSCTL_READ" }',
        "    }",
    ],
}

_SERVICE_DRAFT_ORDER = (SERVICE_FILEARGS, SERVICE_DNS, SERVICE_NET, SERVICE_SYSCTL)


def suggest_declaration(violations: list[Violation], *, binary: str,
                        mapping: SuggestionTable | None = None) -> str:
    """Draft a declaration covering the implicated services.

    Values the analysis cannot know stay as placeholder comments; any
    violation with no service mapping is listed as residual in the
    header so nothing silently drops.
    """
    mapping = mapping if mapping is not None else DEFAULT_SUGGESTIONS
    services: set[str] = set()
    residual: list[Violation] = []
    for v in violations:
        service = v.suggested_service or mapping.suggest(v.path, v.syscall)
        if service is None:
            residual.append(v)
        else:
            services.add(service)

    lines = [
        "# Draft service declaration; review and replace every PLACEHOLDER.",
    ]
    if residual:
        lines.append("# Residual violations with no service mapping:")
        for v in sorted(residual, key=Violation.sort_key):
            lines.append(f"#   entry {v.entry}: syscall {v.syscall}")
    lines.append("{")
    lines.append(f'    binary: "{binary}"')
    for service in _SERVICE_DRAFT_ORDER:
        if service in services:
            lines.extend(_DRAFT_BLOCKS[service])
    lines.append("}")
    return "\n".join(lines) + "\n"
