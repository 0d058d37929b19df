"""The allowed/denied syscall knowledge base.

Policy text has one entry per line:

    syscall NAME allowed
    syscall NAME denied
    syscall NAME conditional "rule text"

A syscall absent from the policy is denied (fail-closed) and flagged as
unknown so curation gaps stay visible.  Conditional entries carry a rule
a static analysis cannot discharge, so they count as violations with the
rule attached.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..errors import AnalysisInputError


class PolicyStatus(enum.Enum):
    ALLOWED = "allowed"
    DENIED = "denied"
    CONDITIONAL = "conditional"


@dataclass(frozen=True)
class PolicyEntry:
    status: PolicyStatus
    rule: str | None = None


@dataclass
class SyscallPolicy:
    entries: dict[str, PolicyEntry] = field(default_factory=dict)

    def lookup(self, syscall: str) -> tuple[PolicyEntry, bool]:
        """Entry for a syscall plus whether it was actually listed."""
        entry = self.entries.get(syscall)
        if entry is None:
            return PolicyEntry(PolicyStatus.DENIED), False
        return entry, True

    def is_violating(self, syscall: str) -> bool:
        entry, _known = self.lookup(syscall)
        return entry.status is not PolicyStatus.ALLOWED

    @classmethod
    def parse(cls, text: str, origin: str = "<policy>") -> "SyscallPolicy":
        entries: dict[str, PolicyEntry] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 3)
            if len(parts) < 3 or parts[0] != "syscall":
                raise AnalysisInputError(
                    f"{origin}:{lineno}: expected 'syscall NAME "
                    f"allowed|denied|conditional [\"rule\"]'"
                )
            name, status_text = parts[1], parts[2]
            try:
                status = PolicyStatus(status_text)
            except ValueError:
                raise AnalysisInputError(
                    f"{origin}:{lineno}: unknown status {status_text!r}"
                ) from None
            rule = None
            if status is PolicyStatus.CONDITIONAL:
                if len(parts) != 4:
                    raise AnalysisInputError(
                        f"{origin}:{lineno}: conditional entries need a quoted rule"
                    )
                rule = parts[3].strip().strip('"')
                if not rule:
                    raise AnalysisInputError(f"{origin}:{lineno}: empty rule text")
            elif len(parts) == 4 and parts[3].strip():
                raise AnalysisInputError(
                    f"{origin}:{lineno}: trailing text {parts[3].strip()!r}"
                )
            entries[name] = PolicyEntry(status, rule)
        return cls(entries)

    @classmethod
    def from_file(cls, path: str) -> "SyscallPolicy":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.parse(fh.read(), origin=path)
        except OSError as exc:
            raise AnalysisInputError(f"{path}: {exc}") from None
