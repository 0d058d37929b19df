"""Static syscall-reachability analysis for sandbox provisioning.

Pipeline: :func:`extract_facts` reads a binary's dynamic symbols and
dependency closure, :func:`build_call_graph` assembles the symbol graph
(imports bridged by interposition order, intra-library edges from edge
corpora), :func:`find_violations` searches it against the syscall
policy, and :func:`suggest_declaration` drafts the declaration a run of
the binary would need.
"""

from importlib import resources as _importlib_resources

from .analysis import (
    DEFAULT_SUGGESTIONS,
    SuggestionTable,
    Violation,
    find_violations,
    format_json_report,
    format_report,
    report_records,
    suggest_declaration,
)
from .elf import ObjectInfo, parse_object, read_object
from .facts import (
    BinaryFacts,
    LibrarySearchPath,
    extract_facts,
    facts_from_object,
    object_display_name,
)
from .graph import CallGraph, TextEdgeList, build_call_graph
from .policy import PolicyStatus, SyscallPolicy

__all__ = [
    "BinaryFacts",
    "CallGraph",
    "DEFAULT_SUGGESTIONS",
    "LibrarySearchPath",
    "ObjectInfo",
    "PolicyStatus",
    "SuggestionTable",
    "SyscallPolicy",
    "TextEdgeList",
    "Violation",
    "build_call_graph",
    "default_edge_corpus",
    "default_policy",
    "extract_facts",
    "facts_from_object",
    "find_violations",
    "format_json_report",
    "format_report",
    "object_display_name",
    "parse_object",
    "read_object",
    "report_records",
    "suggest_declaration",
]


def _data_text(name: str) -> str:
    return (_importlib_resources.files(__package__) / "data" / name).read_text(
        encoding="utf-8"
    )


def default_edge_corpus() -> TextEdgeList:
    """The edge corpus for common libc entry points shipped with the tool."""
    return TextEdgeList(_data_text("libc-edges.txt"), origin="libc-edges.txt")


def default_policy() -> SyscallPolicy:
    """The capability-mode syscall policy shipped with the tool."""
    return SyscallPolicy.parse(_data_text("default-policy.txt"), origin="default-policy.txt")
