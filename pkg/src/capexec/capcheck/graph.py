"""Symbol-level call graph construction.

Nodes are qualified symbols (``object:name``).  Two edge kinds exist:

* inter-object edges bridge an import to the first dependency exporting
  that symbol (standard interposition order); an import nobody provides
  points at an ``unknown:`` node instead of vanishing;
* intra-object edges come from pluggable edge sources.  The shipped
  source is the text edge list: one ``caller -> callee`` per line, sink
  annotations ``symbol => syscall:NAME``, ``#`` comments, and an
  optional ``@object NAME`` directive that qualifies bare names.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import AnalysisInputError
from .facts import BinaryFacts, object_display_name

UNKNOWN_OBJECT = "unknown"


@dataclass
class CallGraph:
    nodes: set[str] = field(default_factory=set)
    edges: dict[str, tuple[str, ...]] = field(default_factory=dict)
    syscall_sinks: dict[str, str] = field(default_factory=dict)
    unknown_nodes: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def successors(self, node: str) -> tuple[str, ...]:
        return self.edges.get(node, ())


class TextEdgeList:
    """Edge source parsed from edge-list text."""

    def __init__(self, text: str, origin: str = "<edges>"):
        self.origin = origin
        self.edge_pairs: list[tuple[str, str]] = []
        self.sink_pairs: list[tuple[str, str]] = []
        self._parse(text)

    @classmethod
    def from_file(cls, path: str) -> "TextEdgeList":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls(fh.read(), origin=path)
        except OSError as exc:
            raise AnalysisInputError(f"{path}: {exc}") from None

    def _parse(self, text: str) -> None:
        qualifier: str | None = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("@object"):
                parts = line.split()
                if len(parts) != 2:
                    raise AnalysisInputError(
                        f"{self.origin}:{lineno}: @object takes exactly one name"
                    )
                qualifier = parts[1]
                continue
            if "=>" in line:
                left, _, right = line.partition("=>")
                node = self._qualify(left.strip(), qualifier, lineno)
                right = right.strip()
                if not right.startswith("syscall:") or not right[len("syscall:"):]:
                    raise AnalysisInputError(
                        f"{self.origin}:{lineno}: sink annotation must be "
                        f"'symbol => syscall:NAME'"
                    )
                self.sink_pairs.append((node, right[len("syscall:"):]))
                continue
            if "->" in line:
                left, _, right = line.partition("->")
                caller = self._qualify(left.strip(), qualifier, lineno)
                callee = self._qualify(right.strip(), qualifier, lineno)
                self.edge_pairs.append((caller, callee))
                continue
            raise AnalysisInputError(
                f"{self.origin}:{lineno}: expected 'a -> b', 'a => syscall:NAME' "
                f"or '@object NAME', got {raw.strip()!r}"
            )

    def _qualify(self, name: str, qualifier: str | None, lineno: int) -> str:
        if not name:
            raise AnalysisInputError(f"{self.origin}:{lineno}: empty symbol name")
        if ":" in name:
            return name
        if qualifier is None:
            raise AnalysisInputError(
                f"{self.origin}:{lineno}: bare name {name!r} with no @object directive"
            )
        return f"{qualifier}:{name}"

    def edges(self):
        return iter(self.edge_pairs)

    def sinks(self):
        return iter(self.sink_pairs)


def build_call_graph(facts: list[BinaryFacts], edge_sources=()) -> CallGraph:
    """Assemble the graph from binary facts plus intra-object edges.

    Imports with no recorded provider are resolved against the other
    facts given, first match in the importing object's dependency order
    winning; still-unresolved imports become ``unknown:`` nodes.  Cycles
    are legal and recorded as a warning for the searcher to mind.
    """
    if not facts:
        raise ValueError("at least the main binary's facts are required")
    graph = CallGraph()
    adjacency: dict[str, set[str]] = {}

    def add_edge(caller: str, callee: str) -> None:
        graph.nodes.add(caller)
        graph.nodes.add(callee)
        adjacency.setdefault(caller, set()).add(callee)

    facts_by_name = {f.name: f for f in facts}

    for source in edge_sources:
        for caller, callee in source.edges():
            add_edge(caller, callee)
        for node, syscall in source.sinks():
            graph.nodes.add(node)
            graph.syscall_sinks[node] = syscall

    for obj in facts:
        for symbol, provider in obj.imports:
            if provider is None:
                provider = _resolve_provider(symbol, obj, facts_by_name)
            caller = f"{obj.name}:{symbol}"
            if provider is None:
                callee = f"{UNKNOWN_OBJECT}:{symbol}"
                graph.unknown_nodes.add(callee)
            else:
                callee = f"{object_display_name(provider)}:{symbol}"
            if caller != callee:
                add_edge(caller, callee)

    graph.edges = {node: tuple(sorted(targets)) for node, targets in adjacency.items()}
    if _has_cycle(graph):
        graph.warnings.append("call graph contains cycles")
    return graph


def _resolve_provider(symbol: str, importer: BinaryFacts,
                      facts_by_name: dict[str, BinaryFacts]) -> str | None:
    candidates = [object_display_name(dep) for dep in importer.dependencies]
    candidates += [name for name in facts_by_name if name != importer.name]
    seen = set()
    for name in candidates:
        if name in seen:
            continue
        seen.add(name)
        other = facts_by_name.get(name)
        if other is not None and other.name != importer.name and symbol in other.exports:
            return other.name
    return None


def _has_cycle(graph: CallGraph) -> bool:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {node: WHITE for node in graph.nodes}
    for start in graph.nodes:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(graph.successors(start)))]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color.get(nxt, WHITE) == GREY:
                    return True
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GREY
                    stack.append((nxt, iter(graph.successors(nxt))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return False
