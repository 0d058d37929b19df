"""Binary fact extraction: imports, exports, transitive dependencies."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .elf import ObjectInfo, read_object

_DEFAULT_LIB_DIR_CANDIDATES = (
    "/lib",
    "/lib64",
    "/usr/lib",
    "/usr/lib64",
    "/lib/x86_64-linux-gnu",
    "/usr/lib/x86_64-linux-gnu",
    "/lib/aarch64-linux-gnu",
    "/usr/lib/aarch64-linux-gnu",
    "/usr/local/lib",
)


def object_display_name(name_or_path: str) -> str:
    """Normalize an object name for graph nodes: ``/lib/libc.so.6`` and
    ``libc.so.6`` both become ``libc``; a plain binary keeps its basename."""
    base = os.path.basename(name_or_path)
    idx = base.find(".so")
    if idx > 0:
        return base[:idx]
    return base


@dataclass
class LibrarySearchPath:
    """Directories used to resolve DT_NEEDED names to files on disk."""

    dirs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.dirs:
            env = os.environ.get("LD_LIBRARY_PATH", "")
            self.dirs = [d for d in env.split(":") if d]
            self.dirs += [d for d in _DEFAULT_LIB_DIR_CANDIDATES if os.path.isdir(d)]

    def resolve(self, libname: str) -> str | None:
        if "/" in libname:
            return libname if os.path.isfile(libname) else None
        for directory in self.dirs:
            candidate = os.path.join(directory, libname)
            if os.path.isfile(candidate):
                return candidate
        return None


@dataclass(frozen=True)
class BinaryFacts:
    """Link-level facts for one object file.

    ``dependencies`` is the transitive closure of the object's declared
    needed libraries, in breadth-first declaration order; names that
    could not be resolved on disk are listed in ``unresolved`` and the
    symbols they would have provided stay unknown.  Each import pairs
    the symbol with the first dependency exporting it, or ``None``.
    """

    path: str
    name: str
    imports: tuple[tuple[str, str | None], ...]
    exports: tuple[str, ...]
    dependencies: tuple[str, ...]
    unresolved: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()


def extract_facts(binary: str, search: LibrarySearchPath | None = None) -> BinaryFacts:
    """Read one executable or shared object and resolve its dependency
    closure through the search path."""
    search = search if search is not None else LibrarySearchPath()
    root = read_object(binary)

    notes: list[str] = []
    if not root.has_dynamic_symbols and not root.needed:
        notes.append("statically linked: no dynamic symbol information")

    # Breadth-first closure over DT_NEEDED, keeping declaration order.
    order: list[str] = []
    unresolved: list[str] = []
    exports_by_lib: dict[str, frozenset[str]] = {}
    queue = list(root.needed)
    seen: set[str] = set()
    while queue:
        libname = queue.pop(0)
        if libname in seen:
            continue
        seen.add(libname)
        order.append(libname)
        path = search.resolve(libname)
        if path is None:
            unresolved.append(libname)
            notes.append(f"dependency unresolved: {libname}")
            exports_by_lib[libname] = frozenset()
            continue
        try:
            info = read_object(path)
        except Exception as exc:
            unresolved.append(libname)
            notes.append(f"dependency unreadable: {libname}: {exc}")
            exports_by_lib[libname] = frozenset()
            continue
        exports_by_lib[libname] = frozenset(info.exports)
        queue.extend(info.needed)

    imports: list[tuple[str, str | None]] = []
    for symbol in root.imports:
        provider = None
        for libname in order:
            if symbol in exports_by_lib[libname]:
                provider = libname
                break
        imports.append((symbol, provider))

    return BinaryFacts(
        path=binary,
        name=object_display_name(binary),
        imports=tuple(imports),
        exports=tuple(root.exports),
        dependencies=tuple(order),
        unresolved=tuple(unresolved),
        notes=tuple(notes),
    )


def facts_from_object(info: ObjectInfo) -> BinaryFacts:
    """Shallow facts for an already-parsed object (no dependency walk)."""
    return BinaryFacts(
        path=info.path,
        name=object_display_name(info.soname or info.path),
        imports=tuple((s, None) for s in info.imports),
        exports=tuple(info.exports),
        dependencies=tuple(info.needed),
    )
