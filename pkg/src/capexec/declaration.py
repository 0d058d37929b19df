"""Service declaration files: parsing, validation and canonicalization.

A declaration names a workload binary and the resource grants it may use:

    {
        binary: "/bin/cat"
        "system.fileargs": {
            operations: "OPEN",
            flags: "O_RDONLY",
            cap_rights: "READ",
            filename: "test.txt"
        }
    }

The accepted syntax is a superset of JSON: keys may be unquoted, commas
between members are optional, a key may be repeated inside a block (the
values aggregate into a list), and ``#`` starts a comment running to end
of line.  Flag and right names tolerate an ``O_``/``CAP_`` prefix, so
``RDONLY`` and ``O_RDONLY`` name the same flag.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import (
    DeclarationSyntaxError,
    LimitExceededError,
    SchemaError,
    UnknownServiceError,
)

SERVICE_FILEARGS = "system.fileargs"
SERVICE_DNS = "system.dns"
SERVICE_NET = "system.net"
SERVICE_SYSCTL = "system.sysctl"

# Canonical service emission/sorting order.
SERVICE_ORDER = (SERVICE_FILEARGS, SERVICE_DNS, SERVICE_NET, SERVICE_SYSCTL)
KNOWN_SERVICES = frozenset(SERVICE_ORDER)

MAX_DECLARATION_BYTES = 1 << 20
MAX_FILENAMES = 4096


class Right(str, enum.Enum):
    """Capability rights attachable to a brokered file descriptor."""

    READ = "READ"
    WRITE = "WRITE"
    FCNTL = "FCNTL"
    FSTAT = "FSTAT"
    SEEK = "SEEK"


class OpenFlag(str, enum.Enum):
    """Recognized open(2)-style flag names (``O_`` prefix optional)."""

    RDONLY = "RDONLY"
    WRONLY = "WRONLY"
    RDWR = "RDWR"
    APPEND = "APPEND"
    CREAT = "CREAT"
    TRUNC = "TRUNC"
    EXCL = "EXCL"
    NONBLOCK = "NONBLOCK"
    CLOEXEC = "CLOEXEC"
    DIRECTORY = "DIRECTORY"


class AddressFamily(str, enum.Enum):
    AF_INET = "AF_INET"
    AF_INET6 = "AF_INET6"


class DnsQueryType(str, enum.Enum):
    NAME = "NAME"
    ADDR = "ADDR"


class SysctlFlag(str, enum.Enum):
    """Read/write permission on one sysctl key (``CAP_SYSCTL_*`` spelling)."""

    READ = "SYSCTL_READ"
    WRITE = "SYSCTL_WRITE"


# Write-capable open flags; a WRITE right without one of these is suspect.
WRITE_FLAGS = frozenset({OpenFlag.WRONLY, OpenFlag.RDWR, OpenFlag.APPEND})


class Severity(str, enum.Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding; errors make the declaration unusable."""

    severity: Severity
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity.value}: {self.path}: {self.message}"


@dataclass(frozen=True)
class FileArgsGrant:
    operations: frozenset[str]
    flags: frozenset[OpenFlag]
    rights: frozenset[Right]
    filenames: tuple[str, ...]

    service_name = SERVICE_FILEARGS


@dataclass(frozen=True)
class DnsGrant:
    families: frozenset[AddressFamily]
    # Empty means both NAME and ADDR lookups are permitted.
    types: frozenset[DnsQueryType] = frozenset()

    service_name = SERVICE_DNS

    def allows_type(self, qtype: DnsQueryType) -> bool:
        return not self.types or qtype in self.types


@dataclass(frozen=True)
class NetGrant:
    hosts: tuple[str, ...]
    families: frozenset[AddressFamily]

    service_name = SERVICE_NET


@dataclass(frozen=True)
class SysctlEntry:
    value_type: str  # only "mib" in v1
    flags: frozenset[SysctlFlag]


@dataclass(frozen=True)
class SysctlGrant:
    entries: dict[str, SysctlEntry] = field(default_factory=dict)

    service_name = SERVICE_SYSCTL


ResourceGrant = Union[FileArgsGrant, DnsGrant, NetGrant, SysctlGrant]


@dataclass(frozen=True)
class ServiceDeclaration:
    """Parsed declaration: the workload binary plus its resource grants.

    Grants are stored in canonical service order regardless of the order
    they appeared in the source text, so two declarations that differ only
    in block order compare equal.
    """

    binary: str
    grants: tuple[ResourceGrant, ...] = ()

    def grant_for(self, service: str) -> ResourceGrant | None:
        for grant in self.grants:
            if grant.service_name == service:
                return grant
        return None

    @property
    def services(self) -> tuple[str, ...]:
        return tuple(g.service_name for g in self.grants)


# --- tokenizer ----------------------------------------------------------------

_PUNCT = "{}[]:,"
_NAME_EXTRA = "._-"


@dataclass(frozen=True)
class _Token:
    kind: str  # "punct" | "string" | "name" | "number" | "eof"
    value: str
    line: int
    column: int


def _tokenize(text: str) -> Iterator[_Token]:
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch in _PUNCT:
            yield _Token("punct", ch, start_line, start_col)
            i += 1
            col += 1
            continue
        if ch == '"':
            value, consumed = _scan_string(text, i, start_line, start_col)
            yield _Token("string", value, start_line, start_col)
            for c in text[i : i + consumed]:
                if c == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            i += consumed
            continue
        if ch.isalpha() or ch == "_" or ch == "/":
            j = i
            while j < n and (text[j].isalnum() or text[j] in _NAME_EXTRA or text[j] == "/"):
                j += 1
            yield _Token("name", text[i:j], start_line, start_col)
            col += j - i
            i = j
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and (text[j].isdigit() or text[j] in ".eE+-"):
                j += 1
            yield _Token("number", text[i:j], start_line, start_col)
            col += j - i
            i = j
            continue
        raise DeclarationSyntaxError(f"unexpected character {ch!r}", line, col)
    yield _Token("eof", "", line, col)


_ESCAPES = {'"': '"', "\\": "\\", "/": "/", "n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f"}


def _scan_string(text: str, start: int, line: int, col: int) -> tuple[str, int]:
    out = []
    i = start + 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == '"':
            return "".join(out), i - start + 1
        if ch == "\n":
            raise DeclarationSyntaxError("unterminated string", line, col)
        if ch == "\\":
            if i + 1 >= n:
                break
            esc = text[i + 1]
            if esc in _ESCAPES:
                out.append(_ESCAPES[esc])
                i += 2
                continue
            if esc == "u":
                hexs = text[i + 2 : i + 6]
                if len(hexs) != 4:
                    raise DeclarationSyntaxError("bad \\u escape", line, col)
                try:
                    out.append(chr(int(hexs, 16)))
                except ValueError:
                    raise DeclarationSyntaxError("bad \\u escape", line, col) from None
                i += 6
                continue
            raise DeclarationSyntaxError(f"bad escape \\{esc}", line, col)
        out.append(ch)
        i += 1
    raise DeclarationSyntaxError("unterminated string", line, col)


# --- recursive-descent parser --------------------------------------------------

class _Parser:
    """Relaxed-JSON reader producing nested dict/list/str/int values.

    Repeated keys inside one object aggregate into a list in encounter
    order; all scalar values surface as strings or ints.
    """

    def __init__(self, text: str):
        self._tokens = list(_tokenize(text))
        self._pos = 0

    def peek(self) -> _Token:
        return self._tokens[self._pos]

    def next(self) -> _Token:
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def expect_punct(self, ch: str) -> _Token:
        tok = self.next()
        if tok.kind != "punct" or tok.value != ch:
            raise DeclarationSyntaxError(
                f"expected {ch!r}, found {tok.value or 'end of input'!r}", tok.line, tok.column
            )
        return tok

    def parse_document(self) -> dict:
        doc = self.parse_object()
        tok = self.peek()
        if tok.kind != "eof":
            raise DeclarationSyntaxError(
                f"trailing content {tok.value!r}", tok.line, tok.column
            )
        return doc

    def parse_object(self) -> dict:
        self.expect_punct("{")
        obj: dict = {}
        self._key_lines: dict = getattr(self, "_key_lines", {})
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.value == "}":
                self.next()
                return obj
            if tok.kind == "punct" and tok.value == ",":
                self.next()
                continue
            key_tok = self.next()
            if key_tok.kind not in ("string", "name"):
                raise DeclarationSyntaxError(
                    f"expected a key, found {key_tok.value or 'end of input'!r}",
                    key_tok.line,
                    key_tok.column,
                )
            self.expect_punct(":")
            value = self.parse_value()
            key = key_tok.value
            self._key_lines.setdefault(key, key_tok.line)
            if key in obj:
                existing = obj[key]
                if isinstance(existing, list):
                    existing.append(value)
                else:
                    obj[key] = [existing, value]
            else:
                obj[key] = value

    def parse_array(self) -> list:
        self.expect_punct("[")
        items: list = []
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.value == "]":
                self.next()
                return items
            if tok.kind == "punct" and tok.value == ",":
                self.next()
                continue
            items.append(self.parse_value())

    def parse_value(self):
        tok = self.peek()
        if tok.kind == "punct" and tok.value == "{":
            return self.parse_object()
        if tok.kind == "punct" and tok.value == "[":
            return self.parse_array()
        tok = self.next()
        if tok.kind == "string":
            return tok.value
        if tok.kind == "name":
            return tok.value
        if tok.kind == "number":
            try:
                return int(tok.value)
            except ValueError:
                try:
                    return float(tok.value)
                except ValueError:
                    raise DeclarationSyntaxError(
                        f"bad number {tok.value!r}", tok.line, tok.column
                    ) from None
        raise DeclarationSyntaxError(
            f"expected a value, found {tok.value or 'end of input'!r}", tok.line, tok.column
        )

    def key_line(self, key: str) -> int | None:
        return getattr(self, "_key_lines", {}).get(key)


# --- schema interpretation ------------------------------------------------------


def _normalize_token(value: str) -> str:
    """Strip an optional ``O_``/``CAP_`` prefix and uppercase."""
    up = value.strip().upper()
    if up.startswith("O_"):
        up = up[2:]
    elif up.startswith("CAP_"):
        up = up[4:]
    return up


def _as_string_list(value, path: str) -> list[str]:
    if isinstance(value, str):
        return [value]
    if isinstance(value, list):
        out = []
        for item in value:
            if isinstance(item, list):
                out.extend(_as_string_list(item, path))
            elif isinstance(item, str):
                out.append(item)
            else:
                raise SchemaError(f"{path}: expected a string, found {item!r}")
        return out
    raise SchemaError(f"{path}: expected a string or list of strings, found {value!r}")


def _parse_enum_set(values, enum_cls, path: str, *, normalize=True):
    out = set()
    for raw in _as_string_list(values, path):
        token = _normalize_token(raw) if normalize else raw.strip().upper()
        try:
            out.add(enum_cls(token))
        except ValueError:
            allowed = ", ".join(m.value for m in enum_cls)
            raise SchemaError(
                f"{path}: unknown name {raw!r} (allowed: {allowed})"
            ) from None
    return frozenset(out)


def _parse_family_set(values, path: str) -> frozenset[AddressFamily]:
    out = set()
    for raw in _as_string_list(values, path):
        token = raw.strip().upper()
        try:
            out.add(AddressFamily(token))
        except ValueError:
            raise SchemaError(
                f"{path}: unknown address family {raw!r} (allowed: AF_INET, AF_INET6)"
            ) from None
    return frozenset(out)


def _parse_sysctl_flag_set(values, path: str) -> frozenset[SysctlFlag]:
    out = set()
    for raw in _as_string_list(values, path):
        token = _normalize_token(raw)
        try:
            out.add(SysctlFlag(token))
        except ValueError:
            raise SchemaError(
                f"{path}: unknown sysctl flag {raw!r} "
                "(allowed: CAP_SYSCTL_READ, CAP_SYSCTL_WRITE)"
            ) from None
    return frozenset(out)


def _block_keys(block: dict, aliases: dict[str, str], path: str) -> dict[str, object]:
    """Fold aliased key spellings into canonical field names."""
    out: dict[str, object] = {}
    for key, value in block.items():
        canon = aliases.get(key)
        if canon is None:
            raise SchemaError(f"{path}: unknown field {key!r}")
        if canon in out:
            prev = out[canon]
            prev_list = prev if isinstance(prev, list) else [prev]
            new_list = value if isinstance(value, list) else [value]
            out[canon] = prev_list + new_list
        else:
            out[canon] = value
    return out


_FILEARGS_ALIASES = {
    "operations": "operations",
    "operation": "operations",
    "flags": "flags",
    "flag": "flags",
    "cap_rights": "rights",
    "rights": "rights",
    "filename": "filenames",
    "filenames": "filenames",
}

_DNS_ALIASES = {
    "family": "families",
    "families": "families",
    "type": "types",
    "types": "types",
}

_NET_ALIASES = {
    "host": "hosts",
    "hosts": "hosts",
    "family": "families",
    "families": "families",
}


def _parse_fileargs(block, path: str) -> FileArgsGrant:
    if not isinstance(block, dict):
        raise SchemaError(f"{path}: expected a block")
    fields = _block_keys(block, _FILEARGS_ALIASES, path)
    operations = frozenset(
        _normalize_token(op)
        for op in _as_string_list(fields.get("operations", "OPEN"), f"{path}.operations")
    )
    flags = _parse_enum_set(fields.get("flags", []), OpenFlag, f"{path}.flags")
    rights = _parse_enum_set(fields.get("rights", []), Right, f"{path}.cap_rights")
    filenames = []
    for name in _as_string_list(fields.get("filenames", []), f"{path}.filename"):
        if not name or "\x00" in name:
            raise SchemaError(f"{path}.filename: not a well-formed path: {name!r}")
        filenames.append(name)
    if not filenames:
        raise SchemaError(f"{path}: at least one filename is required")
    if len(filenames) > MAX_FILENAMES:
        raise LimitExceededError(
            f"{path}: {len(filenames)} filenames exceed the limit of {MAX_FILENAMES}"
        )
    return FileArgsGrant(
        operations=operations, flags=flags, rights=rights, filenames=tuple(filenames)
    )


def _parse_dns(block, path: str) -> DnsGrant:
    if not isinstance(block, dict):
        raise SchemaError(f"{path}: expected a block")
    fields = _block_keys(block, _DNS_ALIASES, path)
    families = _parse_family_set(fields.get("families", []), f"{path}.family")
    types = _parse_enum_set(fields.get("types", []), DnsQueryType, f"{path}.type")
    return DnsGrant(families=families, types=types)


def _parse_net(block, path: str) -> NetGrant:
    if not isinstance(block, dict):
        raise SchemaError(f"{path}: expected a block")
    fields = _block_keys(block, _NET_ALIASES, path)
    hosts = tuple(_as_string_list(fields.get("hosts", []), f"{path}.host"))
    for host in hosts:
        if not host:
            raise SchemaError(f"{path}.host: empty host name")
    families = _parse_family_set(fields.get("families", []), f"{path}.family")
    return NetGrant(hosts=hosts, families=families)


def _parse_sysctl(block, path: str) -> SysctlGrant:
    if not isinstance(block, dict):
        raise SchemaError(f"{path}: expected a block of key entries")
    entries: dict[str, SysctlEntry] = {}
    for key, spec in block.items():
        key_path = f"{path}.{key}"
        if not _is_sysctl_key(key):
            raise SchemaError(
                f"{path}: {key!r} is not a dot-separated sysctl key name"
            )
        if not isinstance(spec, dict):
            raise SchemaError(f"{key_path}: expected a block with type and flag")
        entry_fields = _block_keys(
            spec, {"type": "type", "flag": "flags", "flags": "flags"}, key_path
        )
        value_type = entry_fields.get("type", "mib")
        if not isinstance(value_type, str) or value_type.lower() != "mib":
            raise SchemaError(f"{key_path}.type: only \"mib\" is supported")
        flags = _parse_sysctl_flag_set(entry_fields.get("flags", []), f"{key_path}.flag")
        entries[key] = SysctlEntry(value_type="mib", flags=flags)
    return SysctlGrant(entries=entries)


def _is_sysctl_key(key: str) -> bool:
    parts = key.split(".")
    return all(part and part.replace("_", "a").isalnum() for part in parts)


_GRANT_PARSERS = {
    SERVICE_FILEARGS: _parse_fileargs,
    SERVICE_DNS: _parse_dns,
    SERVICE_NET: _parse_net,
    SERVICE_SYSCTL: _parse_sysctl,
}


def parse_declaration(text: str) -> ServiceDeclaration:
    """Parse declaration text into a :class:`ServiceDeclaration`.

    Raises :class:`DeclarationSyntaxError` for malformed input,
    :class:`UnknownServiceError` for a top-level block outside the four
    known services, and :class:`SchemaError` for wrong field types.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if len(text.encode("utf-8")) > MAX_DECLARATION_BYTES:
        raise LimitExceededError(
            f"declaration exceeds {MAX_DECLARATION_BYTES} bytes"
        )
    parser = _Parser(text)
    doc = parser.parse_document()

    binary = doc.pop("binary", None)
    if binary is None:
        raise SchemaError("binary: required field is missing")
    if isinstance(binary, list):
        raise SchemaError("binary: must be given exactly once")
    if not isinstance(binary, str) or not binary:
        raise SchemaError(f"binary: expected a non-empty path, found {binary!r}")
    if not binary.startswith("/"):
        raise SchemaError(f"binary: expected an absolute path, found {binary!r}")

    grants: dict[str, ResourceGrant] = {}
    for key, value in doc.items():
        if key not in KNOWN_SERVICES:
            raise UnknownServiceError(key, parser.key_line(key))
        if isinstance(value, list):
            raise SchemaError(f"{key}: at most one grant per service")
        grants[key] = _GRANT_PARSERS[key](value, key)

    ordered = tuple(grants[name] for name in SERVICE_ORDER if name in grants)
    return ServiceDeclaration(binary=binary, grants=ordered)


def load_declaration(path: str) -> ServiceDeclaration:
    with open(path, "rb") as fh:
        data = fh.read(MAX_DECLARATION_BYTES + 1)
    if len(data) > MAX_DECLARATION_BYTES:
        raise LimitExceededError(f"{path}: declaration exceeds {MAX_DECLARATION_BYTES} bytes")
    try:
        return parse_declaration(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DeclarationSyntaxError(f"not UTF-8: {exc}", 0, 0) from None


# --- validation -----------------------------------------------------------------


def validate_declaration(decl: ServiceDeclaration) -> list[Diagnostic]:
    """Return all diagnostics for a parsed declaration; empty means valid.

    Never raises: problems come back as :class:`Diagnostic` values whose
    error severity marks the declaration as unusable.
    """
    diags: list[Diagnostic] = []

    for grant in decl.grants:
        if isinstance(grant, FileArgsGrant):
            _validate_fileargs(grant, diags)
        elif isinstance(grant, DnsGrant):
            if not grant.families:
                diags.append(Diagnostic(
                    Severity.ERROR, "grants.dns.families",
                    "empty family set grants nothing",
                ))
        elif isinstance(grant, NetGrant):
            if not grant.families:
                diags.append(Diagnostic(
                    Severity.ERROR, "grants.net.families",
                    "empty family set grants nothing",
                ))
            if not grant.hosts:
                diags.append(Diagnostic(
                    Severity.ERROR, "grants.net.hosts",
                    "empty host list grants nothing",
                ))
        elif isinstance(grant, SysctlGrant):
            for key, entry in grant.entries.items():
                if not entry.flags:
                    diags.append(Diagnostic(
                        Severity.ERROR, f"grants.sysctl.{key}.flag",
                        "no read or write flag granted",
                    ))
    return diags


def _validate_fileargs(grant: FileArgsGrant, diags: list[Diagnostic]) -> None:
    for op in sorted(grant.operations):
        if op != "OPEN":
            diags.append(Diagnostic(
                Severity.ERROR, "grants.fileargs.operations",
                f"unsupported operation {op!r} (only OPEN is supported)",
            ))
    if Right.WRITE in grant.rights and not (grant.flags & WRITE_FLAGS):
        diags.append(Diagnostic(
            Severity.WARNING, "grants.fileargs.flags",
            "WRITE right granted but no write-capable open flag",
        ))
    seen = set()
    for name in grant.filenames:
        if name in seen:
            diags.append(Diagnostic(
                Severity.WARNING, "grants.fileargs.filenames",
                f"duplicate filename {name!r}",
            ))
        seen.add(name)


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity is Severity.ERROR for d in diags)


# --- canonical serialization ------------------------------------------------------


def _q(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def _emit_list(names) -> str:
    return "[" + ", ".join(_q(n) for n in names) + "]"


def canonicalize(decl: ServiceDeclaration) -> str:
    """Deterministic declaration text; re-parsing yields an equal value.

    Set-valued fields are emitted sorted; ordered fields (filenames,
    hosts) keep declaration order; grants are emitted in the fixed
    service order.
    """
    lines = ["{"]
    lines.append(f"    binary: {_q(decl.binary)}")
    for grant in decl.grants:
        if isinstance(grant, FileArgsGrant):
            lines.append(f"    {_q(SERVICE_FILEARGS)}: {{")
            lines.append(f"        operations: {_emit_list(sorted(grant.operations))},")
            lines.append(f"        flags: {_emit_list(sorted(f.value for f in grant.flags))},")
            lines.append(
                f"        cap_rights: {_emit_list(sorted(r.value for r in grant.rights))},"
            )
            lines.append(f"        filename: {_emit_list(grant.filenames)}")
            lines.append("    }")
        elif isinstance(grant, DnsGrant):
            lines.append(f"    {_q(SERVICE_DNS)}: {{")
            families = _emit_list(sorted(f.value for f in grant.families))
            if grant.types:
                lines.append(f"        family: {families},")
                lines.append(f"        type: {_emit_list(sorted(t.value for t in grant.types))}")
            else:
                lines.append(f"        family: {families}")
            lines.append("    }")
        elif isinstance(grant, NetGrant):
            lines.append(f"    {_q(SERVICE_NET)}: {{")
            lines.append(f"        host: {_emit_list(grant.hosts)},")
            lines.append(f"        family: {_emit_list(sorted(f.value for f in grant.families))}")
            lines.append("    }")
        elif isinstance(grant, SysctlGrant):
            lines.append(f"    {_q(SERVICE_SYSCTL)}: {{")
            entries = sorted(grant.entries.items())
            for idx, (key, entry) in enumerate(entries):
                flags = _emit_list(
                    sorted("CAP_" + f.value for f in entry.flags)
                )
                sep = "," if idx + 1 < len(entries) else ""
                lines.append(
                    f"        {_q(key)}: {{ type: \"mib\", flag: {flags} }}{sep}"
                )
            lines.append("    }")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- randomized valid declarations (used by round-trip tests and fuzzing) ---------

_PATH_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789_-. "


def random_declaration(rng: random.Random) -> ServiceDeclaration:
    """Generate a random valid declaration (parse/canonicalize fixture)."""

    def rand_path(absolute: bool) -> str:
        parts = [
            "".join(rng.choice(_PATH_CHARS) for _ in range(rng.randint(1, 10))).strip()
            or "f"
            for _ in range(rng.randint(1, 3))
        ]
        name = "/".join(parts)
        return ("/" + name) if absolute else name

    def rand_subset(pool, min_n=1):
        pool = list(pool)
        n = rng.randint(min_n, len(pool))
        return frozenset(rng.sample(pool, n))

    grants: list[ResourceGrant] = []
    if rng.random() < 0.8:
        count = rng.randint(1, 4)
        names = tuple(rand_path(rng.random() < 0.5) for _ in range(count))
        grants.append(FileArgsGrant(
            operations=frozenset({"OPEN"}),
            flags=rand_subset(OpenFlag),
            rights=rand_subset(Right),
            filenames=names,
        ))
    if rng.random() < 0.5:
        grants.append(DnsGrant(
            families=rand_subset(AddressFamily),
            types=rand_subset(DnsQueryType, min_n=0),
        ))
    if rng.random() < 0.5:
        hosts = tuple(
            "host%d.example" % rng.randint(0, 99) for _ in range(rng.randint(1, 3))
        )
        grants.append(NetGrant(hosts=hosts, families=rand_subset(AddressFamily)))
    if rng.random() < 0.5:
        entries = {}
        for _ in range(rng.randint(1, 3)):
            key = ".".join(
                rng.choice(["vm", "kern", "net", "hw"])
                for _ in range(rng.randint(1, 2))
            ) + f".k{rng.randint(0, 99)}"
            entries[key] = SysctlEntry(value_type="mib", flags=rand_subset(SysctlFlag))
        grants.append(SysctlGrant(entries=entries))

    ordered = tuple(
        g for name in SERVICE_ORDER for g in grants if g.service_name == name
    )
    return ServiceDeclaration(binary=rand_path(True), grants=ordered)
