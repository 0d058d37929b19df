"""Resource handles and the pluggable resolver/sysctl providers.

Brokers and the ambient gateway both hand out :class:`CapDescriptor`
values: file descriptors bundled with the rights they carry.  An
operation outside those rights fails with error 93 even though the
underlying descriptor could physically do more.
"""

from __future__ import annotations

import errno
import fcntl as _fcntl
import os
import socket
from dataclasses import dataclass

from .declaration import AddressFamily, OpenFlag, Right
from .errors import (
    ConnectFailed,
    KeyUnavailable,
    ResolutionFailed,
    rights_exceeded_error,
)

ALL_RIGHTS = frozenset(Right)

_FLAG_BITS = {
    OpenFlag.RDONLY: os.O_RDONLY,
    OpenFlag.WRONLY: os.O_WRONLY,
    OpenFlag.RDWR: os.O_RDWR,
    OpenFlag.APPEND: os.O_APPEND,
    OpenFlag.CREAT: os.O_CREAT,
    OpenFlag.TRUNC: os.O_TRUNC,
    OpenFlag.EXCL: os.O_EXCL,
    OpenFlag.NONBLOCK: os.O_NONBLOCK,
    OpenFlag.CLOEXEC: os.O_CLOEXEC,
    OpenFlag.DIRECTORY: os.O_DIRECTORY,
}

_ACCESS_MODES = (OpenFlag.RDONLY, OpenFlag.WRONLY, OpenFlag.RDWR)


def flags_to_bits(flags) -> int:
    bits = 0
    for flag in flags:
        bits |= _FLAG_BITS[OpenFlag(flag)]
    return bits


def bits_to_flags(bits: int) -> frozenset[OpenFlag]:
    """Open-flag names for an os.O_* bit pattern; the access mode is
    always present (O_RDONLY is zero)."""
    mode = bits & os.O_ACCMODE
    if mode == os.O_WRONLY:
        flags = {OpenFlag.WRONLY}
    elif mode == os.O_RDWR:
        flags = {OpenFlag.RDWR}
    else:
        flags = {OpenFlag.RDONLY}
    for flag, bit in _FLAG_BITS.items():
        if flag in _ACCESS_MODES or bit == 0:
            continue
        if bits & bit:
            flags.add(flag)
    return frozenset(flags)


def rights_to_wire(rights) -> str:
    return ",".join(sorted(r.value for r in rights))


def rights_from_wire(text: str) -> frozenset[Right]:
    if not text:
        return frozenset()
    return frozenset(Right(part) for part in text.split(","))


def flags_to_wire(flags) -> str:
    return ",".join(sorted(f.value for f in flags))


def flags_from_wire(text: str) -> frozenset[OpenFlag]:
    if not text:
        return frozenset()
    return frozenset(OpenFlag(part) for part in text.split(","))


class CapDescriptor:
    """An open resource with an attached set of capability rights.

    Descriptor-relative operations stay usable in capability mode; each
    checks its right first and fails with error 93 when it is missing.
    """

    def __init__(self, fd: int, rights=ALL_RIGHTS):
        self._fd = fd
        self.rights = frozenset(rights)

    def _require(self, right: Right) -> None:
        if right not in self.rights:
            raise rights_exceeded_error()

    def fileno(self) -> int:
        if self._fd < 0:
            raise ValueError("descriptor is closed")
        return self._fd

    def read(self, length: int = 65536) -> bytes:
        self._require(Right.READ)
        return os.read(self.fileno(), length)

    def read_all(self, chunk: int = 65536) -> bytes:
        self._require(Right.READ)
        parts = []
        while True:
            data = os.read(self.fileno(), chunk)
            if not data:
                return b"".join(parts)
            parts.append(data)

    def write(self, data: bytes) -> int:
        self._require(Right.WRITE)
        return os.write(self.fileno(), data)

    def seek(self, offset: int, whence: int = os.SEEK_SET) -> int:
        self._require(Right.SEEK)
        return os.lseek(self.fileno(), offset, whence)

    def fstat(self) -> os.stat_result:
        self._require(Right.FSTAT)
        return os.fstat(self.fileno())

    def fcntl(self, cmd: int, arg: int = 0):
        self._require(Right.FCNTL)
        return _fcntl.fcntl(self.fileno(), cmd, arg)

    def to_socket(self) -> socket.socket:
        """Adopt the descriptor as a socket object (ownership moves)."""
        sock = socket.socket(fileno=self.fileno())
        self._fd = -1
        return sock

    def close(self) -> None:
        if self._fd >= 0:
            try:
                os.close(self._fd)
            finally:
                self._fd = -1

    def __enter__(self) -> "CapDescriptor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"CapDescriptor(fd={self._fd}, rights={sorted(r.value for r in self.rights)})"


# --- address families -------------------------------------------------------------

_FAMILY_CONST = {
    AddressFamily.AF_INET: socket.AF_INET,
    AddressFamily.AF_INET6: socket.AF_INET6,
}
_FAMILY_SIZE = {AddressFamily.AF_INET: 4, AddressFamily.AF_INET6: 16}


def family_const(family: AddressFamily) -> int:
    return _FAMILY_CONST[AddressFamily(family)]


def family_addr_size(family: AddressFamily) -> int:
    return _FAMILY_SIZE[AddressFamily(family)]


@dataclass(frozen=True)
class HostEntry:
    """One resolved host: canonical name plus addresses of one family."""

    canonical_name: str
    family: AddressFamily
    addresses: tuple[bytes, ...]

    def __post_init__(self):
        size = family_addr_size(self.family)
        for addr in self.addresses:
            if len(addr) != size:
                raise ValueError(
                    f"{len(addr)}-byte address does not match {self.family.value}"
                )

    def address_strings(self) -> tuple[str, ...]:
        return tuple(
            socket.inet_ntop(family_const(self.family), a) for a in self.addresses
        )

    def packed(self) -> bytes:
        return b"".join(self.addresses)

    @classmethod
    def from_packed(cls, name: str, family: AddressFamily, blob: bytes) -> "HostEntry":
        size = family_addr_size(family)
        if len(blob) % size:
            raise ValueError("packed address blob is not a whole number of addresses")
        addrs = tuple(blob[i : i + size] for i in range(0, len(blob), size))
        return cls(canonical_name=name, family=family, addresses=addrs)


def parse_address(text: str, family: AddressFamily) -> bytes:
    return socket.inet_pton(family_const(family), text)


def open_stream_socket(host: str, port: int, family: AddressFamily, *,
                       connect: bool) -> CapDescriptor:
    """Create a TCP socket and connect or bind it; network-level failures
    surface as :class:`ConnectFailed` with the native error code."""
    af = family_const(family)
    try:
        infos = socket.getaddrinfo(host, port, af, socket.SOCK_STREAM)
        if not infos:
            raise ConnectFailed(errno.EHOSTUNREACH)
        sockaddr = infos[0][4]
        sock = socket.socket(af, socket.SOCK_STREAM)
        try:
            if connect:
                sock.settimeout(10.0)
                sock.connect(sockaddr)
                sock.settimeout(None)
            else:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                sock.bind(sockaddr)
        except BaseException:
            sock.close()
            raise
    except socket.gaierror as exc:
        raise ConnectFailed(exc.errno or 0, str(exc)) from None
    except socket.timeout:
        raise ConnectFailed(errno.ETIMEDOUT, "connection timed out") from None
    except OSError as exc:
        raise ConnectFailed(exc.errno or 0, exc.strerror or str(exc)) from None
    return CapDescriptor(sock.detach(), ALL_RIGHTS)


# --- resolvers ---------------------------------------------------------------------


class SystemResolver:
    """Name resolution through the host's resolver libraries."""

    def resolve_name(self, hostname: str, family: AddressFamily) -> HostEntry:
        try:
            infos = socket.getaddrinfo(
                hostname, None, family_const(family), socket.SOCK_STREAM,
                flags=socket.AI_CANONNAME,
            )
        except socket.gaierror as exc:
            raise ResolutionFailed(f"{hostname}: {exc}") from None
        if not infos:
            raise ResolutionFailed(f"{hostname}: no addresses")
        canonical = infos[0][3] or hostname
        addresses = tuple(parse_address(info[4][0], family) for info in infos)
        return HostEntry(canonical_name=canonical, family=family, addresses=addresses)

    def resolve_addr(self, address: bytes, family: AddressFamily) -> HostEntry:
        text = socket.inet_ntop(family_const(family), address)
        try:
            name, _aliases, _addrs = socket.gethostbyaddr(text)
        except (socket.herror, socket.gaierror, OSError) as exc:
            raise ResolutionFailed(f"{text}: {exc}") from None
        return HostEntry(canonical_name=name, family=family, addresses=(address,))


class FixtureResolver:
    """Deterministic resolver backed by explicit maps; the test oracle."""

    def __init__(self, names: dict | None = None, addrs: dict | None = None):
        # names: (hostname, family) -> HostEntry; addrs: (address text, family) -> HostEntry
        self.names = dict(names or {})
        self.addrs = dict(addrs or {})

    def add_name(self, hostname: str, family: AddressFamily, *addresses: str,
                 canonical: str | None = None) -> None:
        family = AddressFamily(family)
        packed = tuple(parse_address(a, family) for a in addresses)
        entry = HostEntry(canonical or hostname, family, packed)
        self.names[(hostname, family)] = entry
        for text in addresses:
            self.addrs[(text, family)] = entry

    def resolve_name(self, hostname: str, family: AddressFamily) -> HostEntry:
        entry = self.names.get((hostname, AddressFamily(family)))
        if entry is None:
            raise ResolutionFailed(f"{hostname}: not in fixture map")
        return entry

    def resolve_addr(self, address: bytes, family: AddressFamily) -> HostEntry:
        family = AddressFamily(family)
        text = socket.inet_ntop(family_const(family), address)
        entry = self.addrs.get((text, family))
        if entry is None:
            raise ResolutionFailed(f"{text}: not in fixture map")
        return entry


# --- sysctl providers --------------------------------------------------------------


class FixtureSysctlProvider:
    """Key/value store standing in for the system sysctl tree."""

    def __init__(self, values: dict | None = None):
        self.values = dict(values or {})

    def read(self, key: str):
        if key not in self.values:
            raise KeyUnavailable(key)
        return self.values[key]

    def write(self, key: str, value) -> None:
        if key not in self.values:
            raise KeyUnavailable(key)
        self.values[key] = value


class SystemSysctlProvider:
    """Reads dotted keys from the /proc/sys tree (Linux spelling)."""

    root = "/proc/sys"

    def _path(self, key: str) -> str:
        return os.path.join(self.root, *key.split("."))

    def read(self, key: str) -> str:
        try:
            with open(self._path(key), "r", encoding="utf-8") as fh:
                return fh.read().strip()
        except OSError as exc:
            raise KeyUnavailable(f"{key}: {exc}") from None

    def write(self, key: str, value) -> None:
        try:
            with open(self._path(key), "w", encoding="utf-8") as fh:
                fh.write(str(value))
        except OSError as exc:
            raise KeyUnavailable(f"{key}: {exc}") from None
