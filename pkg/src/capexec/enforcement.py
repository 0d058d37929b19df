"""Capability-mode enforcement for the simulation backend.

Every ambient resource access a fixture workload makes funnels through
one mediation point, :meth:`EnforcementContext.gateway_op`.  Before
capability-mode entry the gateway executes operations directly.  After
entry, any operation that names a global namespace (a filesystem path,
a network address, a process id, a sysctl key) is denied with error 94;
operations on descriptors the process already holds keep working.
"""

from __future__ import annotations

import enum
import itertools
import os
import signal as _signal
import threading
from dataclasses import dataclass

from .declaration import AddressFamily
from .errors import AlreadyEntered, CapabilityError, capability_mode_error
from .resources import (
    ALL_RIGHTS,
    CapDescriptor,
    FixtureSysctlProvider,
    SystemResolver,
    SystemSysctlProvider,
    open_stream_socket,
)
from .trace import TraceEvent, TraceSink


class AmbientCall(enum.Enum):
    """The mediated operations and whether each names a global namespace."""

    OPEN = ("open", True)
    CONNECT = ("connect", True)
    BIND = ("bind", True)
    RESOLVE_NAME = ("gethostbyname", True)
    RESOLVE_ADDR = ("gethostbyaddr", True)
    SYSCTL_READ = ("sysctlbyname", True)
    SYSCTL_WRITE = ("sysctlbyname_w", True)
    KILL = ("kill", True)
    READ = ("read", False)
    WRITE = ("write", False)
    CLOSE = ("close", False)
    FSTAT = ("fstat", False)
    SEEK = ("lseek", False)

    @property
    def syscall_name(self) -> str:
        return self.value[0]

    @property
    def global_namespace(self) -> bool:
        return self.value[1]


@dataclass
class AmbientOp:
    """One operation descriptor handed to the gateway."""

    call: AmbientCall
    args: tuple

    def describe(self) -> str:
        shown = []
        for arg in self.args:
            if isinstance(arg, CapDescriptor):
                shown.append(f"fd:{arg._fd}")
            elif isinstance(arg, bytes):
                shown.append(arg.hex())
            else:
                shown.append(repr(arg))
        return ",".join(shown)


def ambient_open(path: str, flags: int = os.O_RDONLY) -> AmbientOp:
    return AmbientOp(AmbientCall.OPEN, (path, flags))


def ambient_connect(host: str, port: int, family: AddressFamily) -> AmbientOp:
    return AmbientOp(AmbientCall.CONNECT, (host, port, AddressFamily(family)))


def ambient_bind(host: str, port: int, family: AddressFamily) -> AmbientOp:
    return AmbientOp(AmbientCall.BIND, (host, port, AddressFamily(family)))


def ambient_resolve_name(hostname: str, family: AddressFamily) -> AmbientOp:
    return AmbientOp(AmbientCall.RESOLVE_NAME, (hostname, AddressFamily(family)))


def ambient_resolve_addr(address: bytes, family: AddressFamily) -> AmbientOp:
    return AmbientOp(AmbientCall.RESOLVE_ADDR, (address, AddressFamily(family)))


def ambient_sysctl_read(key: str) -> AmbientOp:
    return AmbientOp(AmbientCall.SYSCTL_READ, (key,))


def ambient_sysctl_write(key: str, value) -> AmbientOp:
    return AmbientOp(AmbientCall.SYSCTL_WRITE, (key, value))


def ambient_kill(pid: int, sig: int = _signal.SIGTERM) -> AmbientOp:
    return AmbientOp(AmbientCall.KILL, (pid, sig))


def ambient_read(desc: CapDescriptor, length: int = 65536) -> AmbientOp:
    return AmbientOp(AmbientCall.READ, (desc, length))


def ambient_write(desc: CapDescriptor, data: bytes) -> AmbientOp:
    return AmbientOp(AmbientCall.WRITE, (desc, data))


def ambient_close(desc: CapDescriptor) -> AmbientOp:
    return AmbientOp(AmbientCall.CLOSE, (desc,))


def ambient_fstat(desc: CapDescriptor) -> AmbientOp:
    return AmbientOp(AmbientCall.FSTAT, (desc,))


def ambient_seek(desc: CapDescriptor, offset: int, whence: int = os.SEEK_SET) -> AmbientOp:
    return AmbientOp(AmbientCall.SEEK, (desc, offset, whence))


class Mode(enum.Enum):
    AMBIENT = "ambient"
    CAPABILITY = "capability"


class EnforcementContext:
    """Per-workload enforcement state: the mediation gateway plus the
    irreversible capability-mode bit."""

    def __init__(self, *, trace: TraceSink | None = None, role: str = "workload",
                 resolver=None, sysctl_provider=None):
        self.mode = Mode.AMBIENT
        self.trace = trace if trace is not None else TraceSink()
        self.role = role
        self.resolver = resolver if resolver is not None else SystemResolver()
        if sysctl_provider is not None:
            self.sysctl_provider = sysctl_provider
        elif os.path.isdir(SystemSysctlProvider.root):
            self.sysctl_provider = SystemSysctlProvider()
        else:
            self.sysctl_provider = FixtureSysctlProvider()
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    @property
    def entered(self) -> bool:
        return self.mode is Mode.CAPABILITY

    def enter_capability_mode(self) -> None:
        """Flip to capability mode; irreversible, second entry fails."""
        with self._lock:
            if self.mode is Mode.CAPABILITY:
                raise AlreadyEntered("capability mode already entered")
            self.mode = Mode.CAPABILITY
        call_id = next(self._ids)
        self._record("CALL", f"cap_enter#{call_id}")
        self._record("RET", f"cap_enter#{call_id} 0")

    def _record(self, kind: str, detail: str, error_code: int | None = None) -> None:
        self.trace.record(TraceEvent(
            role=self.role, kind=kind, detail=detail, error_code=error_code,
        ))

    def gateway_op(self, op: AmbientOp):
        """Run one ambient operation under the current mode's rules."""
        call_id = next(self._ids)
        label = f"{op.call.syscall_name}#{call_id}"
        self._record("CALL", f"{label}({op.describe()})")
        if self.mode is Mode.CAPABILITY and op.call.global_namespace:
            error = capability_mode_error()
            self._record("CAP_DENIED", label, error_code=error.code)
            raise error
        try:
            result = self._execute(op)
        except CapabilityError as exc:
            self._record("RET", f"{label} -1", error_code=exc.code)
            raise
        except OSError as exc:
            self._record("RET", f"{label} -1", error_code=exc.errno)
            raise
        except Exception:
            self._record("RET", f"{label} -1")
            raise
        self._record("RET", f"{label} {_summarize(result)}")
        return result

    def _execute(self, op: AmbientOp):
        call = op.call
        if call is AmbientCall.OPEN:
            path, flags = op.args
            fd = os.open(path, flags)
            return CapDescriptor(fd, ALL_RIGHTS)
        if call is AmbientCall.CONNECT:
            host, port, family = op.args
            return open_stream_socket(host, port, family, connect=True)
        if call is AmbientCall.BIND:
            host, port, family = op.args
            return open_stream_socket(host, port, family, connect=False)
        if call is AmbientCall.RESOLVE_NAME:
            hostname, family = op.args
            return self.resolver.resolve_name(hostname, family)
        if call is AmbientCall.RESOLVE_ADDR:
            address, family = op.args
            return self.resolver.resolve_addr(address, family)
        if call is AmbientCall.SYSCTL_READ:
            (key,) = op.args
            return self.sysctl_provider.read(key)
        if call is AmbientCall.SYSCTL_WRITE:
            key, value = op.args
            return self.sysctl_provider.write(key, value)
        if call is AmbientCall.KILL:
            pid, sig = op.args
            os.kill(pid, sig)
            return 0
        if call is AmbientCall.READ:
            desc, length = op.args
            return desc.read(length)
        if call is AmbientCall.WRITE:
            desc, data = op.args
            return desc.write(data)
        if call is AmbientCall.CLOSE:
            (desc,) = op.args
            desc.close()
            return 0
        if call is AmbientCall.FSTAT:
            (desc,) = op.args
            return desc.fstat()
        if call is AmbientCall.SEEK:
            desc, offset, whence = op.args
            return desc.seek(offset, whence)
        raise ValueError(f"unhandled ambient call {call}")


def _summarize(result) -> str:
    if isinstance(result, CapDescriptor):
        return str(result._fd)
    if isinstance(result, bytes):
        return f"{len(result)} bytes"
    if result is None:
        return "0"
    if isinstance(result, os.stat_result):
        return f"size={result.st_size}"
    return str(result)[:80]


def enter_capability_mode(ctx: EnforcementContext) -> None:
    ctx.enter_capability_mode()


def gateway_op(ctx: EnforcementContext, op: AmbientOp):
    return ctx.gateway_op(op)
