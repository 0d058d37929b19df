"""Workload-side client: drop-in resource calls routed over channels.

A workload built against this library needs no sandbox-specific logic:
each ``c_*`` call mirrors its ambient counterpart.  When the supervisor
granted the relevant service, the call rides the inherited capability
channel to that broker; otherwise it falls back to the ambient gateway,
which executes it directly in ambient mode and denies it with error 94
once capability mode is entered.

Channel discovery reads ``CAPEXEC_CHANNELS`` (``service=fd;...``); the
supervisor may also set ``CAPEXEC_TRACE`` (trace file to append to) and
``CAPEXEC_CAPMODE=1`` (enter capability mode during init, before any
user logic runs).
"""

from __future__ import annotations

import logging
import os
import threading

from .brokers import (
    dns_resolve_addr,
    dns_resolve_name,
    fileargs_open,
    net_bind,
    net_connect,
    sysctl_read,
)
from .capchannel import (
    CHANNELS_ENV,
    Channel,
    channel_from_fd,
    parse_channel_env,
)
from .declaration import (
    AddressFamily,
    KNOWN_SERVICES,
    SERVICE_DNS,
    SERVICE_FILEARGS,
    SERVICE_NET,
    SERVICE_SYSCTL,
)
from .enforcement import (
    EnforcementContext,
    ambient_bind,
    ambient_connect,
    ambient_open,
    ambient_resolve_addr,
    ambient_resolve_name,
    ambient_sysctl_read,
)
from .errors import CapabilityError, ChannelClosed, capability_mode_error
from .trace import FileTraceSink, TraceEvent

log = logging.getLogger("capexec.capclient")

TRACE_ENV = "CAPEXEC_TRACE"
CAPMODE_ENV = "CAPEXEC_CAPMODE"

# Ambient call name -> (service, broker command).
DEFAULT_REDIRECTS = {
    "open": (SERVICE_FILEARGS, "open"),
    "gethostbyname": (SERVICE_DNS, "resolve_name"),
    "gethostbyaddr": (SERVICE_DNS, "resolve_addr"),
    "connect": (SERVICE_NET, "connect"),
    "bind": (SERVICE_NET, "bind"),
    "sysctlbyname": (SERVICE_SYSCTL, "read"),
}


class ClientContext:
    """Per-workload routing state: discovered channels plus the gateway."""

    def __init__(self, channels: dict[str, Channel] | None = None,
                 enforcement: EnforcementContext | None = None,
                 redirects: dict[str, tuple[str, str]] | None = None,
                 warnings: list[str] | None = None):
        self.channels = dict(channels or {})
        self.enforcement = enforcement if enforcement is not None else EnforcementContext()
        self.redirects = dict(redirects if redirects is not None else DEFAULT_REDIRECTS)
        self.warnings = list(warnings or [])
        self._locks = {name: threading.Lock() for name in self.channels}

    @property
    def mode(self) -> str:
        return self.enforcement.mode.value

    @property
    def trace(self):
        return self.enforcement.trace

    def channel_for(self, call_name: str) -> Channel | None:
        entry = self.redirects.get(call_name)
        if entry is None:
            return None
        return self.channels.get(entry[0])

    def _serialized(self, service: str):
        lock = self._locks.get(service)
        if lock is None:
            lock = self._locks.setdefault(service, threading.Lock())
        return lock

    def close(self) -> None:
        for channel in self.channels.values():
            channel.close()


def client_init(environ=None, *, enforcement: EnforcementContext | None = None) -> ClientContext:
    """Build a client context from the inherited environment.

    Unknown service names in CAPEXEC_CHANNELS are skipped with a warning;
    an absent variable yields an empty (purely ambient) context.  A
    malformed entry raises MalformedChannelSpec.
    """
    environ = os.environ if environ is None else environ
    mapping = parse_channel_env(environ.get(CHANNELS_ENV, ""))

    trace_path = environ.get(TRACE_ENV)
    if enforcement is None:
        sink = FileTraceSink(trace_path) if trace_path else None
        enforcement = EnforcementContext(trace=sink) if sink else EnforcementContext()

    warnings: list[str] = []
    channels: dict[str, Channel] = {}
    for service, fd in mapping.items():
        if service not in KNOWN_SERVICES:
            warnings.append(f"ignoring unknown service {service!r} in {CHANNELS_ENV}")
            log.warning("ignoring unknown service %r in %s", service, CHANNELS_ENV)
            continue
        channel = channel_from_fd(fd, service)
        channel.set_trace(enforcement.trace, "workload")
        channels[service] = channel

    ctx = ClientContext(channels, enforcement, warnings=warnings)
    if environ.get(CAPMODE_ENV) == "1" and not enforcement.entered:
        enforcement.enter_capability_mode()
    return ctx


def redirect(ctx: ClientContext, call_name: str, *args, timeout: float = 5.0):
    """Route one ambient call through its broker channel.

    A call with no table entry or no channel falls through to the
    gateway (and is denied after capability-mode entry).  A broker
    denial is recorded as CAP_DENIED; a dead broker surfaces as
    error 94 with a trace note.
    """
    channel = ctx.channel_for(call_name)
    if channel is None:
        return _gateway_fallback(ctx, call_name, args)
    service = ctx.redirects[call_name][0]
    with ctx._serialized(service):
        try:
            result = _broker_call(channel, call_name, args, timeout)
        except CapabilityError as exc:
            ctx.trace.record(TraceEvent(
                role="workload", kind="CAP_DENIED",
                detail=f"{call_name}({_show_args(args)})", error_code=exc.code,
            ))
            raise
        except ChannelClosed:
            error = capability_mode_error()
            ctx.trace.record(TraceEvent(
                role="workload", kind="CAP_DENIED",
                detail=f"{call_name}({_show_args(args)}) broker channel closed",
                error_code=error.code,
            ))
            raise error from None
    return result


def _broker_call(channel: Channel, call_name: str, args: tuple, timeout: float):
    if call_name == "open":
        name, flags = args
        return fileargs_open(channel, name, flags, timeout)
    if call_name == "gethostbyname":
        hostname, family = args
        return dns_resolve_name(channel, hostname, family, timeout)
    if call_name == "gethostbyaddr":
        address, family = args
        return dns_resolve_addr(channel, address, family, timeout)
    if call_name == "connect":
        host, port, family = args
        return net_connect(channel, host, port, family, timeout)
    if call_name == "bind":
        host, port, family = args
        return net_bind(channel, host, port, family, timeout)
    if call_name == "sysctlbyname":
        (key,) = args
        return sysctl_read(channel, key, timeout)
    raise ValueError(f"no broker command for call {call_name!r}")


_AMBIENT_OPS = {
    "open": ambient_open,
    "gethostbyname": ambient_resolve_name,
    "gethostbyaddr": ambient_resolve_addr,
    "connect": ambient_connect,
    "bind": ambient_bind,
    "sysctlbyname": ambient_sysctl_read,
}


def _gateway_fallback(ctx: ClientContext, call_name: str, args: tuple):
    builder = _AMBIENT_OPS.get(call_name)
    if builder is None:
        raise ValueError(f"unknown call {call_name!r}")
    return ctx.enforcement.gateway_op(builder(*args))


def _show_args(args: tuple) -> str:
    return ",".join(
        a.hex() if isinstance(a, bytes) else str(a) for a in args
    )


# --- drop-in call surface ------------------------------------------------------


def c_open(ctx: ClientContext, name: str, flags: int = os.O_RDONLY):
    return redirect(ctx, "open", name, flags)


def c_gethostbyname(ctx: ClientContext, name: str, family=AddressFamily.AF_INET):
    return redirect(ctx, "gethostbyname", name, family)


def c_gethostbyaddr(ctx: ClientContext, addr: bytes, family=AddressFamily.AF_INET):
    return redirect(ctx, "gethostbyaddr", addr, family)


def c_connect(ctx: ClientContext, host: str, port: int, family=AddressFamily.AF_INET):
    return redirect(ctx, "connect", host, port, family)


def c_bind(ctx: ClientContext, host: str, port: int, family=AddressFamily.AF_INET):
    return redirect(ctx, "bind", host, port, family)


def c_sysctl_read(ctx: ClientContext, key: str):
    return redirect(ctx, "sysctlbyname", key)
