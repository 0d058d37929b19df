"""Capability-service brokers: fileargs, dns, net and sysctl.

A broker is a helper that holds ambient privilege and serves exactly one
resource class over one channel, subject to limits frozen at spawn time.
Limits may later be narrowed (entries removed) but never widened.  A
request outside the limits fails with error 93; a command belonging to a
different service fails with a protocol error, never silently.

Spawning supports two backends: ``simulation`` runs the broker as an
isolated task (thread) inside the supervisor process over in-memory or
socket channels; ``native`` forks a child process per broker, the
channel being a pre-connected local socket pair.  For fileargs, every
whitelisted file is pre-opened during spawn, before the serving side
starts, so a missing file fails the spawn with its filename.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

from .capchannel import (
    Channel,
    DescriptorRef,
    Kind,
    error_response,
    request,
    response,
    simulation_channel_pair,
    socket_channel_pair,
    channel_from_fd,
    DEFAULT_CALL_TIMEOUT,
)
from .declaration import (
    AddressFamily,
    DnsGrant,
    DnsQueryType,
    FileArgsGrant,
    NetGrant,
    OpenFlag,
    ResourceGrant,
    Right,
    SysctlEntry,
    SysctlGrant,
    SERVICE_DNS,
    SERVICE_FILEARGS,
    SERVICE_NET,
    SERVICE_SYSCTL,
)
from .errors import (
    CapabilityError,
    ChannelClosed,
    ChannelTimeout,
    ConnectFailed,
    DecodeError,
    ERR_KEY_UNAVAILABLE,
    ERR_PROTOCOL,
    ERR_RESOLUTION,
    KeyUnavailable,
    PreopenFailed,
    ProtocolError,
    ResolutionFailed,
    SpawnFailed,
    error_label,
    rights_exceeded_error,
)
from .resources import (
    ALL_RIGHTS,
    CapDescriptor,
    HostEntry,
    SystemResolver,
    SystemSysctlProvider,
    FixtureSysctlProvider,
    bits_to_flags,
    family_addr_size,
    flags_from_wire,
    flags_to_bits,
    flags_to_wire,
    open_stream_socket,
    rights_from_wire,
    rights_to_wire,
)
from .trace import TraceEvent


# --- grant wire form (limit messages) ------------------------------------------


def grant_to_wire(grant: ResourceGrant) -> str:
    if isinstance(grant, FileArgsGrant):
        obj = {
            "service": SERVICE_FILEARGS,
            "operations": sorted(grant.operations),
            "flags": sorted(f.value for f in grant.flags),
            "rights": sorted(r.value for r in grant.rights),
            "filenames": list(grant.filenames),
        }
    elif isinstance(grant, DnsGrant):
        obj = {
            "service": SERVICE_DNS,
            "families": sorted(f.value for f in grant.families),
            "types": sorted(t.value for t in grant.types),
        }
    elif isinstance(grant, NetGrant):
        obj = {
            "service": SERVICE_NET,
            "hosts": list(grant.hosts),
            "families": sorted(f.value for f in grant.families),
        }
    elif isinstance(grant, SysctlGrant):
        obj = {
            "service": SERVICE_SYSCTL,
            "entries": {
                key: {"type": entry.value_type, "flags": sorted(f.value for f in entry.flags)}
                for key, entry in grant.entries.items()
            },
        }
    else:
        raise TypeError(f"not a resource grant: {grant!r}")
    return json.dumps(obj, sort_keys=True)


def grant_from_wire(text: str) -> ResourceGrant:
    obj = json.loads(text)
    service = obj.get("service")
    if service == SERVICE_FILEARGS:
        return FileArgsGrant(
            operations=frozenset(obj["operations"]),
            flags=frozenset(OpenFlag(f) for f in obj["flags"]),
            rights=frozenset(Right(r) for r in obj["rights"]),
            filenames=tuple(obj["filenames"]),
        )
    if service == SERVICE_DNS:
        return DnsGrant(
            families=frozenset(AddressFamily(f) for f in obj["families"]),
            types=frozenset(DnsQueryType(t) for t in obj["types"]),
        )
    if service == SERVICE_NET:
        return NetGrant(
            hosts=tuple(obj["hosts"]),
            families=frozenset(AddressFamily(f) for f in obj["families"]),
        )
    if service == SERVICE_SYSCTL:
        return SysctlGrant(entries={
            key: SysctlEntry(value_type=spec["type"],
                             flags=frozenset(_sysctl_flag(f) for f in spec["flags"]))
            for key, spec in obj["entries"].items()
        })
    raise ProtocolError(f"unknown service in limit message: {service!r}")


def _sysctl_flag(name: str):
    from .declaration import SysctlFlag

    return SysctlFlag(name)


def _effective_dns_types(grant: DnsGrant) -> frozenset[DnsQueryType]:
    return grant.types if grant.types else frozenset(DnsQueryType)


def is_narrowing(current: ResourceGrant, narrowed: ResourceGrant) -> bool:
    """True iff ``narrowed`` grants no request that ``current`` does not."""
    if type(current) is not type(narrowed):
        return False
    if isinstance(current, FileArgsGrant):
        return (
            narrowed.operations <= current.operations
            and narrowed.flags <= current.flags
            and narrowed.rights <= current.rights
            and set(narrowed.filenames) <= set(current.filenames)
        )
    if isinstance(current, DnsGrant):
        return (
            narrowed.families <= current.families
            and _effective_dns_types(narrowed) <= _effective_dns_types(current)
        )
    if isinstance(current, NetGrant):
        return (
            set(narrowed.hosts) <= set(current.hosts)
            and narrowed.families <= current.families
        )
    if isinstance(current, SysctlGrant):
        for key, entry in narrowed.entries.items():
            cur = current.entries.get(key)
            if cur is None or not entry.flags <= cur.flags:
                return False
        return True
    return False


# --- broker service implementations ----------------------------------------------


class BrokerLimits:
    """Limits for one broker: set exactly once, then only narrowed."""

    def __init__(self, service_name: str):
        self.service_name = service_name
        self.grant: ResourceGrant | None = None

    @property
    def frozen(self) -> bool:
        return self.grant is not None

    def set_or_narrow(self, grant: ResourceGrant) -> ResourceGrant | None:
        """Apply a limit message; returns the previous grant on a narrow."""
        if grant.service_name != self.service_name:
            raise ProtocolError(
                f"{self.service_name} broker got limits for {grant.service_name}"
            )
        if self.grant is None:
            self.grant = grant
            return None
        if not is_narrowing(self.grant, grant):
            raise rights_exceeded_error()
        previous, self.grant = self.grant, grant
        return previous


class BaseBroker:
    service_name = ""
    commands: frozenset[str] = frozenset()

    def __init__(self, *, trace=None):
        self.limits = BrokerLimits(self.service_name)
        self.trace = trace
        self._call_ids = 0

    def _record(self, kind: str, detail: str, error_code: int | None = None) -> None:
        if self.trace is not None:
            self.trace.record(TraceEvent(
                role="broker", kind=kind, detail=detail, error_code=error_code,
            ))

    def _next_call_id(self) -> int:
        self._call_ids += 1
        return self._call_ids

    def set_limits(self, grant: ResourceGrant) -> None:
        previous = self.limits.set_or_narrow(grant)
        self.apply_limits(grant, previous)

    def apply_limits(self, grant: ResourceGrant, previous: ResourceGrant | None) -> None:
        """Hook for per-service reaction to new (narrower) limits."""

    def shutdown(self) -> None:
        """Release broker-held resources (end of serve loop)."""

    def handle(self, req) -> dict:
        cmd = req.cmd
        if cmd == "limit":
            grant = grant_from_wire(req.attrs["grant"])
            self.set_limits(grant)
            return {"ok": 1}
        if cmd not in self.commands:
            raise ProtocolError(f"{self.service_name} does not serve {cmd!r}")
        if not self.limits.frozen:
            raise ProtocolError("limits not set")
        return self.dispatch(cmd, req)

    def dispatch(self, cmd: str, req) -> dict:
        raise NotImplementedError


class FileargsBroker(BaseBroker):
    service_name = SERVICE_FILEARGS
    commands = frozenset({"open"})

    def __init__(self, *, trace=None):
        super().__init__(trace=trace)
        self._held: dict[str, int] = {}

    @staticmethod
    def _norm(path: str) -> str:
        return os.path.normpath(path)

    def apply_limits(self, grant: FileArgsGrant, previous) -> None:
        if previous is None:
            bits = flags_to_bits(grant.flags)
            for name in grant.filenames:
                key = self._norm(name)
                if key in self._held:
                    continue
                try:
                    self._held[key] = os.open(name, bits)
                except OSError as exc:
                    self.shutdown()
                    raise PreopenFailed(name, exc.strerror or str(exc)) from None
            return
        keep = {self._norm(n) for n in grant.filenames}
        for key in list(self._held):
            if key not in keep:
                os.close(self._held.pop(key))

    def held_descriptors(self) -> list[int]:
        return list(self._held.values())

    def shutdown(self) -> None:
        for fd in self._held.values():
            try:
                os.close(fd)
            except OSError:
                pass
        self._held.clear()

    def dispatch(self, cmd: str, req) -> dict:
        grant: FileArgsGrant = self.limits.grant
        name = req.attrs.get("name")
        if not isinstance(name, str):
            raise ProtocolError("open request lacks a name")
        flags = flags_from_wire(req.attrs.get("flags", ""))
        if "OPEN" not in grant.operations:
            raise rights_exceeded_error()
        key = self._norm(name)
        if key not in self._held or not flags <= grant.flags:
            raise rights_exceeded_error()
        call_id = self._next_call_id()
        self._record("CALL", f"openat#{call_id}({name!r})")
        fd = os.dup(self._held[key])
        self._record("RET", f"openat#{call_id} {fd}")
        return {"fd": DescriptorRef(fd), "rights": rights_to_wire(grant.rights)}


class DnsBroker(BaseBroker):
    service_name = SERVICE_DNS
    commands = frozenset({"resolve_name", "resolve_addr"})

    def __init__(self, *, resolver=None, trace=None):
        super().__init__(trace=trace)
        self.resolver = resolver if resolver is not None else SystemResolver()

    def _check(self, family: AddressFamily, qtype: DnsQueryType) -> None:
        grant: DnsGrant = self.limits.grant
        if family not in grant.families or not grant.allows_type(qtype):
            raise rights_exceeded_error()

    def dispatch(self, cmd: str, req) -> dict:
        family = _parse_family(req.attrs.get("family"))
        if cmd == "resolve_name":
            hostname = req.attrs.get("name")
            if not isinstance(hostname, str):
                raise ProtocolError("resolve_name lacks a name")
            self._check(family, DnsQueryType.NAME)
            entry = self.resolver.resolve_name(hostname, family)
        else:
            address = req.attrs.get("addr")
            if not isinstance(address, bytes) or len(address) != family_addr_size(family):
                raise ProtocolError("resolve_addr lacks a valid address")
            self._check(family, DnsQueryType.ADDR)
            entry = self.resolver.resolve_addr(address, family)
        return {
            "name": entry.canonical_name,
            "family": entry.family.value,
            "addresses": entry.packed(),
        }


class NetBroker(BaseBroker):
    service_name = SERVICE_NET
    commands = frozenset({"connect", "bind"})

    def dispatch(self, cmd: str, req) -> dict:
        grant: NetGrant = self.limits.grant
        host = req.attrs.get("host")
        port = req.attrs.get("port")
        family = _parse_family(req.attrs.get("family"))
        if not isinstance(host, str) or not isinstance(port, int):
            raise ProtocolError(f"{cmd} request lacks host/port")
        if host not in grant.hosts or family not in grant.families:
            raise rights_exceeded_error()
        call_id = self._next_call_id()
        self._record("CALL", f"{cmd}#{call_id}({host!r},{port})")
        desc = open_stream_socket(host, port, family, connect=(cmd == "connect"))
        self._record("RET", f"{cmd}#{call_id} {desc.fileno()}")
        return {"fd": DescriptorRef(desc.fileno()), "rights": rights_to_wire(ALL_RIGHTS)}


class SysctlBroker(BaseBroker):
    service_name = SERVICE_SYSCTL
    commands = frozenset({"read", "write"})

    def __init__(self, *, provider=None, trace=None):
        super().__init__(trace=trace)
        if provider is not None:
            self.provider = provider
        elif os.path.isdir(SystemSysctlProvider.root):
            self.provider = SystemSysctlProvider()
        else:
            self.provider = FixtureSysctlProvider()

    def _entry(self, key: str) -> SysctlEntry:
        grant: SysctlGrant = self.limits.grant
        entry = grant.entries.get(key)
        if entry is None:
            raise rights_exceeded_error()
        return entry

    def dispatch(self, cmd: str, req) -> dict:
        from .declaration import SysctlFlag

        key = req.attrs.get("key")
        if not isinstance(key, str):
            raise ProtocolError(f"{cmd} request lacks a key")
        entry = self._entry(key)
        if cmd == "read":
            if SysctlFlag.READ not in entry.flags:
                raise rights_exceeded_error()
            value = self.provider.read(key)
            if not isinstance(value, (str, int, bytes)):
                value = str(value)
            return {"value": value}
        if SysctlFlag.WRITE not in entry.flags:
            raise rights_exceeded_error()
        if "value" not in req.attrs:
            raise ProtocolError("write request lacks a value")
        self.provider.write(key, req.attrs["value"])
        return {"ok": 1}


def _parse_family(value) -> AddressFamily:
    if not isinstance(value, str):
        raise ProtocolError("request lacks an address family")
    try:
        return AddressFamily(value)
    except ValueError:
        raise ProtocolError(f"unknown address family {value!r}") from None


_BROKER_CLASSES = {
    SERVICE_FILEARGS: FileargsBroker,
    SERVICE_DNS: DnsBroker,
    SERVICE_NET: NetBroker,
    SERVICE_SYSCTL: SysctlBroker,
}


def make_broker(service: str, *, resolver=None, provider=None, trace=None) -> BaseBroker:
    cls = _BROKER_CLASSES.get(service)
    if cls is None:
        raise SpawnFailed(f"no broker for service {service!r}")
    if cls is DnsBroker:
        return cls(resolver=resolver, trace=trace)
    if cls is SysctlBroker:
        return cls(provider=provider, trace=trace)
    return cls(trace=trace)


# --- serve loop -------------------------------------------------------------------


def serve_channel(channel: Channel, broker: BaseBroker) -> None:
    """Serve requests strictly serially until the peer goes away."""
    while True:
        try:
            req = channel.recv(None)
        except (ChannelClosed, ChannelTimeout, DecodeError, OSError):
            break
        if req.kind != Kind.REQUEST:
            try:
                channel.send(error_response(req.sequence, ERR_PROTOCOL))
            except ChannelClosed:
                break
            continue
        try:
            attrs = broker.handle(req)
            resp = response(req.sequence, **attrs)
        except CapabilityError as exc:
            resp = error_response(req.sequence, exc.code)
        except ResolutionFailed:
            resp = error_response(req.sequence, ERR_RESOLUTION)
        except KeyUnavailable:
            resp = error_response(req.sequence, ERR_KEY_UNAVAILABLE)
        except ConnectFailed as exc:
            resp = error_response(req.sequence, exc.code)
        except ProtocolError:
            resp = error_response(req.sequence, ERR_PROTOCOL)
        except OSError as exc:
            resp = error_response(req.sequence, exc.errno if exc.errno else ERR_PROTOCOL)
        except Exception:
            resp = error_response(req.sequence, ERR_PROTOCOL)
        try:
            channel.send(resp)
        except ChannelClosed:
            break
    broker.shutdown()
    channel.close()


# --- spawning ---------------------------------------------------------------------


@dataclass
class BrokerHandle:
    """Supervisor-side handle to one running broker."""

    service: str
    channel: Channel
    backend: str
    pid: int | None = None
    thread: threading.Thread | None = None
    broker_channel: Channel | None = field(default=None, repr=False)
    _reaped: bool = field(default=False, repr=False)

    def kill(self) -> None:
        """Crash the broker: subsequent calls see a closed channel."""
        if self.pid is not None:
            import signal

            try:
                os.kill(self.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            self._reap()
        elif self.broker_channel is not None:
            self.broker_channel.close()

    def close(self) -> None:
        """Graceful shutdown: close our end, let the serve loop exit."""
        self.channel.close()
        if self.pid is not None:
            self._reap()
        elif self.thread is not None:
            self.thread.join(timeout=5.0)

    def _reap(self) -> None:
        if self._reaped or self.pid is None:
            return
        try:
            os.waitpid(self.pid, 0)
        except ChildProcessError:
            pass
        self._reaped = True


def _send_limits(channel: Channel, grant: ResourceGrant,
                 timeout: float = DEFAULT_CALL_TIMEOUT) -> None:
    req = request(channel.next_sequence(), "limit", grant=grant_to_wire(grant))
    resp = channel.call(req, timeout)
    code = resp.error
    if code is not None:
        raise SpawnFailed(f"broker rejected limits: {error_label(code)}")


def spawn_broker(grant: ResourceGrant, *, backend: str = "simulation",
                 resolver=None, provider=None, trace=None, trace_path: str | None = None,
                 channel_kind: str | None = None,
                 close_fds_in_child: list[int] | None = None) -> BrokerHandle:
    """Spawn one broker for ``grant`` and return the supervisor's handle.

    Limits freeze before the first request is served: the broker object
    is built and pre-opens here, in the spawning process, so a failure
    (say a missing whitelisted file) surfaces with its filename before
    anything runs.  The first message on the channel is still the
    ``limit`` request carrying the same grant, which the broker applies
    as a narrow-to-equal.
    """
    service = grant.service_name
    broker = make_broker(service, resolver=resolver, provider=provider, trace=trace)
    broker.set_limits(grant)

    if backend == "simulation":
        if channel_kind == "socket":
            sup_ch, broker_ch = socket_channel_pair(service)
        else:
            sup_ch, broker_ch = simulation_channel_pair(service)
        if trace is not None:
            broker_ch.set_trace(trace, "broker")
        thread = threading.Thread(
            target=serve_channel, args=(broker_ch, broker),
            name=f"broker-{service}", daemon=True,
        )
        thread.start()
        handle = BrokerHandle(service=service, channel=sup_ch, backend=backend,
                              thread=thread, broker_channel=broker_ch)
    elif backend == "native":
        sup_ch, broker_ch = socket_channel_pair(service)
        pid = os.fork()
        if pid == 0:
            status = 0
            try:
                sup_ch.close()
                # Copies of other channels' supervisor ends inherited by
                # this fork must go, or their peers never see EOF.
                for fd in close_fds_in_child or ():
                    try:
                        os.close(fd)
                    except OSError:
                        pass
                if trace_path:
                    from .trace import FileTraceSink

                    sink = FileTraceSink(trace_path)
                    broker.trace = sink
                    broker_ch.set_trace(sink, "broker")
                serve_channel(broker_ch, broker)
            except BaseException:
                status = 1
            finally:
                os._exit(status)
        # Parent: the child inherited the held descriptors and its channel
        # end; release our copies.
        broker_ch.close()
        if isinstance(broker, FileargsBroker):
            broker.shutdown()
        handle = BrokerHandle(service=service, channel=sup_ch, backend=backend, pid=pid)
    else:
        raise SpawnFailed(f"unknown backend {backend!r}")

    try:
        _send_limits(handle.channel, grant)
    except Exception:
        handle.kill()
        handle.close()
        raise
    return handle


def broker_main(argv: list[str]) -> int:
    """Entry point for an externally spawned broker process.

    Usage: ``python -m capexec.brokers <service-name> <channel-fd>``.
    Limits arrive as the first message on the channel.
    """
    if len(argv) != 2:
        os.write(2, b"usage: capexec.brokers <service-name> <channel-fd>\n")
        return 2
    service, fd_text = argv
    try:
        fd = int(fd_text)
    except ValueError:
        os.write(2, f"bad descriptor number {fd_text!r}\n".encode())
        return 2
    channel = channel_from_fd(fd, service)
    try:
        broker = make_broker(service)
    except SpawnFailed as exc:
        os.write(2, f"{exc}\n".encode())
        return 2
    serve_channel(channel, broker)
    return 0


if __name__ == "__main__":
    import sys

    raise SystemExit(broker_main(sys.argv[1:]))


# --- client-side request helpers ---------------------------------------------------


def _raise_for_error(resp, *, cmd: str) -> None:
    code = resp.error
    if code is None:
        return
    if code in (93, 94):
        raise CapabilityError(code)
    if code == ERR_PROTOCOL:
        raise ProtocolError(f"{cmd}: {error_label(code)}")
    if code == ERR_RESOLUTION:
        raise ResolutionFailed(error_label(code))
    if code == ERR_KEY_UNAVAILABLE:
        raise KeyUnavailable(error_label(code))
    if cmd in ("connect", "bind"):
        raise ConnectFailed(code)
    raise OSError(code, error_label(code))


def _call(channel: Channel, cmd: str, timeout: float, **attrs):
    req = request(channel.next_sequence(), cmd, **attrs)
    resp = channel.call(req, timeout)
    _raise_for_error(resp, cmd=cmd)
    return resp


def fileargs_open(channel: Channel, name: str, flags,
                  timeout: float = DEFAULT_CALL_TIMEOUT) -> CapDescriptor:
    """Open a whitelisted file through a fileargs broker.

    ``flags`` may be an os.O_* bit pattern or an iterable of flag names;
    the returned descriptor carries exactly the granted rights.
    """
    if isinstance(flags, int):
        flag_set = bits_to_flags(flags)
    else:
        flag_set = frozenset(OpenFlag(f) for f in flags)
    resp = _call(channel, "open", timeout, name=name, flags=flags_to_wire(flag_set))
    ref = resp.attrs.get("fd")
    if not isinstance(ref, DescriptorRef):
        raise ProtocolError("open response lacks a descriptor")
    return CapDescriptor(ref.fileno(), rights_from_wire(resp.attrs.get("rights", "")))


def dns_resolve_name(channel: Channel, hostname: str, family,
                     timeout: float = DEFAULT_CALL_TIMEOUT) -> HostEntry:
    family = AddressFamily(family)
    resp = _call(channel, "resolve_name", timeout, name=hostname, family=family.value)
    return _host_entry_from(resp)


def dns_resolve_addr(channel: Channel, address: bytes, family,
                     timeout: float = DEFAULT_CALL_TIMEOUT) -> HostEntry:
    family = AddressFamily(family)
    resp = _call(channel, "resolve_addr", timeout, addr=bytes(address), family=family.value)
    return _host_entry_from(resp)


def _host_entry_from(resp) -> HostEntry:
    return HostEntry.from_packed(
        resp.attrs["name"], AddressFamily(resp.attrs["family"]), resp.attrs["addresses"]
    )


def net_connect(channel: Channel, host: str, port: int, family,
                timeout: float = DEFAULT_CALL_TIMEOUT) -> CapDescriptor:
    return _net_op(channel, "connect", host, port, family, timeout)


def net_bind(channel: Channel, host: str, port: int, family,
             timeout: float = DEFAULT_CALL_TIMEOUT) -> CapDescriptor:
    return _net_op(channel, "bind", host, port, family, timeout)


def _net_op(channel, cmd, host, port, family, timeout) -> CapDescriptor:
    family = AddressFamily(family)
    resp = _call(channel, cmd, timeout, host=host, port=int(port), family=family.value)
    ref = resp.attrs.get("fd")
    if not isinstance(ref, DescriptorRef):
        raise ProtocolError(f"{cmd} response lacks a descriptor")
    return CapDescriptor(ref.fileno(), rights_from_wire(resp.attrs.get("rights", "")))


def sysctl_read(channel: Channel, key: str, timeout: float = DEFAULT_CALL_TIMEOUT):
    resp = _call(channel, "read", timeout, key=key)
    return resp.attrs.get("value")


def sysctl_write(channel: Channel, key: str, value,
                 timeout: float = DEFAULT_CALL_TIMEOUT) -> None:
    _call(channel, "write", timeout, key=key, value=value)


def limit_narrow(channel: Channel, narrowed: ResourceGrant,
                 timeout: float = DEFAULT_CALL_TIMEOUT) -> None:
    """Narrow a broker's limits; widening fails with error 93."""
    _call(channel, "limit", timeout, grant=grant_to_wire(narrowed))
