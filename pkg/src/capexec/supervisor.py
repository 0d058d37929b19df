"""Sandboxed-run orchestration.

``build_plan`` turns a validated declaration into a launch plan whose
call-redirect table covers exactly the granted services.  ``launch``
then runs the plan: one broker per grant is spawned with its limits
frozen, the workload starts with the capability channels and discovery
environment in place, enforcement engages before any user logic, and
every step lands in the trace.

Two workload forms are supported:

* an in-process callable (simulation backend only): brokers are service
  threads over in-memory channels and the callable receives a
  :class:`WorkloadRuntime` whose client routes through them;
* a child process (either backend): channels are socket pairs whose
  workload ends are inherited, named by ``CAPEXEC_CHANNELS``.  Brokers
  are threads under the simulation backend and forked processes under
  the native one.  The native backend performs no workload-side ambient
  enforcement (that seam is where a kernel capability mode would sit);
  the simulation backend asks cooperative workloads to enter capability
  mode via ``CAPEXEC_CAPMODE``.
"""

from __future__ import annotations

import io
import os
import subprocess
import threading
import time
from dataclasses import dataclass, field

from .brokers import BrokerHandle, spawn_broker
from .capclient import (
    CAPMODE_ENV,
    DEFAULT_REDIRECTS,
    TRACE_ENV,
    ClientContext,
    redirect,
)
from .capchannel import CHANNELS_ENV, format_channel_env
from .declaration import ServiceDeclaration
from .enforcement import EnforcementContext, enter_capability_mode, gateway_op
from .errors import SpawnFailed, WorkloadExecFailed
from .trace import FileTraceSink, TraceEvent, TraceSink, assert_clean_trace

__all__ = [
    "SandboxPlan",
    "WorkloadRuntime",
    "RunningService",
    "build_plan",
    "launch",
    "assert_clean_trace",
    "enter_capability_mode",
    "gateway_op",
    "redirect",
    "DEFAULT_REDIRECTS",
]

BACKENDS = ("simulation", "native")


@dataclass
class SandboxPlan:
    declaration: ServiceDeclaration
    redirects: dict[str, tuple[str, str]]
    backend: str = "simulation"
    warnings: list[str] = field(default_factory=list)


def build_plan(decl: ServiceDeclaration, backend: str = "simulation") -> SandboxPlan:
    """Filter the default redirect table down to the granted services."""
    if backend not in BACKENDS:
        raise SpawnFailed(f"unknown backend {backend!r}")
    granted = set(decl.services)
    redirects: dict[str, tuple[str, str]] = {}
    warnings: list[str] = []
    for call_name, (service, cmd) in DEFAULT_REDIRECTS.items():
        if service in granted:
            redirects[call_name] = (service, cmd)
        else:
            warnings.append(
                f"dropping redirect {call_name} -> {service}: service not granted"
            )
    return SandboxPlan(declaration=decl, redirects=redirects, backend=backend,
                       warnings=warnings)


@dataclass
class WorkloadRuntime:
    """What an in-process workload callable gets to work with."""

    client: ClientContext
    argv: list[str]
    stdout: io.BufferedIOBase
    stderr: io.BufferedIOBase


class RunningService:
    """A launched sandboxed run: broker handles, workload, trace."""

    def __init__(self, plan: SandboxPlan, trace: TraceSink):
        self.plan = plan
        self.trace = trace
        self.brokers: dict[str, BrokerHandle] = {}
        self.exit_status: int | None = None
        self.setup_seconds: float = 0.0
        self.client: ClientContext | None = None
        self.workload_error: BaseException | None = None
        self.stdout_bytes: bytes | None = None
        self.stderr_bytes: bytes | None = None
        self._proc: subprocess.Popen | None = None
        self._thread: threading.Thread | None = None
        self._ids = 0
        self._shut = False

    @property
    def broker_channels(self):
        return {name: handle.channel for name, handle in self.brokers.items()}

    @property
    def workload_pid(self) -> int | None:
        return self._proc.pid if self._proc is not None else None

    def broker_pids(self) -> list[int]:
        return [h.pid for h in self.brokers.values() if h.pid is not None]

    def _note(self, call: str, detail: str = "") -> None:
        self._ids += 1
        label = f"{call}#{self._ids}"
        self.trace.record(TraceEvent(role="supervisor", kind="CALL",
                                     detail=f"{label}({detail})"))
        self.trace.record(TraceEvent(role="supervisor", kind="RET", detail=f"{label} 0"))

    def kill_broker(self, service: str) -> None:
        """Crash one broker mid-run; other services keep working."""
        handle = self.brokers.get(service)
        if handle is None:
            raise KeyError(service)
        handle.kill()
        self._note("kill_broker", service)

    def wait(self, timeout: float | None = None) -> int:
        if self._proc is not None:
            self.exit_status = self._proc.wait(timeout)
            if self._proc.stdout is not None:
                self.stdout_bytes = self._proc.stdout.read()
                self._proc.stdout.close()
            if self._proc.stderr is not None:
                self.stderr_bytes = self._proc.stderr.read()
                self._proc.stderr.close()
        elif self._thread is not None:
            self._thread.join(timeout)
            if self._thread.is_alive():
                raise TimeoutError("workload still running")
        self.shutdown()
        return self.exit_status

    def shutdown(self) -> None:
        if self._shut:
            return
        self._shut = True
        if self.client is not None:
            self.client.close()
        for handle in self.brokers.values():
            try:
                handle.close()
            except Exception:
                pass


def launch(plan: SandboxPlan, argv: list[str], *, workload=None,
           resolver=None, sysctl_provider=None,
           trace: TraceSink | None = None, trace_path: str | None = None,
           stdout=None, stderr=None, env: dict | None = None,
           stdin=subprocess.DEVNULL) -> RunningService:
    """Launch a sandboxed run and return its handle.

    With ``workload`` (a callable taking :class:`WorkloadRuntime` and
    returning an exit status) the run happens in-process under the
    simulation backend.  Without it, ``argv`` is executed as a child
    process; ``argv[0]`` must match the declaration's binary.
    """
    if trace is None:
        trace = FileTraceSink(trace_path) if trace_path else TraceSink()

    if workload is not None:
        if plan.backend != "simulation":
            raise SpawnFailed("in-process workloads run only on the simulation backend")
        return _launch_in_process(plan, argv, workload, resolver, sysctl_provider,
                                  trace, stdout, stderr)
    if not argv:
        raise WorkloadExecFailed("empty argv")
    if argv[0] != plan.declaration.binary:
        raise WorkloadExecFailed(
            f"argv[0] {argv[0]!r} does not match declared binary "
            f"{plan.declaration.binary!r}"
        )
    return _launch_child(plan, argv, resolver, sysctl_provider, trace, trace_path,
                         stdout, stderr, env, stdin)


def _spawn_all_brokers(service: RunningService, plan: SandboxPlan, *,
                       backend: str, channel_kind: str | None,
                       resolver, sysctl_provider, trace, trace_path=None) -> None:
    """One broker per grant, in declaration order; trace records each."""
    earlier_fds: list[int] = []
    for grant in plan.declaration.grants:
        service._ids += 1
        label = f"spawn_broker#{service._ids}"
        trace.record(TraceEvent(role="supervisor", kind="CALL",
                                detail=f"{label}({grant.service_name})"))
        try:
            handle = spawn_broker(
                grant, backend=backend, resolver=resolver,
                provider=sysctl_provider, trace=trace if backend == "simulation" else None,
                trace_path=trace_path, channel_kind=channel_kind,
                close_fds_in_child=list(earlier_fds),
            )
        except Exception as exc:
            trace.record(TraceEvent(role="supervisor", kind="RET",
                                    detail=f"{label} -1 {exc}"))
            service.shutdown()
            raise
        service.brokers[grant.service_name] = handle
        if backend == "native":
            earlier_fds.append(handle.channel.transport.fileno())
        trace.record(TraceEvent(role="supervisor", kind="RET", detail=f"{label} 0"))


def _launch_in_process(plan, argv, workload, resolver, sysctl_provider,
                       trace, stdout, stderr) -> RunningService:
    started = time.perf_counter()
    service = RunningService(plan, trace)
    _spawn_all_brokers(service, plan, backend="simulation", channel_kind=None,
                       resolver=resolver, sysctl_provider=sysctl_provider, trace=trace)

    enforcement = EnforcementContext(trace=trace, resolver=resolver,
                                     sysctl_provider=sysctl_provider)
    client = ClientContext(
        channels={name: h.channel for name, h in service.brokers.items()},
        enforcement=enforcement,
        redirects=plan.redirects,
    )
    for name, handle in service.brokers.items():
        handle.channel.set_trace(trace, "workload")
    service.client = client

    out = stdout if stdout is not None else io.BytesIO()
    err = stderr if stderr is not None else io.BytesIO()
    runtime = WorkloadRuntime(client=client, argv=list(argv), stdout=out, stderr=err)

    # Enforcement engages before the workload's first instruction.
    enforcement.enter_capability_mode()
    service.setup_seconds = time.perf_counter() - started

    service._ids += 1
    label = f"exec#{service._ids}"
    trace.record(TraceEvent(role="supervisor", kind="CALL",
                            detail=f"{label}({' '.join(argv)})"))

    def run() -> None:
        try:
            status = workload(runtime)
            service.exit_status = int(status) if status is not None else 0
        except BaseException as exc:  # recorded, surfaced via workload_error
            service.workload_error = exc
            service.exit_status = 70
        finally:
            if isinstance(out, io.BytesIO):
                service.stdout_bytes = out.getvalue()
            if isinstance(err, io.BytesIO):
                service.stderr_bytes = err.getvalue()
            trace.record(TraceEvent(role="supervisor", kind="RET",
                                    detail=f"{label} {service.exit_status}"))

    thread = threading.Thread(target=run, name="workload", daemon=True)
    service._thread = thread
    thread.start()
    return service


def _launch_child(plan, argv, resolver, sysctl_provider, trace, trace_path,
                  stdout, stderr, env, stdin) -> RunningService:
    started = time.perf_counter()
    service = RunningService(plan, trace)
    backend = plan.backend
    channel_kind = "socket" if backend == "simulation" else None
    _spawn_all_brokers(service, plan, backend=backend, channel_kind=channel_kind,
                       resolver=resolver, sysctl_provider=sysctl_provider,
                       trace=trace, trace_path=trace_path)

    pass_fds = []
    mapping = {}
    for name, handle in service.brokers.items():
        fd = handle.channel.transport.fileno()
        mapping[name] = fd
        pass_fds.append(fd)

    child_env = dict(os.environ if env is None else env)
    child_env[CHANNELS_ENV] = format_channel_env(mapping)
    if trace_path:
        child_env[TRACE_ENV] = trace_path
    if backend == "simulation":
        child_env[CAPMODE_ENV] = "1"
    service.setup_seconds = time.perf_counter() - started

    service._ids += 1
    label = f"exec#{service._ids}"
    trace.record(TraceEvent(role="supervisor", kind="CALL",
                            detail=f"{label}({' '.join(argv)})"))
    try:
        service._proc = subprocess.Popen(
            argv, env=child_env, pass_fds=pass_fds,
            stdin=stdin, stdout=stdout, stderr=stderr,
        )
    except OSError as exc:
        trace.record(TraceEvent(role="supervisor", kind="RET",
                                detail=f"{label} -1 {exc}"))
        service.shutdown()
        raise WorkloadExecFailed(f"cannot execute {argv[0]!r}: {exc}") from None
    trace.record(TraceEvent(role="supervisor", kind="RET",
                            detail=f"{label} pid={service._proc.pid}"))

    # The workload owns its channel ends now; release our copies so each
    # broker sees EOF when the workload exits.
    for handle in service.brokers.values():
        handle.channel.close()
    return service
