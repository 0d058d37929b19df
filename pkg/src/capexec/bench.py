"""Benchmark harness: paired sandboxed/unsandboxed runs of the cat fixture.

Three scenarios:

* ``single-file``  -- one file per case, sizes in MB; shows overhead
  amortizing as the workload grows.
* ``many-files``   -- N empty files per case; dominated by pre-opening
  and per-open channel round-trips, so overhead grows with N.
* ``setup-scaling`` -- setup time (brokers ready, workload not yet
  started) against the number of declared limit entries.

Timing is wall clock around the whole run.  Memory is the peak resident
set summed over the supervisor process and everything it spawned,
sampled every 10 ms; for unsandboxed runs it is the workload tree alone.
Results go to a CSV with columns
``scenario,case,mode,run,seconds,peak_rss_bytes``.
"""

from __future__ import annotations

import os
import statistics
import subprocess
import sys
import threading
import time
from dataclasses import dataclass

import psutil

from .declaration import (
    FileArgsGrant,
    OpenFlag,
    Right,
    ServiceDeclaration,
)
from .supervisor import build_plan, launch

SAMPLE_INTERVAL = 0.01
CSV_HEADER = "scenario,case,mode,run,seconds,peak_rss_bytes"

SCENARIOS = ("single-file", "many-files", "setup-scaling")

DEFAULT_SIZES_MB = (1, 10, 100)
DEFAULT_COUNTS = (10, 100, 1000)
DEFAULT_SETUP_COUNTS = (1, 10, 100, 1000)
DEFAULT_REPEAT = 10


@dataclass
class BenchRow:
    scenario: str
    case: str
    mode: str  # "sandboxed" | "unsandboxed"
    run: int
    seconds: float
    peak_rss_bytes: int

    def csv(self) -> str:
        return (f"{self.scenario},{self.case},{self.mode},{self.run},"
                f"{self.seconds:.6f},{self.peak_rss_bytes}")


@dataclass
class RunMetrics:
    seconds: float
    peak_rss_bytes: int
    setup_seconds: float = 0.0
    exit_status: int = 0


class RssSampler:
    """Samples the summed RSS of one or more process trees every 10 ms."""

    def __init__(self, pids: list[int], interval: float = SAMPLE_INTERVAL):
        self._pids = list(pids)
        self._interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def add(self, pid: int) -> None:
        self._pids.append(pid)

    def _sample(self) -> int:
        total = 0
        for pid in list(self._pids):
            try:
                proc = psutil.Process(pid)
                total += proc.memory_info().rss
                for child in proc.children(recursive=True):
                    try:
                        total += child.memory_info().rss
                    except psutil.Error:
                        pass
            except psutil.Error:
                pass
        return total

    def _run(self) -> None:
        while not self._stop.is_set():
            self.peak = max(self.peak, self._sample())
            self._stop.wait(self._interval)

    def __enter__(self) -> "RssSampler":
        self.peak = self._sample()
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.peak = max(self.peak, self._sample())
        self._stop.set()
        self._thread.join()


def run_unsandboxed(argv: list[str], stdout_path: str = os.devnull) -> RunMetrics:
    with open(stdout_path, "wb") as out:
        started = time.perf_counter()
        proc = subprocess.Popen(argv, stdout=out, stderr=subprocess.DEVNULL,
                                stdin=subprocess.DEVNULL)
        with RssSampler([proc.pid]) as sampler:
            status = proc.wait()
        elapsed = time.perf_counter() - started
    return RunMetrics(seconds=elapsed, peak_rss_bytes=sampler.peak,
                      exit_status=status)


def run_sandboxed(decl: ServiceDeclaration, argv: list[str], *,
                  backend: str = "native", stdout_path: str = os.devnull,
                  resolver=None, sysctl_provider=None) -> RunMetrics:
    """One full sandboxed run with this process acting as supervisor.

    The peak covers the supervisor (this process) plus every broker and
    the workload, so it is directly comparable against the paired
    unsandboxed run of the same argv.
    """
    plan = build_plan(decl, backend)
    with open(stdout_path, "wb") as out:
        with RssSampler([os.getpid()]) as sampler:
            started = time.perf_counter()
            service = launch(plan, argv, stdout=out, stderr=subprocess.DEVNULL,
                             resolver=resolver, sysctl_provider=sysctl_provider)
            status = service.wait()
            elapsed = time.perf_counter() - started
    return RunMetrics(seconds=elapsed, peak_rss_bytes=sampler.peak,
                      setup_seconds=service.setup_seconds, exit_status=status)


# --- scenario input generation ------------------------------------------------------


def _make_file(path: str, size_bytes: int) -> None:
    with open(path, "wb") as fh:
        if size_bytes:
            fh.truncate(size_bytes)


def _cat_argv(paths: list[str]) -> list[str]:
    return [sys.executable, "-m", "capexec.fixtures.cat", *paths]


def _hello_argv() -> list[str]:
    return [sys.executable, "-m", "capexec.fixtures.hello"]


def _cat_declaration(paths: list[str]) -> ServiceDeclaration:
    grant = FileArgsGrant(
        operations=frozenset({"OPEN"}),
        flags=frozenset({OpenFlag.RDONLY}),
        rights=frozenset({Right.READ, Right.FSTAT}),
        filenames=tuple(paths),
    )
    return ServiceDeclaration(binary=sys.executable, grants=(grant,))


def run_scenario(scenario: str, *, scratch: str, repeat: int = DEFAULT_REPEAT,
                 sizes_mb=None, counts=None, progress=None) -> list[BenchRow]:
    if scenario == "single-file":
        return _scenario_single_file(scratch, repeat, sizes_mb or DEFAULT_SIZES_MB,
                                     progress)
    if scenario == "many-files":
        return _scenario_many_files(scratch, repeat, counts or DEFAULT_COUNTS, progress)
    if scenario == "setup-scaling":
        return _scenario_setup(scratch, repeat, counts or DEFAULT_SETUP_COUNTS, progress)
    raise ValueError(f"unknown scenario {scenario!r} (choose from {SCENARIOS})")


def _progress(progress, message: str) -> None:
    if progress is not None:
        progress(message)


def _scenario_single_file(scratch, repeat, sizes_mb, progress) -> list[BenchRow]:
    rows: list[BenchRow] = []
    for size in sizes_mb:
        path = os.path.join(scratch, f"single-{size}mb.bin")
        _make_file(path, int(size) * (1 << 20))
        decl = _cat_declaration([path])
        argv = _cat_argv([path])
        _progress(progress, f"single-file: {size} MB x{repeat}")
        # Warm the page cache so both modes read identical state.
        run_unsandboxed(argv)
        for i in range(repeat):
            plain = run_unsandboxed(argv)
            boxed = run_sandboxed(decl, argv)
            case = f"{size}MB"
            rows.append(BenchRow("single-file", case, "unsandboxed", i,
                                 plain.seconds, plain.peak_rss_bytes))
            rows.append(BenchRow("single-file", case, "sandboxed", i,
                                 boxed.seconds, boxed.peak_rss_bytes))
        os.unlink(path)
    return rows


def _make_empty_files(scratch: str, count: int) -> list[str]:
    directory = os.path.join(scratch, f"files-{count}")
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i in range(count):
        path = os.path.join(directory, f"f{i:05d}")
        _make_file(path, 0)
        paths.append(path)
    return paths


def _scenario_many_files(scratch, repeat, counts, progress) -> list[BenchRow]:
    rows: list[BenchRow] = []
    for count in counts:
        paths = _make_empty_files(scratch, int(count))
        decl = _cat_declaration(paths)
        argv = _cat_argv(paths)
        _progress(progress, f"many-files: {count} files x{repeat}")
        run_unsandboxed(argv)
        for i in range(repeat):
            plain = run_unsandboxed(argv)
            boxed = run_sandboxed(decl, argv)
            case = str(count)
            rows.append(BenchRow("many-files", case, "unsandboxed", i,
                                 plain.seconds, plain.peak_rss_bytes))
            rows.append(BenchRow("many-files", case, "sandboxed", i,
                                 boxed.seconds, boxed.peak_rss_bytes))
    return rows


def _scenario_setup(scratch, repeat, counts, progress) -> list[BenchRow]:
    """Setup time only: seconds until every broker is ready to serve."""
    rows: list[BenchRow] = []
    argv = _hello_argv()
    for count in counts:
        paths = _make_empty_files(scratch, int(count))
        decl = _cat_declaration(paths)
        _progress(progress, f"setup-scaling: {count} limit entries x{repeat}")
        for i in range(repeat):
            boxed = run_sandboxed(decl, argv)
            rows.append(BenchRow("setup-scaling", str(count), "sandboxed", i,
                                 boxed.setup_seconds, boxed.peak_rss_bytes))
    return rows


# --- result handling ---------------------------------------------------------------


def write_csv(rows: list[BenchRow], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv() + "\n")


def summarize(rows: list[BenchRow]) -> str:
    """Mean/stddev table over (scenario, case, mode) groups."""
    groups: dict[tuple[str, str, str], list[BenchRow]] = {}
    order: list[tuple[str, str, str]] = []
    for row in rows:
        key = (row.scenario, row.case, row.mode)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    lines = [f"{'scenario':<15} {'case':<10} {'mode':<12} {'runs':>4} "
             f"{'mean_s':>10} {'stddev_s':>10} {'peak_rss_mb':>12}"]
    for key in order:
        sample = groups[key]
        seconds = [r.seconds for r in sample]
        mean = statistics.fmean(seconds)
        stddev = statistics.stdev(seconds) if len(seconds) > 1 else 0.0
        peak_mb = max(r.peak_rss_bytes for r in sample) / (1 << 20)
        lines.append(f"{key[0]:<15} {key[1]:<10} {key[2]:<12} {len(sample):>4} "
                     f"{mean:>10.4f} {stddev:>10.4f} {peak_mb:>12.2f}")
    return "\n".join(lines) + "\n"


def mean_seconds(rows: list[BenchRow], scenario: str, case: str, mode: str) -> float:
    values = [r.seconds for r in rows
              if (r.scenario, r.case, r.mode) == (scenario, case, mode)]
    if not values:
        raise ValueError(f"no rows for {(scenario, case, mode)}")
    return statistics.fmean(values)


def median_seconds(rows: list[BenchRow], scenario: str, case: str, mode: str) -> float:
    values = [r.seconds for r in rows
              if (r.scenario, r.case, r.mode) == (scenario, case, mode)]
    if not values:
        raise ValueError(f"no rows for {(scenario, case, mode)}")
    return statistics.median(values)


def relative_overhead(rows: list[BenchRow], scenario: str, case: str) -> float:
    """(sandboxed - unsandboxed) / unsandboxed, from per-case medians."""
    base = median_seconds(rows, scenario, case, "unsandboxed")
    boxed = median_seconds(rows, scenario, case, "sandboxed")
    return (boxed - base) / base


def linear_fit(xs: list[float], ys: list[float]) -> tuple[float, float, float]:
    """Least-squares fit; returns (slope, intercept, r_squared)."""
    slope, intercept = statistics.linear_regression(xs, ys)
    r = statistics.correlation(xs, ys)
    return slope, intercept, r * r
