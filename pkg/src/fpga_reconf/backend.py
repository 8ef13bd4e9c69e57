"""Measurement backends: compile, measure, and report resources.

Real toolchains take hours per compile, so the default backend is a
simulator driven by a cost-model config and an internal clock that only
ever advances in model time. A command adapter can delegate the same
three operations to an external executable for integration with actual
vendor tooling.
"""

from __future__ import annotations

import json
import logging
import random
import subprocess
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from fpga_reconf.errors import CompileError, MeasurementError

if TYPE_CHECKING:
    from fpga_reconf.search import OffloadPattern

logger = logging.getLogger(__name__)

DEFAULT_COMPILE_SECONDS = 21600.0
DEFAULT_RECONFIG_LATENCY = {"static": 1.0, "dynamic": 0.005}


@dataclass(frozen=True)
class BackendCapabilities:
    concurrency_safe: bool
    compile_duration_model: float


@dataclass(frozen=True)
class DataRef:
    """Reference to one request payload; only the size drives the model."""

    ref: str
    app_id: str
    size_bytes: int


@dataclass(frozen=True)
class ArtifactHandle:
    """Opaque result of compiling one offload pattern."""

    handle_id: int
    app_id: str
    pattern_id: str
    loop_ids: frozenset[str]
    compile_seconds: float
    completed_at: float


class SimClock:
    """Monotonic model-time clock, safe to advance from several threads."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        with self._lock:
            self._now += seconds
            return self._now


@dataclass
class AppCostModel:
    cpu_time_by_size: dict[int, float]
    fpga_time_by_pattern_and_size: dict[str, dict[int, float]]
    usage_by_loop: dict[str, float]
    compile_seconds: float | None = None
    bucket_width: int | None = None


@dataclass
class CostModelConfig:
    """Timings and resource usages that drive the simulated backend."""

    apps: dict[str, AppCostModel]
    bucket_width: int = 4096
    compile_seconds: float = DEFAULT_COMPILE_SECONDS
    noise: float = 0.0
    seed: int = 0
    reconfig_latency: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_RECONFIG_LATENCY)
    )

    @classmethod
    def from_file(cls, path: str | Path) -> "CostModelConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read cost model {path}: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "CostModelConfig":
        bucket_width = int(doc.get("bucket_width", 4096))
        if bucket_width <= 0:
            raise ValueError("bucket_width must be > 0")
        compile_seconds = float(doc.get("compile_seconds", DEFAULT_COMPILE_SECONDS))
        if compile_seconds <= 0:
            raise ValueError("compile_seconds must be > 0")
        noise = float(doc.get("noise", 0.0))
        if not 0.0 <= noise < 1.0:
            raise ValueError("noise must be in [0, 1)")
        latency = dict(DEFAULT_RECONFIG_LATENCY)
        latency.update({k: float(v) for k, v in doc.get("reconfig_latency", {}).items()})
        for mode, value in latency.items():
            if value <= 0:
                raise ValueError(f"reconfig_latency[{mode}] must be > 0")
        apps: dict[str, AppCostModel] = {}
        for app_id, entry in doc.get("apps", {}).items():
            apps[app_id] = _parse_app_model(app_id, entry)
        return cls(
            apps=apps,
            bucket_width=bucket_width,
            compile_seconds=compile_seconds,
            noise=noise,
            seed=int(doc.get("seed", 0)),
            reconfig_latency=latency,
        )


def _parse_app_model(app_id: str, entry: dict) -> AppCostModel:
    cpu = {int(k): float(v) for k, v in entry.get("cpu_time_by_size", {}).items()}
    fpga = {
        key: {int(k): float(v) for k, v in times.items()}
        for key, times in entry.get("fpga_time_by_pattern_and_size", {}).items()
    }
    usage = {k: float(v) for k, v in entry.get("usage_by_loop", {}).items()}
    for bucket, value in cpu.items():
        if value <= 0:
            raise ValueError(f"{app_id}: cpu time for bucket {bucket} must be > 0")
    for key, times in fpga.items():
        for bucket, value in times.items():
            if value <= 0:
                raise ValueError(f"{app_id}: time for {key} bucket {bucket} must be > 0")
    for loop_id, value in usage.items():
        if not 0.0 < value <= 1.0:
            raise ValueError(f"{app_id}: usage for {loop_id} must be in (0, 1]")
    compile_seconds = entry.get("compile_seconds")
    if compile_seconds is not None:
        compile_seconds = float(compile_seconds)
        if compile_seconds <= 0:
            raise ValueError(f"{app_id}: compile_seconds must be > 0")
    width = entry.get("bucket_width")
    if width is not None:
        width = int(width)
        if width <= 0:
            raise ValueError(f"{app_id}: bucket_width must be > 0")
    return AppCostModel(
        cpu_time_by_size=cpu,
        fpga_time_by_pattern_and_size=fpga,
        usage_by_loop=usage,
        compile_seconds=compile_seconds,
        bucket_width=width,
    )


def pattern_key(loop_ids) -> str:
    """Canonical cost-model key for a loop set."""
    return "+".join(sorted(loop_ids))


class MeasurementBackend(ABC):
    """Compile/measure/resource interface to an FPGA toolchain.

    compile must precede measure for a pattern (measure takes the handle
    compile returned); measure may be repeated against the same handle.
    """

    @property
    @abstractmethod
    def capabilities(self) -> BackendCapabilities: ...

    @abstractmethod
    def now(self) -> float:
        """Current model time in seconds."""

    @abstractmethod
    def compile(self, pattern: "OffloadPattern") -> ArtifactHandle: ...

    @abstractmethod
    def measure(self, handle: ArtifactHandle, data: DataRef) -> float: ...

    @abstractmethod
    def measure_cpu(self, app_id: str, data: DataRef) -> float:
        """Time for one request with no offload at all (the baseline)."""

    @abstractmethod
    def resource_report(self, pattern: "OffloadPattern") -> float: ...

    @abstractmethod
    def activate(self, handle: ArtifactHandle, mode: str) -> None:
        """Load a compiled artifact onto the device; consumes the
        mode's reconfiguration latency in model time."""


class SimulatedBackend(MeasurementBackend):
    """Deterministic cost-model-driven backend.

    With noise=0 every operation is a pure function of its inputs; a
    nonzero noise applies a seeded multiplicative jitter bounded by the
    configured fraction.
    """

    def __init__(self, config: CostModelConfig, clock: SimClock | None = None):
        self._config = config
        self.clock = clock or SimClock()
        self._rng = random.Random(config.seed)
        self._lock = threading.Lock()
        self._next_handle = 1
        self.compile_calls = 0
        self.measure_calls = 0

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            concurrency_safe=True,
            compile_duration_model=self._config.compile_seconds,
        )

    def now(self) -> float:
        return self.clock.now()

    def compile(self, pattern: "OffloadPattern") -> ArtifactHandle:
        usage = self.resource_report(pattern)
        if usage > 1.0:
            raise CompileError(
                f"pattern {pattern.pattern_id} needs {usage:.2f} of device capacity"
            )
        duration = self._app_model(pattern.app_id).compile_seconds or self._config.compile_seconds
        with self._lock:
            handle_id = self._next_handle
            self._next_handle += 1
            self.compile_calls += 1
        completed_at = self.clock.advance(duration)
        logger.debug("compiled %s in %.0f s model time", pattern.pattern_id, duration)
        return ArtifactHandle(
            handle_id=handle_id,
            app_id=pattern.app_id,
            pattern_id=pattern.pattern_id,
            loop_ids=frozenset(pattern.loop_ids),
            compile_seconds=duration,
            completed_at=completed_at,
        )

    def measure(self, handle: ArtifactHandle, data: DataRef) -> float:
        model = self._app_model(handle.app_id)
        key = pattern_key(handle.loop_ids)
        times = model.fpga_time_by_pattern_and_size.get(key)
        if times is None:
            raise MeasurementError(f"app {handle.app_id}: no modeled time for pattern {key}")
        bucket = self._bucket(model, data.size_bytes)
        if bucket not in times:
            raise MeasurementError(
                f"app {handle.app_id} pattern {key}: no modeled time for size bucket {bucket}"
            )
        return self._observe(times[bucket])

    def measure_cpu(self, app_id: str, data: DataRef) -> float:
        model = self._app_model(app_id)
        bucket = self._bucket(model, data.size_bytes)
        if bucket not in model.cpu_time_by_size:
            raise MeasurementError(
                f"app {app_id}: no modeled CPU time for size bucket {bucket}"
            )
        return self._observe(model.cpu_time_by_size[bucket])

    def resource_report(self, pattern: "OffloadPattern") -> float:
        model = self._app_model(pattern.app_id)
        total = 0.0
        for loop_id in pattern.loop_ids:
            if loop_id not in model.usage_by_loop:
                raise MeasurementError(
                    f"app {pattern.app_id}: no resource estimate for loop {loop_id}"
                )
            total += model.usage_by_loop[loop_id]
        return total

    def activate(self, handle: ArtifactHandle, mode: str) -> None:
        self.clock.advance(self._latency(mode))

    def reconfig_latency(self, mode: str) -> float:
        return self._latency(mode)

    def _latency(self, mode: str) -> float:
        if mode not in self._config.reconfig_latency:
            raise ValueError(f"unknown reconfiguration mode {mode!r}")
        return self._config.reconfig_latency[mode]

    def _app_model(self, app_id: str) -> AppCostModel:
        try:
            return self._config.apps[app_id]
        except KeyError:
            raise MeasurementError(f"no cost model for app {app_id}") from None

    def _bucket(self, model: AppCostModel, size_bytes: int) -> int:
        width = model.bucket_width or self._config.bucket_width
        return size_bytes // width

    def _observe(self, value: float) -> float:
        with self._lock:
            self.measure_calls += 1
            if self._config.noise == 0.0:
                observed = value
            else:
                observed = value * (1.0 + self._config.noise * self._rng.uniform(-1.0, 1.0))
        self.clock.advance(observed)
        return observed


class CommandBackend(MeasurementBackend):
    """Adapter that shells out to an external toolchain driver.

    Contract: the executable is spawned as ``<command...> <subcommand>``
    with subcommand one of compile / measure / resources, a JSON pattern
    description on standard input, and must print a single decimal number
    (seconds, or a usage fraction for resources) on standard output.
    A nonzero exit status means failure. Not concurrency safe: callers
    serialize.
    """

    def __init__(
        self,
        command: list[str],
        compile_duration_model: float = DEFAULT_COMPILE_SECONDS,
        reconfig_latency: dict[str, float] | None = None,
        timeout: float = 60.0,
    ):
        if not command:
            raise ValueError("command must name an executable")
        self._command = list(command)
        self._compile_duration_model = compile_duration_model
        self._reconfig_latency = dict(reconfig_latency or DEFAULT_RECONFIG_LATENCY)
        self._timeout = timeout
        self.clock = SimClock()
        self._next_handle = 1

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            concurrency_safe=False,
            compile_duration_model=self._compile_duration_model,
        )

    def now(self) -> float:
        return self.clock.now()

    def compile(self, pattern: "OffloadPattern") -> ArtifactHandle:
        duration = self._invoke(
            "compile",
            self._payload(pattern.app_id, pattern.pattern_id, pattern.loop_ids),
            CompileError,
        )
        completed_at = self.clock.advance(duration)
        handle_id = self._next_handle
        self._next_handle += 1
        return ArtifactHandle(
            handle_id=handle_id,
            app_id=pattern.app_id,
            pattern_id=pattern.pattern_id,
            loop_ids=frozenset(pattern.loop_ids),
            compile_seconds=duration,
            completed_at=completed_at,
        )

    def measure(self, handle: ArtifactHandle, data: DataRef) -> float:
        payload = self._payload(handle.app_id, handle.pattern_id, handle.loop_ids, data)
        seconds = self._invoke("measure", payload, MeasurementError)
        self.clock.advance(seconds)
        return seconds

    def measure_cpu(self, app_id: str, data: DataRef) -> float:
        payload = self._payload(app_id, f"{app_id}:cpu", (), data)
        seconds = self._invoke("measure", payload, MeasurementError)
        self.clock.advance(seconds)
        return seconds

    def resource_report(self, pattern: "OffloadPattern") -> float:
        return self._invoke(
            "resources",
            self._payload(pattern.app_id, pattern.pattern_id, pattern.loop_ids),
            MeasurementError,
        )

    def activate(self, handle: ArtifactHandle, mode: str) -> None:
        if mode not in self._reconfig_latency:
            raise ValueError(f"unknown reconfiguration mode {mode!r}")
        self.clock.advance(self._reconfig_latency[mode])

    def _payload(self, app_id, pattern_id, loop_ids, data: DataRef | None = None) -> dict:
        doc = {
            "app_id": app_id,
            "pattern_id": pattern_id,
            "loop_ids": sorted(loop_ids),
        }
        if data is not None:
            doc["data"] = {"ref": data.ref, "size_bytes": data.size_bytes}
        return doc

    def _invoke(self, subcommand: str, payload: dict, error_cls) -> float:
        argv = self._command + [subcommand]
        try:
            result = subprocess.run(
                argv,
                input=json.dumps(payload),
                capture_output=True,
                text=True,
                timeout=self._timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise error_cls(f"{argv[0]} {subcommand}: {exc}") from exc
        if result.returncode != 0:
            detail = result.stderr.strip() or f"exit status {result.returncode}"
            raise error_cls(f"{argv[0]} {subcommand} failed: {detail}")
        try:
            return float(result.stdout.strip())
        except ValueError as exc:
            raise error_cls(
                f"{argv[0]} {subcommand}: expected a decimal number, got {result.stdout!r}"
            ) from exc
