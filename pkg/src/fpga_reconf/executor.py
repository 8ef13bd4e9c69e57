"""Reconfiguration execution: compile, stop, start, measure downtime.

The expensive compile runs while the old circuit keeps serving, so the
service gap is only the stop-to-start span, which the backend models as
the device's reconfiguration latency. Start failures roll the old
pattern back in. All transitions serialize through one lock and land in
an append-only audit log.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from fpga_reconf.backend import ArtifactHandle, DataRef, MeasurementBackend
from fpga_reconf.errors import CompileError, MeasurementError, OffloadError
from fpga_reconf.search import OffloadPattern

logger = logging.getLogger(__name__)


class FpgaStatus(Enum):
    RUNNING = "running"
    STOPPED = "stopped"
    RECONFIGURING = "reconfiguring"


@dataclass
class FpgaState:
    """What the device is loaded with right now. Mutated only by the
    executor, which holds the transition lock."""

    loaded_pattern: OffloadPattern | None = None
    handle: ArtifactHandle | None = None
    status: FpgaStatus = FpgaStatus.STOPPED
    capacity: float = 1.0


@dataclass(frozen=True)
class ReconfigEvent:
    """One executed (or attempted) reconfiguration. Timestamps are model
    time; a failure before the stop leaves them unset and costs no
    downtime."""

    from_pattern: str
    to_pattern: str
    outcome: str
    compile_started: float | None = None
    compile_done: float | None = None
    stopped_at: float | None = None
    started_at: float | None = None
    downtime: float = 0.0
    detail: str = ""


OUTCOME_SUCCESS = "success"
OUTCOME_ROLLED_BACK = "rolled_back"
OUTCOME_FAILED = "failed"


def downtime_of(event: ReconfigEvent) -> float:
    """Service gap in seconds; zero when the swap never stopped the device."""
    if event.stopped_at is None or event.started_at is None:
        return 0.0
    gap = event.started_at - event.stopped_at
    if gap < 0:
        raise ValueError("event started before it stopped")
    return gap


class RequestRouter:
    """Routes incoming requests while reconfigurations happen.

    While the device is running, requests for the loaded pattern's app go
    to the FPGA and everything else to the CPU. While it is not, requests
    are queued (default) or failed, per policy; queued requests are
    served right after the device comes back.
    """

    def __init__(self, state: FpgaState, backend: MeasurementBackend, policy: str = "queue"):
        if policy not in ("queue", "fail"):
            raise ValueError("policy must be 'queue' or 'fail'")
        self._state = state
        self._backend = backend
        self._policy = policy
        self._queue: list[DataRef] = []
        self._lock = threading.Lock()
        self.served: list[tuple[DataRef, str, float]] = []

    def route(self, data: DataRef) -> float | None:
        """Serve one request, or queue it during a reconfiguration.

        Returns the observed processing time, or None if queued.
        """
        with self._lock:
            if self._state.status is not FpgaStatus.RUNNING:
                if self._policy == "fail":
                    raise MeasurementError("FPGA is stopped for reconfiguration")
                self._queue.append(data)
                return None
        return self._serve(data)

    def drain(self) -> list[tuple[DataRef, float]]:
        with self._lock:
            pending, self._queue = self._queue, []
        return [(data, self._serve(data)) for data in pending]

    def _serve(self, data: DataRef) -> float:
        pattern = self._state.loaded_pattern
        if (
            pattern is not None
            and self._state.handle is not None
            and pattern.app_id == data.app_id
        ):
            executor = "fpga"
            seconds = self._backend.measure(self._state.handle, data)
        else:
            executor = "cpu"
            seconds = self._backend.measure_cpu(data.app_id, data)
        self.served.append((data, executor, seconds))
        return seconds


class ReconfigExecutor:
    """Owns FpgaState transitions; one reconfiguration at a time."""

    def __init__(
        self,
        state: FpgaState,
        backend: MeasurementBackend,
        mode: str = "static",
        audit_path: str | Path | None = None,
        router: RequestRouter | None = None,
    ):
        self._state = state
        self._backend = backend
        self._mode = mode
        self._audit_path = Path(audit_path) if audit_path else None
        self._router = router
        self._lock = threading.Lock()
        self._last_event: ReconfigEvent | None = None

    @property
    def state(self) -> FpgaState:
        return self._state

    def bootstrap(self, pattern: OffloadPattern) -> ArtifactHandle:
        """Compile and load the initial pattern onto an idle device."""
        with self._lock:
            if self._state.status is not FpgaStatus.STOPPED:
                raise ValueError("bootstrap requires a stopped device")
            handle = self._backend.compile(pattern)
            self._backend.activate(handle, self._mode)
            self._state.loaded_pattern = pattern
            self._state.handle = handle
            self._state.status = FpgaStatus.RUNNING
            return handle

    def execute_static_reconfig(self, new_pattern: OffloadPattern) -> ReconfigEvent:
        """Swap the loaded pattern for new_pattern.

        Compile happens first, with the old pattern still serving; only
        then is the device stopped, rewritten, and restarted. Concurrent
        callers asking for a pattern that is already loaded observe the
        event that loaded it instead of triggering another swap.
        """
        with self._lock:
            loaded = self._state.loaded_pattern
            if (
                loaded is not None
                and loaded.pattern_id == new_pattern.pattern_id
                and self._last_event is not None
                and self._last_event.to_pattern == new_pattern.pattern_id
            ):
                return self._last_event
            event = self._transition(new_pattern)
            self._last_event = event
        self._append_audit(event)
        if self._router is not None and self._state.status is FpgaStatus.RUNNING:
            self._router.drain()
        return event

    def _transition(self, new_pattern: OffloadPattern) -> ReconfigEvent:
        from_id = self._state.loaded_pattern.pattern_id if self._state.loaded_pattern else ""
        compile_started = self._backend.now()
        try:
            handle = self._backend.compile(new_pattern)
        except CompileError as exc:
            logger.error("compile of %s failed: %s", new_pattern.pattern_id, exc)
            return ReconfigEvent(
                from_pattern=from_id,
                to_pattern=new_pattern.pattern_id,
                outcome=OUTCOME_FAILED,
                compile_started=compile_started,
                detail=str(exc),
            )
        compile_done = self._backend.now()

        old_pattern = self._state.loaded_pattern
        old_handle = self._state.handle
        self._state.status = FpgaStatus.RECONFIGURING
        stopped_at = self._backend.now()
        try:
            self._backend.activate(handle, self._mode)
        except OffloadError as exc:
            return self._rollback(
                new_pattern, old_pattern, old_handle, compile_started, compile_done,
                stopped_at, str(exc),
            )
        self._state.loaded_pattern = new_pattern
        self._state.handle = handle
        self._state.status = FpgaStatus.RUNNING
        started_at = self._backend.now()
        return ReconfigEvent(
            from_pattern=from_id,
            to_pattern=new_pattern.pattern_id,
            outcome=OUTCOME_SUCCESS,
            compile_started=compile_started,
            compile_done=compile_done,
            stopped_at=stopped_at,
            started_at=started_at,
            downtime=started_at - stopped_at,
        )

    def _rollback(
        self,
        new_pattern: OffloadPattern,
        old_pattern: OffloadPattern | None,
        old_handle: ArtifactHandle | None,
        compile_started: float,
        compile_done: float,
        stopped_at: float,
        detail: str,
    ) -> ReconfigEvent:
        from_id = old_pattern.pattern_id if old_pattern else ""
        logger.error("start of %s failed, rolling back to %s: %s",
                     new_pattern.pattern_id, from_id or "<none>", detail)
        if old_handle is None:
            self._state.status = FpgaStatus.STOPPED
            return ReconfigEvent(
                from_pattern=from_id,
                to_pattern=new_pattern.pattern_id,
                outcome=OUTCOME_FAILED,
                compile_started=compile_started,
                compile_done=compile_done,
                detail=f"start failed with nothing to roll back to: {detail}",
            )
        self._backend.activate(old_handle, self._mode)
        self._state.loaded_pattern = old_pattern
        self._state.handle = old_handle
        self._state.status = FpgaStatus.RUNNING
        started_at = self._backend.now()
        return ReconfigEvent(
            from_pattern=from_id,
            to_pattern=new_pattern.pattern_id,
            outcome=OUTCOME_ROLLED_BACK,
            compile_started=compile_started,
            compile_done=compile_done,
            stopped_at=stopped_at,
            started_at=started_at,
            downtime=started_at - stopped_at,
            detail=detail,
        )

    def _append_audit(self, event: ReconfigEvent) -> None:
        if self._audit_path is None:
            return
        line = json.dumps(
            {
                "from_pattern": event.from_pattern,
                "to_pattern": event.to_pattern,
                "outcome": event.outcome,
                "compile_started": event.compile_started,
                "compile_done": event.compile_done,
                "stopped_at": event.stopped_at,
                "started_at": event.started_at,
                "downtime": event.downtime,
                "detail": event.detail,
            },
            sort_keys=True,
        )
        self._audit_path.parent.mkdir(parents=True, exist_ok=True)
        with self._audit_path.open("a") as fh:
            fh.write(line + "\n")
