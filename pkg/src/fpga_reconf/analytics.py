"""Production request-log analytics.

Everything the reconfiguration decision needs from history: corrected
per-app load totals (logged times of offloaded apps are scaled back to
CPU-equivalent load by the improvement coefficient), the top-K ranking,
per-app data-size histograms, and the representative datum picked from
the histogram's mode bucket.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from fpga_reconf.backend import DataRef
from fpga_reconf.errors import AnalyticsError
from fpga_reconf.loops import AppCodeProfile

logger = logging.getLogger(__name__)

EXECUTORS = ("cpu", "fpga")


@dataclass(frozen=True)
class RequestRecord:
    """One production request as it actually executed."""

    timestamp: datetime
    app_id: str
    data_size: int
    processing_time: float
    executor: str
    data_ref: str

    def __post_init__(self) -> None:
        if self.processing_time <= 0:
            raise ValueError("processing_time must be > 0")
        if self.data_size < 0:
            raise ValueError("data_size must be >= 0")
        if self.executor not in EXECUTORS:
            raise ValueError(f"executor must be one of {EXECUTORS}")


@dataclass(frozen=True)
class AppLoadSummary:
    app_id: str
    request_count: int
    raw_time_total: float
    improvement_coefficient: float
    corrected_time_total: float


@dataclass(frozen=True)
class SizeHistogram:
    """Fixed-width data-size histogram; mode_bucket is None when empty."""

    bucket_width: int
    counts: dict[int, int]
    mode_bucket: int | None

    @property
    def is_empty(self) -> bool:
        return not self.counts


def parse_timestamp(text: str) -> datetime:
    """RFC 3339 text to an aware datetime; accepts a trailing 'Z'."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp


def record_from_line(line: str) -> RequestRecord:
    doc = json.loads(line)
    if not isinstance(doc, dict):
        raise ValueError("record must be an object")
    ms = doc["processing_time_ms"]
    if isinstance(ms, bool) or not isinstance(ms, int):
        raise ValueError("processing_time_ms must be an integer")
    return RequestRecord(
        timestamp=parse_timestamp(str(doc["timestamp"])),
        app_id=str(doc["app_id"]),
        data_size=int(doc["data_size_bytes"]),
        processing_time=ms / 1000.0,
        executor=str(doc["executor"]),
        data_ref=str(doc["data_ref"]),
    )


def record_to_line(record: RequestRecord) -> str:
    return json.dumps(
        {
            "timestamp": record.timestamp.isoformat(),
            "app_id": record.app_id,
            "data_size_bytes": record.data_size,
            "processing_time_ms": round(record.processing_time * 1000),
            "executor": record.executor,
            "data_ref": record.data_ref,
        },
        sort_keys=True,
    )


def read_request_log(path: str | Path, strict: bool = False) -> tuple[list[RequestRecord], int]:
    """Read a line-delimited request log.

    Returns (records, malformed_count). Malformed lines are skipped with
    a warning unless strict is set, in which case they abort the read.
    """
    path = Path(path)
    records: list[RequestRecord] = []
    malformed = 0
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise AnalyticsError(f"cannot read request log {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_line(line))
        except (ValueError, KeyError, TypeError) as exc:
            if strict:
                raise AnalyticsError(f"{path}:{lineno}: malformed record: {exc}") from exc
            malformed += 1
            logger.warning("%s:%d: skipping malformed record: %s", path, lineno, exc)
    return records, malformed


def write_request_log(records: Iterable[RequestRecord], path: str | Path) -> None:
    Path(path).write_text("".join(record_to_line(r) + "\n" for r in records))


def improvement_coefficient(profile: AppCodeProfile) -> float:
    """Pre-launch CPU time over pre-launch offloaded time.

    Apps that were never offloaded (or never timed) have nothing to
    correct for and get 1.0.
    """
    if profile.pre_launch_fpga_seconds is None or profile.pre_launch_cpu_seconds is None:
        return 1.0
    if profile.pre_launch_fpga_seconds == 0:
        raise ValueError(f"app {profile.app_id}: pre-launch offloaded time of zero")
    return profile.pre_launch_cpu_seconds / profile.pre_launch_fpga_seconds


def in_window(record: RequestRecord, window: tuple[datetime, datetime]) -> bool:
    start, end = window
    return start <= record.timestamp < end


def summarize_window(
    records: Iterable[RequestRecord],
    window: tuple[datetime, datetime],
    coefficients: dict[str, float],
    known_apps: set[str] | None = None,
) -> list[AppLoadSummary]:
    """Per-app corrected load totals over [start, end).

    Only the time of records that actually ran offloaded is scaled by
    the app's coefficient; CPU executions count as-is. Apps without any
    in-window record are omitted. When known_apps is given, a record
    naming any other app aborts the summary.
    """
    start, end = window
    if start >= end:
        raise ValueError("window must be a non-empty interval")
    raw: dict[str, float] = {}
    corrected: dict[str, float] = {}
    counts: dict[str, int] = {}
    for record in records:
        if not in_window(record, window):
            continue
        if known_apps is not None and record.app_id not in known_apps:
            raise AnalyticsError(f"unknown app {record.app_id} in request log")
        coeff = coefficients.get(record.app_id, 1.0)
        scale = coeff if record.executor == "fpga" else 1.0
        raw[record.app_id] = raw.get(record.app_id, 0.0) + record.processing_time
        corrected[record.app_id] = (
            corrected.get(record.app_id, 0.0) + record.processing_time * scale
        )
        counts[record.app_id] = counts.get(record.app_id, 0) + 1
    return [
        AppLoadSummary(
            app_id=app_id,
            request_count=counts[app_id],
            raw_time_total=raw[app_id],
            improvement_coefficient=coefficients.get(app_id, 1.0),
            corrected_time_total=corrected[app_id],
        )
        for app_id in sorted(counts)
    ]


def top_k_apps(summaries: Sequence[AppLoadSummary], k: int) -> list[AppLoadSummary]:
    """The k heaviest apps by corrected total; ties go to the lower app_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(summaries, key=lambda s: (-s.corrected_time_total, s.app_id))
    return ranked[:k]


def build_histogram(
    records: Iterable[RequestRecord],
    app_id: str,
    window: tuple[datetime, datetime],
    bucket_width: int,
) -> SizeHistogram:
    """Fixed-width size histogram of one app's in-window requests."""
    if bucket_width <= 0:
        raise ValueError("bucket_width must be > 0")
    counts: dict[int, int] = {}
    for record in records:
        if record.app_id != app_id or not in_window(record, window):
            continue
        bucket = record.data_size // bucket_width
        counts[bucket] = counts.get(bucket, 0) + 1
    mode_bucket: int | None = None
    if counts:
        mode_bucket = min(
            counts, key=lambda bucket: (-counts[bucket], bucket)
        )
    return SizeHistogram(bucket_width=bucket_width, counts=counts, mode_bucket=mode_bucket)


def select_representative(
    records: Iterable[RequestRecord],
    app_id: str,
    window: tuple[datetime, datetime],
    histogram: SizeHistogram,
) -> DataRef:
    """The most recent in-window request datum from the mode bucket."""
    if histogram.is_empty or histogram.mode_bucket is None:
        raise AnalyticsError(f"app {app_id}: no requests to represent")
    chosen: RequestRecord | None = None
    for record in records:
        if record.app_id != app_id or not in_window(record, window):
            continue
        if record.data_size // histogram.bucket_width != histogram.mode_bucket:
            continue
        if chosen is None or record.timestamp >= chosen.timestamp:
            chosen = record
    if chosen is None:
        raise AnalyticsError(f"app {app_id}: mode bucket holds no records")
    return DataRef(ref=chosen.data_ref, app_id=app_id, size_bytes=chosen.data_size)
