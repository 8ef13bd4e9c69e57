"""Offload-pattern search.

Narrows an app's loops by arithmetic intensity, then by resource
efficiency, measures the surviving singles on the representative datum,
and finally measures one combination of the two fastest singles. The
best pattern is simply the fastest measured one.
"""

from __future__ import annotations

import dataclasses
import logging
import statistics
from dataclasses import dataclass
from typing import Sequence

from fpga_reconf.backend import DataRef, MeasurementBackend, pattern_key
from fpga_reconf.errors import CompileError, MeasurementError, SearchError
from fpga_reconf.loops import AppCodeProfile, LoopDescriptor, top_n_by_intensity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OffloadPattern:
    """A set of loops compiled into one accelerator artifact."""

    pattern_id: str
    app_id: str
    loop_ids: frozenset[str]
    resource_usage: float | None = None
    measured_time: float | None = None

    def __post_init__(self) -> None:
        if not self.loop_ids:
            raise ValueError(f"pattern {self.pattern_id}: loop_ids must be non-empty")
        if self.resource_usage is not None and not 0.0 <= self.resource_usage <= 1.0:
            raise ValueError(f"pattern {self.pattern_id}: resource_usage must be in [0, 1]")
        if self.measured_time is not None and self.measured_time <= 0:
            raise ValueError(f"pattern {self.pattern_id}: measured_time must be > 0")


@dataclass(frozen=True)
class SearchResult:
    best: OffloadPattern
    all_measured: tuple[OffloadPattern, ...]
    representative_data_ref: str
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.best not in self.all_measured:
            raise ValueError("best pattern must be one of the measured patterns")


def make_pattern_id(app_id: str, loop_ids) -> str:
    return f"{app_id}:{pattern_key(loop_ids)}"


def single_pattern(app_id: str, loop: LoopDescriptor, usage: float | None = None) -> OffloadPattern:
    return OffloadPattern(
        pattern_id=make_pattern_id(app_id, [loop.loop_id]),
        app_id=app_id,
        loop_ids=frozenset([loop.loop_id]),
        resource_usage=usage,
    )


def resource_efficiency(intensity: float, usage: float) -> float:
    """Intensity per unit of device capacity; the narrowing key."""
    if usage <= 0:
        raise ValueError("unestimable pattern: resource usage must be > 0")
    return intensity / usage


def narrow_by_efficiency(
    candidates: Sequence[tuple[LoopDescriptor, float]], n: int
) -> list[tuple[LoopDescriptor, float]]:
    """Keep the n most resource-efficient candidates.

    Candidates whose single-loop usage already exceeds the device (> 1.0)
    are dropped before ranking. Ties resolve to the lower loop_id.
    """
    feasible = [(loop, usage) for loop, usage in candidates if usage <= 1.0]
    feasible.sort(
        key=lambda item: (-resource_efficiency(item[0].intensity, item[1]), item[0].loop_id)
    )
    return feasible[:n]


def build_measurement_plan(measured_singles: Sequence[OffloadPattern]) -> list[OffloadPattern]:
    """Extend measured singles with one combination of the two fastest.

    The combination's usage is estimated additively from its members; if
    that exceeds the device it is dropped and the plan is the singles
    alone. With a single candidate the plan is that single by itself.
    """
    if not measured_singles:
        raise SearchError("no offload candidates")
    for single in measured_singles:
        if single.measured_time is None:
            raise ValueError(f"single {single.pattern_id} has no measured_time")
        if single.resource_usage is None:
            raise ValueError(f"single {single.pattern_id} has no resource_usage")
    plan = list(measured_singles)
    if len(measured_singles) < 2:
        return plan
    fastest = sorted(measured_singles, key=lambda p: (p.measured_time, p.pattern_id))[:2]
    combo_usage = sum(p.resource_usage for p in fastest)
    if combo_usage > 1.0:
        return plan
    loop_ids = frozenset().union(*(p.loop_ids for p in fastest))
    plan.append(
        OffloadPattern(
            pattern_id=make_pattern_id(fastest[0].app_id, loop_ids),
            app_id=fastest[0].app_id,
            loop_ids=loop_ids,
            resource_usage=combo_usage,
        )
    )
    return plan


def run_search(
    profile: AppCodeProfile,
    representative_data: DataRef,
    backend: MeasurementBackend,
    *,
    n_intensity: int = 4,
    n_efficiency: int = 3,
    min_iterations: int = 0,
    repeats: int = 3,
) -> SearchResult:
    """Find the fastest offload pattern for one app.

    Each measurement is the median of `repeats` backend runs. Patterns
    that fail to compile or measure are excluded with a diagnostic; the
    search only fails outright when nothing could be measured at all.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    diagnostics: list[str] = []

    top = top_n_by_intensity(profile, n_intensity, min_iterations)
    if not top:
        raise SearchError(f"no offload candidates for app {profile.app_id}")

    estimated: list[tuple[LoopDescriptor, float]] = []
    for loop in top:
        try:
            usage = backend.resource_report(single_pattern(profile.app_id, loop))
        except MeasurementError as exc:
            diagnostics.append(f"{loop.loop_id}: {exc}")
            continue
        estimated.append((loop, usage))

    measured: list[OffloadPattern] = []
    for loop, usage in narrow_by_efficiency(estimated, n_efficiency):
        pattern = single_pattern(profile.app_id, loop, usage)
        outcome = _measure_pattern(pattern, representative_data, backend, repeats, diagnostics)
        if outcome is not None:
            measured.append(outcome)

    all_measured = list(measured)
    if measured:
        plan = build_measurement_plan(measured)
        for pattern in plan[len(measured):]:
            outcome = _measure_pattern(pattern, representative_data, backend, repeats, diagnostics)
            if outcome is not None:
                all_measured.append(outcome)

    if not all_measured:
        raise SearchError(
            f"search produced no measurable pattern for app {profile.app_id}: "
            + ("; ".join(diagnostics) or "no feasible candidates")
        )
    best = min(all_measured, key=lambda p: (p.measured_time, p.pattern_id))
    logger.info(
        "search %s: best %s at %.4f s over %d patterns",
        profile.app_id,
        best.pattern_id,
        best.measured_time,
        len(all_measured),
    )
    return SearchResult(
        best=best,
        all_measured=tuple(all_measured),
        representative_data_ref=representative_data.ref,
        diagnostics=tuple(diagnostics),
    )


def _measure_pattern(
    pattern: OffloadPattern,
    data: DataRef,
    backend: MeasurementBackend,
    repeats: int,
    diagnostics: list[str],
) -> OffloadPattern | None:
    try:
        handle = backend.compile(pattern)
        runs = [backend.measure(handle, data) for _ in range(repeats)]
    except (CompileError, MeasurementError) as exc:
        diagnostics.append(f"{pattern.pattern_id}: {exc}")
        return None
    return dataclasses.replace(pattern, measured_time=statistics.median(runs))
