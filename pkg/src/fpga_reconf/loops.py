"""Loop descriptors and arithmetic-intensity ranking.

Candidate loops arrive as structured descriptors rather than source code:
each one carries the operation count and data traffic per execution, and
optionally an observed iteration count merged in from a profiler dump.
Intensity (operations per byte moved) is the ranking key for deciding
which loops are worth offloading.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from fpga_reconf.errors import ProfileError


@dataclass(frozen=True)
class LoopDescriptor:
    """One offload-candidate loop.

    op_count and bytes_moved are per single loop execution; iteration_count
    is how often the loop ran in the profiled workload (1 when no profile
    data was merged).
    """

    loop_id: str
    op_count: int
    bytes_moved: int
    iteration_count: int = 1

    def __post_init__(self) -> None:
        if not self.loop_id:
            raise ValueError("loop_id must be non-empty")
        if self.op_count < 0:
            raise ValueError(f"loop {self.loop_id}: op_count must be >= 0")
        if self.bytes_moved <= 0:
            raise ValueError(f"loop {self.loop_id}: bytes_moved must be > 0")
        if self.iteration_count < 0:
            raise ValueError(f"loop {self.loop_id}: iteration_count must be >= 0")

    @property
    def intensity(self) -> float:
        return self.op_count / self.bytes_moved


@dataclass(frozen=True)
class AppCodeProfile:
    """All candidate loops of one application, plus optional pre-launch
    timings used to derive the improvement coefficient."""

    app_id: str
    loops: tuple[LoopDescriptor, ...]
    pre_launch_cpu_seconds: float | None = None
    pre_launch_fpga_seconds: float | None = None

    def __post_init__(self) -> None:
        if not self.app_id:
            raise ValueError("app_id must be non-empty")
        ids = [loop.loop_id for loop in self.loops]
        if len(ids) != len(set(ids)):
            raise ValueError(f"profile {self.app_id}: duplicate loop_id")
        for name, value in (
            ("pre_launch_cpu_seconds", self.pre_launch_cpu_seconds),
            ("pre_launch_fpga_seconds", self.pre_launch_fpga_seconds),
        ):
            if value is not None and value <= 0:
                raise ValueError(f"profile {self.app_id}: {name} must be > 0")

    def loop(self, loop_id: str) -> LoopDescriptor:
        for candidate in self.loops:
            if candidate.loop_id == loop_id:
                return candidate
        raise KeyError(loop_id)


def compute_intensity(loop: LoopDescriptor) -> float:
    """Arithmetic intensity of a loop, in operations per byte moved."""
    if loop.bytes_moved <= 0:
        raise ValueError(f"loop {loop.loop_id}: intensity undefined for bytes_moved <= 0")
    return loop.op_count / loop.bytes_moved


def ingest_profile_counts(profile: AppCodeProfile, counts: dict[str, int]) -> AppCodeProfile:
    """Merge profiler execution counts into a profile.

    Loops absent from ``counts`` keep their prior iteration_count. Keys
    that name no loop in the profile are rejected.
    """
    known = {loop.loop_id for loop in profile.loops}
    for loop_id in counts:
        if loop_id not in known:
            raise ProfileError(f"unknown loop {loop_id}")
    updated = tuple(
        dataclasses.replace(loop, iteration_count=counts[loop.loop_id])
        if loop.loop_id in counts
        else loop
        for loop in profile.loops
    )
    return dataclasses.replace(profile, loops=updated)


def top_n_by_intensity(
    profile: AppCodeProfile, n: int, min_iterations: int = 0
) -> list[LoopDescriptor]:
    """The n most intense loops that ran at least min_iterations times.

    Sorted by intensity descending; ties resolve to the lower loop_id so
    repeated runs select identically.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    eligible = [loop for loop in profile.loops if loop.iteration_count >= min_iterations]
    eligible.sort(key=lambda loop: (-loop.intensity, loop.loop_id))
    return eligible[:n]


def load_profile(path: str | Path) -> AppCodeProfile:
    """Read one app profile document (JSON).

    Fields: app_id, loops (list of {loop_id, op_count, bytes_moved}),
    optional pre_launch_cpu_seconds / pre_launch_fpga_seconds.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ProfileError(f"cannot read profile {path}: {exc}") from exc
    try:
        loops = tuple(
            LoopDescriptor(
                loop_id=str(entry["loop_id"]),
                op_count=int(entry["op_count"]),
                bytes_moved=int(entry["bytes_moved"]),
            )
            for entry in doc["loops"]
        )
        return AppCodeProfile(
            app_id=str(doc["app_id"]),
            loops=loops,
            pre_launch_cpu_seconds=_optional_time(doc, "pre_launch_cpu_seconds"),
            pre_launch_fpga_seconds=_optional_time(doc, "pre_launch_fpga_seconds"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProfileError(f"malformed profile {path}: {exc}") from exc


def load_profile_counts(path: str | Path) -> dict[str, int]:
    """Read a two-column iteration-count file: loop_id then count.

    Blank lines and lines starting with '#' are skipped.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProfileError(f"cannot read counts {path}: {exc}") from exc
    counts: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ProfileError(f"{path}:{lineno}: expected 'loop_id count', got {raw!r}")
        loop_id, count_text = parts
        try:
            count = int(count_text)
        except ValueError as exc:
            raise ProfileError(f"{path}:{lineno}: count is not an integer: {count_text!r}") from exc
        if count < 0:
            raise ProfileError(f"{path}:{lineno}: count must be >= 0")
        counts[loop_id] = count
    return counts


def _optional_time(doc: dict, key: str) -> float | None:
    value = doc.get(key)
    return None if value is None else float(value)
