"""Cycle orchestration: analyze, search, decide, approve, reconfigure.

One cycle walks the whole pipeline over a log window: corrected load
totals pick the top-K apps, each gets a representative datum and a
pattern search, the effects feed the threshold gate, and an approved
proposal is executed as a compile/stop/start swap. Every cycle emits a
deterministic structured report; catalogs under the catalog directory
hold search results, proposal history, and the reconfiguration audit
log.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable

from fpga_reconf import analytics, decision
from fpga_reconf.backend import (
    CommandBackend,
    CostModelConfig,
    DataRef,
    MeasurementBackend,
    SimulatedBackend,
)
from fpga_reconf.errors import (
    AnalyticsError,
    CompileError,
    CycleError,
    MeasurementError,
    OffloadError,
    ProfileError,
    SearchError,
)
from fpga_reconf.executor import FpgaState, ReconfigExecutor, RequestRouter
from fpga_reconf.loops import (
    AppCodeProfile,
    ingest_profile_counts,
    load_profile,
    load_profile_counts,
)
from fpga_reconf.search import OffloadPattern, SearchResult, make_pattern_id, run_search

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "cycle-report/1"


@dataclass
class OrchestratorConfig:
    log_path: Path
    profiles_dir: Path
    cost_model_path: Path
    catalog_dir: Path
    output_dir: Path
    long_window_seconds: float = 3600.0
    short_window_seconds: float = 3600.0
    top_k: int = 2
    threshold: float = 2.0
    n_intensity: int = 4
    n_efficiency: int = 3
    min_iterations: int = 0
    bucket_width: int = 4096
    repeats: int = 3
    reconfig_mode: str = "static"
    effect_floor: float = 0.0
    cooldown_windows: int = 7
    queue_policy: str = "queue"
    approval_mode: str = "file"
    strict_log: bool = False
    backend_kind: str = "simulated"
    backend_command: list[str] = field(default_factory=list)
    initial_pattern: dict | None = None
    window_end: datetime | None = None

    def __post_init__(self) -> None:
        if self.long_window_seconds <= 0 or self.short_window_seconds <= 0:
            raise ValueError("window durations must be > 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")
        if self.reconfig_mode not in ("static", "dynamic"):
            raise ValueError("reconfig_mode must be 'static' or 'dynamic'")
        if self.approval_mode not in ("file", "prompt", "auto"):
            raise ValueError("approval_mode must be 'file', 'prompt', or 'auto'")

    @classmethod
    def from_file(cls, path: str | Path) -> "OrchestratorConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config {path}: {exc}") from exc
        base = path.parent
        kwargs = dict(doc)
        for key in ("log_path", "profiles_dir", "cost_model_path", "catalog_dir", "output_dir"):
            if key not in kwargs:
                raise ValueError(f"config {path}: missing {key}")
            kwargs[key] = _resolve(base, kwargs[key])
        if kwargs.get("window_end") is not None:
            kwargs["window_end"] = analytics.parse_timestamp(kwargs["window_end"])
        return cls(**kwargs)


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def build_backend(config: OrchestratorConfig) -> MeasurementBackend:
    if config.backend_kind == "simulated":
        return SimulatedBackend(CostModelConfig.from_file(config.cost_model_path))
    if config.backend_kind == "command":
        if not config.backend_command:
            raise ValueError("backend_kind 'command' requires backend_command")
        return CommandBackend(config.backend_command)
    raise ValueError(f"unknown backend_kind {config.backend_kind!r}")


def load_profiles(profiles_dir: str | Path) -> dict[str, AppCodeProfile]:
    """Load every *.json profile, merging a sibling .counts file if present."""
    profiles: dict[str, AppCodeProfile] = {}
    for path in sorted(Path(profiles_dir).glob("*.json")):
        profile = load_profile(path)
        counts_path = path.with_suffix(".counts")
        if counts_path.exists():
            profile = ingest_profile_counts(profile, load_profile_counts(counts_path))
        if profile.app_id in profiles:
            raise ProfileError(f"duplicate profile for app {profile.app_id}")
        profiles[profile.app_id] = profile
    return profiles


class Catalog:
    """On-disk store for search results, proposals, and device state."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.patterns_dir = self.root / "patterns"
        self.proposals_path = self.root / "proposals.jsonl"
        self.events_path = self.root / "events.jsonl"
        self.answers_dir = self.root / "answers"
        self.state_path = self.root / "state.json"

    def save_search(self, result: SearchResult, representative: DataRef) -> Path:
        self.patterns_dir.mkdir(parents=True, exist_ok=True)
        app_id = result.best.app_id
        seq = len(list(self.patterns_dir.glob(f"{app_id}-*.json"))) + 1
        path = self.patterns_dir / f"{app_id}-{seq:03d}.json"
        path.write_text(json.dumps(search_result_doc(result, representative),
                                   sort_keys=True, indent=2) + "\n")
        return path

    def load_search(self, path: str | Path) -> dict:
        return json.loads(Path(path).read_text())

    def latest_chosen(self, app_id: str) -> dict | None:
        candidates = sorted(self.patterns_dir.glob(f"{app_id}-*.json"))
        if not candidates:
            return None
        doc = self.load_search(candidates[-1])
        for pattern in doc["patterns"]:
            if pattern["chosen"]:
                return pattern
        return None

    def record_proposal(self, proposal: decision.ReconfigProposal, recorded_at: float) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        record = {
            "recorded_at_unix": recorded_at,
            "proposal_id": proposal.proposal_id,
            "from_pattern_id": proposal.from_pattern_id,
            "to_pattern_id": proposal.best_new.pattern_id if proposal.best_new else None,
            "app_id": proposal.best_new.app_id if proposal.best_new else None,
            "current_effect": proposal.current_effect,
            "best_effect": proposal.best_new.effect if proposal.best_new else None,
            "ratio": _jsonable_ratio(proposal.ratio),
            "threshold": proposal.threshold,
            "verdict": proposal.verdict,
            "approval": proposal.approval,
        }
        with self.proposals_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def proposal_history(self) -> list[dict]:
        if not self.proposals_path.exists():
            return []
        return [json.loads(line) for line in self.proposals_path.read_text().splitlines() if line]

    def rejected_within(self, proposal_id: str, now_unix: float, cooldown_seconds: float) -> bool:
        for record in self.proposal_history():
            if (
                record.get("proposal_id") == proposal_id
                and record.get("approval") == decision.APPROVAL_REJECTED
                and now_unix - float(record.get("recorded_at_unix", 0.0)) < cooldown_seconds
            ):
                return True
        return False

    def load_state(self) -> dict | None:
        if not self.state_path.exists():
            return None
        return json.loads(self.state_path.read_text())

    def save_state(self, pattern: OffloadPattern) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(json.dumps(
            {
                "app_id": pattern.app_id,
                "loop_ids": sorted(pattern.loop_ids),
                "pattern_id": pattern.pattern_id,
            },
            sort_keys=True, indent=2,
        ) + "\n")


def search_result_doc(result: SearchResult, representative: DataRef) -> dict:
    return {
        "app_id": result.best.app_id,
        "representative": {"ref": representative.ref, "size_bytes": representative.size_bytes},
        "patterns": [
            {
                "pattern_id": p.pattern_id,
                "loop_ids": sorted(p.loop_ids),
                "usage": p.resource_usage,
                "measured_time": p.measured_time,
                "chosen": p.pattern_id == result.best.pattern_id,
            }
            for p in result.all_measured
        ],
        "best": result.best.pattern_id,
        "diagnostics": list(result.diagnostics),
    }


def _jsonable_ratio(ratio: float) -> float | str:
    return "infinite" if math.isinf(ratio) else ratio


def render_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _current_pattern(config: OrchestratorConfig, catalog: Catalog) -> OffloadPattern | None:
    doc = catalog.load_state() or config.initial_pattern
    if not doc:
        return None
    loop_ids = frozenset(doc["loop_ids"])
    return OffloadPattern(
        pattern_id=make_pattern_id(doc["app_id"], loop_ids),
        app_id=doc["app_id"],
        loop_ids=loop_ids,
    )


def _effect_doc(effect: decision.ImprovementEffect) -> dict:
    return {
        "app_id": effect.app_id,
        "pattern_id": effect.pattern_id,
        "baseline_time": effect.baseline_time,
        "offloaded_time": effect.offloaded_time,
        "frequency": effect.frequency,
        "effect": effect.effect,
    }


def run_cycle(
    config: OrchestratorConfig,
    backend: MeasurementBackend | None = None,
    *,
    auto_approve: bool = False,
    dry_run: bool = False,
    now_fn: Callable[[], float] = time.time,
    approval_channel: decision.ApprovalChannel | None = None,
) -> dict:
    """One full analyze-to-reconfigure cycle; returns the cycle report.

    Any step failure aborts with a CycleError naming the step; device
    state and catalogs are untouched unless the final step began. With
    dry_run nothing on disk or on the device changes at all.
    """
    if backend is None:
        backend = _step("backend", lambda: build_backend(config))
    catalog = Catalog(config.catalog_dir)

    report: dict = {"schema": REPORT_SCHEMA, "dry_run": dry_run}

    profiles = _step("profiles", lambda: load_profiles(config.profiles_dir))
    if not profiles:
        raise CycleError("profiles", f"no profiles found under {config.profiles_dir}")

    records, malformed = _step(
        "ingest", lambda: analytics.read_request_log(config.log_path, strict=config.strict_log)
    )
    report["log"] = {"records_total": len(records), "malformed": malformed}

    current_pattern = _current_pattern(config, catalog)
    report["current_pattern"] = current_pattern.pattern_id if current_pattern else None

    if not records:
        report.update(_no_action("no traffic in request log"))
        _finish(report, config, backend, dry_run)
        return report

    window_end = config.window_end or max(r.timestamp for r in records) + timedelta(microseconds=1)
    long_window = (window_end - timedelta(seconds=config.long_window_seconds), window_end)
    short_window = (window_end - timedelta(seconds=config.short_window_seconds), window_end)
    report["window"] = {
        "start": long_window[0].isoformat(),
        "end": window_end.isoformat(),
        "hours": config.long_window_seconds / 3600.0,
    }

    coefficients = {
        app_id: analytics.improvement_coefficient(profile)
        for app_id, profile in profiles.items()
    }
    summaries = _step(
        "summarize", lambda: analytics.summarize_window(records, long_window, coefficients)
    )
    report["summaries"] = [dataclasses.asdict(s) for s in summaries]
    report["log"]["records_in_window"] = sum(s.request_count for s in summaries)
    if not summaries:
        report.update(_no_action("no traffic inside the analysis window"))
        _finish(report, config, backend, dry_run)
        return report

    top = _step("top_k", lambda: analytics.top_k_apps(summaries, config.top_k))
    report["top_apps"] = [s.app_id for s in top]

    window_hours = config.long_window_seconds / 3600.0
    frequency = {s.app_id: s.request_count / window_hours for s in summaries}

    rep_apps = [s.app_id for s in top]
    if current_pattern and current_pattern.app_id in frequency \
            and current_pattern.app_id not in rep_apps:
        rep_apps.append(current_pattern.app_id)

    representatives: dict[str, DataRef] = {}
    for app_id in rep_apps:
        def _pick(app_id=app_id):
            histogram = analytics.build_histogram(
                records, app_id, short_window, config.bucket_width
            )
            return analytics.select_representative(records, app_id, short_window, histogram)
        representatives[app_id] = _step("representative", _pick)
    report["representatives"] = {
        app_id: {"ref": ref.ref, "size_bytes": ref.size_bytes}
        for app_id, ref in representatives.items()
    }

    searches: dict[str, SearchResult] = {}
    for summary in top:
        app_id = summary.app_id
        if app_id not in profiles:
            raise CycleError("search", f"no code profile for app {app_id}")
        def _search(app_id=app_id):
            return run_search(
                profiles[app_id],
                representatives[app_id],
                backend,
                n_intensity=config.n_intensity,
                n_efficiency=config.n_efficiency,
                min_iterations=config.min_iterations,
                repeats=config.repeats,
            )
        searches[app_id] = _step("search", _search)
        if not dry_run:
            catalog.save_search(searches[app_id], representatives[app_id])
    report["searches"] = {
        app_id: {
            **search_result_doc(result, representatives[app_id]),
            "measurements": len(result.all_measured),
        }
        for app_id, result in searches.items()
    }

    def _effects() -> tuple[decision.ImprovementEffect, list[decision.ImprovementEffect]]:
        candidates = []
        for app_id, result in searches.items():
            baseline = _median_cpu(backend, app_id, representatives[app_id], config.repeats)
            candidates.append(decision.ImprovementEffect.compute(
                app_id,
                result.best.pattern_id,
                baseline,
                result.best.measured_time,
                frequency[app_id],
            ))
        candidates.sort(key=lambda e: e.app_id)
        if current_pattern is None:
            current = decision.ImprovementEffect(
                app_id="", pattern_id="", baseline_time=0.0,
                offloaded_time=0.0, frequency=0.0, effect=0.0,
            )
        elif current_pattern.app_id not in frequency:
            current = decision.ImprovementEffect(
                app_id=current_pattern.app_id, pattern_id=current_pattern.pattern_id,
                baseline_time=0.0, offloaded_time=0.0, frequency=0.0, effect=0.0,
            )
        else:
            data = representatives[current_pattern.app_id]
            baseline = _median_cpu(backend, current_pattern.app_id, data, config.repeats)
            handle = backend.compile(current_pattern)
            offloaded = statistics.median(
                backend.measure(handle, data) for _ in range(config.repeats)
            )
            current = decision.ImprovementEffect.compute(
                current_pattern.app_id, current_pattern.pattern_id,
                baseline, offloaded, frequency[current_pattern.app_id],
            )
        return current, candidates

    current_effect, candidate_effects = _step("effects", _effects)
    report["effects"] = {
        "current": _effect_doc(current_effect),
        "candidates": [_effect_doc(e) for e in candidate_effects],
    }

    proposal = _step(
        "decide",
        lambda: decision.decide(
            current_effect, candidate_effects, config.threshold, config.effect_floor
        ),
    )
    if (
        proposal.verdict == decision.VERDICT_PROPOSE
        and current_pattern is not None
        and proposal.best_new is not None
        and proposal.best_new.pattern_id == current_pattern.pattern_id
    ):
        proposal = dataclasses.replace(
            proposal, verdict=decision.VERDICT_NO_ACTION,
            diagnostic="best pattern is already loaded",
        )

    cooldown_seconds = config.cooldown_windows * config.long_window_seconds
    if (
        proposal.verdict == decision.VERDICT_PROPOSE
        and catalog.rejected_within(proposal.proposal_id, now_fn(), cooldown_seconds)
    ):
        proposal = dataclasses.replace(
            proposal, verdict=decision.VERDICT_NO_ACTION,
            diagnostic="cooling down after a rejected identical proposal",
        )

    event = None
    if proposal.verdict == decision.VERDICT_PROPOSE and not dry_run:
        channel = approval_channel
        if channel is None:
            if auto_approve or config.approval_mode == "auto":
                channel = decision.AutoApprove()
            elif config.approval_mode == "prompt":
                channel = decision.PromptApproval()
            else:
                channel = decision.FileDropApproval(catalog.answers_dir)
        proposal = _step("approval", lambda: decision.await_approval(proposal, channel))
        catalog.record_proposal(proposal, now_fn())
        if proposal.approval == decision.APPROVAL_APPROVED:
            new_pattern = searches[proposal.best_new.app_id].best
            event = _step(
                "reconfig",
                lambda: _reconfigure(config, backend, catalog, current_pattern, new_pattern),
            )

    report["proposal"] = {
        "proposal_id": proposal.proposal_id,
        "from_pattern_id": proposal.from_pattern_id,
        "to_pattern_id": proposal.best_new.pattern_id if proposal.best_new else None,
        "app_id": proposal.best_new.app_id if proposal.best_new else None,
        "current_effect": proposal.current_effect,
        "best_effect": proposal.best_new.effect if proposal.best_new else None,
        "ratio": _jsonable_ratio(proposal.ratio),
        "threshold": proposal.threshold,
        "verdict": proposal.verdict,
        "approval": proposal.approval,
        "diagnostic": proposal.diagnostic,
    }
    report["verdict"] = proposal.verdict
    report["approval"] = proposal.approval
    report["event"] = None if event is None else {
        "from_pattern": event.from_pattern,
        "to_pattern": event.to_pattern,
        "outcome": event.outcome,
        "compile_started": event.compile_started,
        "compile_done": event.compile_done,
        "stopped_at": event.stopped_at,
        "started_at": event.started_at,
        "downtime": event.downtime,
    }
    _finish(report, config, backend, dry_run)
    return report


def _median_cpu(backend: MeasurementBackend, app_id: str, data: DataRef, repeats: int) -> float:
    return statistics.median(backend.measure_cpu(app_id, data) for _ in range(repeats))


def _reconfigure(
    config: OrchestratorConfig,
    backend: MeasurementBackend,
    catalog: Catalog,
    current_pattern: OffloadPattern | None,
    new_pattern: OffloadPattern,
):
    state = FpgaState()
    router = RequestRouter(state, backend, policy=config.queue_policy)
    executor = ReconfigExecutor(
        state, backend,
        mode=config.reconfig_mode,
        audit_path=catalog.events_path,
        router=router,
    )
    if current_pattern is not None:
        executor.bootstrap(current_pattern)
    event = executor.execute_static_reconfig(new_pattern)
    if event.outcome == "success":
        catalog.save_state(new_pattern)
    return event


def _no_action(reason: str) -> dict:
    return {
        "summaries": [],
        "top_apps": [],
        "representatives": {},
        "searches": {},
        "effects": None,
        "proposal": None,
        "event": None,
        "verdict": decision.VERDICT_NO_ACTION,
        "approval": None,
        "diagnostic": reason,
    }


def _finish(report: dict, config: OrchestratorConfig, backend: MeasurementBackend, dry_run: bool) -> None:
    report["model_clock_seconds"] = backend.now()
    if not dry_run:
        config.output_dir.mkdir(parents=True, exist_ok=True)
        (config.output_dir / "cycle_report.json").write_text(render_report(report))


def _step(name: str, action: Callable):
    try:
        return action()
    except CycleError:
        raise
    except (OffloadError, ValueError, KeyError) as exc:
        raise CycleError(name, str(exc)) from exc
