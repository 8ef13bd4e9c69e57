"""Scenario replay: synthetic workloads and golden-value diffs.

A scenario file bundles a workload description (per-app request rates, a
size mix, fixed per-size processing times), the cost model, profiles,
and the numbers a cycle over that workload is expected to produce. The
generator is deterministic: exact counts, an exact largest-remainder mix
split, and a seeded shuffle, so replays are reproducible to the byte.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

from fpga_reconf import analytics
from fpga_reconf.analytics import RequestRecord
from fpga_reconf.backend import CostModelConfig, SimulatedBackend
from fpga_reconf.orchestrator import OrchestratorConfig, run_cycle


@dataclass(frozen=True)
class MixEntry:
    size_bytes: int
    weight: float
    time_ms: int


@dataclass(frozen=True)
class AppWorkload:
    rate_per_hour: float
    executor: str
    mix: tuple[MixEntry, ...]

    def __post_init__(self) -> None:
        if self.rate_per_hour < 0:
            raise ValueError("rate_per_hour must be >= 0")
        if not self.mix:
            raise ValueError("mix must be non-empty")
        if all(entry.weight == 0 for entry in self.mix):
            raise ValueError("mix weights must not all be zero")
        for entry in self.mix:
            if entry.weight < 0:
                raise ValueError("mix weights must be >= 0")


def largest_remainder_split(total: int, weights: list[float]) -> list[int]:
    """Split total into integer shares proportional to weights.

    Floors first, then hands the leftover units to the largest
    fractional remainders; remainder ties go to the lower index.
    """
    if total < 0:
        raise ValueError("total must be >= 0")
    if not weights or all(w == 0 for w in weights):
        raise ValueError("weights must not all be zero")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be >= 0")
    scale = sum(weights)
    quotas = [total * w / scale for w in weights]
    shares = [math.floor(q) for q in quotas]
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - shares[i]), i))
    for i in order[: total - sum(shares)]:
        shares[i] += 1
    return shares


def generate_synthetic_log(
    workloads: dict[str, AppWorkload],
    window_start: datetime,
    hours: float,
    seed: int,
) -> list[RequestRecord]:
    """Deterministic request stream over [window_start, start + hours).

    Per app: exactly round(rate x hours) requests, evenly spaced; the
    size mix is split exactly (largest remainder) and the per-request
    size order is a seeded shuffle, so totals are exact whatever the
    seed. Times come straight from the mix table.
    """
    if hours <= 0:
        raise ValueError("hours must be > 0")
    records: list[RequestRecord] = []
    for app_id in sorted(workloads):
        workload = workloads[app_id]
        count = round(workload.rate_per_hour * hours)
        if count == 0:
            continue
        shares = largest_remainder_split(count, [entry.weight for entry in workload.mix])
        labels = [i for i, share in enumerate(shares) for _ in range(share)]
        random.Random(f"{seed}:{app_id}").shuffle(labels)
        step = hours * 3600.0 / count
        for i, label in enumerate(labels):
            entry = workload.mix[label]
            records.append(RequestRecord(
                timestamp=window_start + timedelta(seconds=i * step),
                app_id=app_id,
                data_size=entry.size_bytes,
                processing_time=entry.time_ms / 1000.0,
                executor=workload.executor,
                data_ref=f"{app_id}-{i:05d}",
            ))
    records.sort(key=lambda r: (r.timestamp, r.app_id, r.data_ref))
    return records


@dataclass
class Scenario:
    name: str
    seed: int
    window_start: datetime
    hours: float
    workloads: dict[str, AppWorkload]
    cost_model_path: Path
    profiles_dir: Path
    initial_pattern: dict | None
    config_overrides: dict
    expected: dict = field(default_factory=dict)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read scenario {path}: {exc}") from exc
    base = path.parent
    workloads = {}
    for app_id, entry in doc["workload"].items():
        workloads[app_id] = AppWorkload(
            rate_per_hour=float(entry["rate_per_hour"]),
            executor=str(entry["executor"]),
            mix=tuple(
                MixEntry(int(m["size_bytes"]), float(m["weight"]), int(m["time_ms"]))
                for m in entry["mix"]
            ),
        )
    return Scenario(
        name=str(doc.get("name", path.stem)),
        seed=int(doc.get("seed", 0)),
        window_start=analytics.parse_timestamp(doc["window_start"]),
        hours=float(doc.get("window_hours", 1.0)),
        workloads=workloads,
        cost_model_path=_resolve(base, doc["cost_model"]),
        profiles_dir=_resolve(base, doc["profiles_dir"]),
        initial_pattern=doc.get("initial_pattern"),
        config_overrides=dict(doc.get("config", {})),
        expected=dict(doc.get("expected", {})),
    )


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


@dataclass
class ReplayResult:
    report: dict
    checks: list[dict]
    ok: bool


def scenario_config(scenario: Scenario, out_dir: str | Path) -> OrchestratorConfig:
    """Orchestrator config for replaying a scenario into out_dir."""
    out_dir = Path(out_dir)
    window_seconds = scenario.hours * 3600.0
    kwargs = dict(
        log_path=out_dir / "requests.log",
        profiles_dir=scenario.profiles_dir,
        cost_model_path=scenario.cost_model_path,
        catalog_dir=out_dir / "catalog",
        output_dir=out_dir,
        long_window_seconds=window_seconds,
        short_window_seconds=window_seconds,
        initial_pattern=scenario.initial_pattern,
        window_end=scenario.window_start + timedelta(seconds=window_seconds),
    )
    kwargs.update(scenario.config_overrides)
    return OrchestratorConfig(**kwargs)


def replay_scenario(
    scenario_path: str | Path,
    out_dir: str | Path,
    *,
    seed: int | None = None,
    threshold: float | None = None,
) -> ReplayResult:
    """Generate the scenario's log, run one auto-approved cycle, and diff
    the report against the scenario's expected values."""
    scenario = load_scenario(scenario_path)
    if seed is not None:
        scenario.seed = seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = generate_synthetic_log(
        scenario.workloads, scenario.window_start, scenario.hours, scenario.seed
    )
    config = scenario_config(scenario, out_dir)
    if threshold is not None:
        config.threshold = threshold
    analytics.write_request_log(records, config.log_path)

    backend = SimulatedBackend(CostModelConfig.from_file(config.cost_model_path))
    report = run_cycle(config, backend, auto_approve=True)

    checks = diff_expected(report, scenario.expected)
    ok = all(check["ok"] for check in checks)
    (out_dir / "replay_diff.json").write_text(
        json.dumps({"ok": ok, "checks": checks}, sort_keys=True, indent=2) + "\n"
    )
    return ReplayResult(report=report, checks=checks, ok=ok)


def diff_expected(report: dict, expected: dict) -> list[dict]:
    """Compare a cycle report against a scenario's expected block."""
    checks: list[dict] = []

    for item in expected.get("values", []):
        name = item["name"]
        want = float(item["value"])
        actual = _extract(report, name)
        if actual is None:
            checks.append({"name": name, "expected": want, "actual": None, "ok": False})
            continue
        ok = math.isclose(
            actual, want,
            rel_tol=float(item.get("rel_tol", 0.0)),
            abs_tol=float(item.get("abs_tol", 0.0)),
        )
        checks.append({"name": name, "expected": want, "actual": actual, "ok": ok})

    for key, path in (
        ("top_apps", ("top_apps",)),
        ("verdict", ("verdict",)),
        ("approval", ("approval",)),
        ("proposal_app", ("proposal", "app_id")),
        ("event_outcome", ("event", "outcome")),
    ):
        if key not in expected:
            continue
        actual = _dig(report, path)
        checks.append({
            "name": key,
            "expected": expected[key],
            "actual": actual,
            "ok": actual == expected[key],
        })
    return checks


def _dig(doc, path):
    for part in path:
        if not isinstance(doc, dict) or part not in doc:
            return None
        doc = doc[part]
    return doc


def _extract(report: dict, name: str) -> float | None:
    """Dotted quantity names used by scenario expectations."""
    if name.startswith("corrected_total."):
        return _summary_field(report, name.split(".", 1)[1], "corrected_time_total")
    if name.startswith("raw_total."):
        return _summary_field(report, name.split(".", 1)[1], "raw_time_total")
    if name.startswith("measurements."):
        app = name.split(".", 1)[1]
        search = (report.get("searches") or {}).get(app)
        return None if search is None else float(search["measurements"])
    if name.startswith("best_time."):
        app = name.split(".", 1)[1]
        search = (report.get("searches") or {}).get(app)
        if search is None:
            return None
        for pattern in search["patterns"]:
            if pattern["chosen"]:
                return float(pattern["measured_time"])
        return None
    if name == "current_effect":
        effects = report.get("effects")
        return None if not effects else float(effects["current"]["effect"])
    if name == "best_candidate_effect":
        proposal = report.get("proposal")
        if proposal is None or proposal.get("best_effect") is None:
            return None
        return float(proposal["best_effect"])
    if name == "ratio":
        proposal = report.get("proposal")
        if proposal is None or isinstance(proposal.get("ratio"), str):
            return None
        return float(proposal["ratio"])
    if name == "downtime_seconds":
        event = report.get("event")
        return None if event is None else float(event["downtime"])
    raise ValueError(f"unknown expected-value name {name!r}")


def _summary_field(report: dict, app_id: str, field_name: str) -> float | None:
    for summary in report.get("summaries", []):
        if summary["app_id"] == app_id:
            return float(summary[field_name])
    return None
