"""End-to-end acceptance checks.

One test per acceptance criterion, each printing a single PASS line with
the observed numbers when it holds. Tolerances are asserted inline next
to the values they guard.
"""

import json
import math
import random
import time
from collections import Counter
from datetime import datetime, timedelta, timezone

import pytest

from fpga_reconf import analytics, cli
from fpga_reconf.analytics import RequestRecord, build_histogram, top_k_apps
from fpga_reconf.backend import (
    ArtifactHandle,
    BackendCapabilities,
    CostModelConfig,
    DataRef,
    SimulatedBackend,
    pattern_key,
)
from fpga_reconf.decision import effect_of
from fpga_reconf.errors import CompileError, MeasurementError, SearchError
from fpga_reconf.executor import FpgaState, ReconfigExecutor, RequestRouter
from fpga_reconf.loops import AppCodeProfile, LoopDescriptor, top_n_by_intensity
from fpga_reconf.orchestrator import run_cycle
from fpga_reconf.scenario import (
    generate_synthetic_log,
    largest_remainder_split,
    load_scenario,
    replay_scenario,
    scenario_config,
)
from fpga_reconf.search import OffloadPattern, narrow_by_efficiency, run_search

from conftest import GOLDEN_COST_MODEL, GOLDEN_SCENARIO


@pytest.fixture(scope="module")
def golden_replay(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden-replay")
    started = time.perf_counter()
    result = replay_scenario(GOLDEN_SCENARIO, out)
    wall = time.perf_counter() - started
    return result, wall


def summary_of(report, app_id):
    return next(s for s in report["summaries"] if s["app_id"] == app_id)


def test_criterion_1_load_totals_and_ranking(golden_replay):
    result, wall = golden_replay
    assert wall < 5.0, f"replay took {wall:.2f}s"
    report = result.report
    tdfir = summary_of(report, "tdfir")["corrected_time_total"]
    mriq = summary_of(report, "mriq")["corrected_time_total"]
    assert math.isclose(tdfir, 79.7, rel_tol=0.01)
    assert math.isclose(mriq, 274.0, rel_tol=0.01)
    assert report["top_apps"] == ["mriq", "tdfir"]
    print(f"PASS criterion 1: corrected totals {tdfir:.2f}/{mriq:.1f} s, "
          f"top-2 {report['top_apps']}, replay in {wall:.2f}s")


def test_criterion_2_improvement_effects(golden_replay):
    result, _ = golden_replay
    effects = result.report["effects"]
    current = effects["current"]["effect"]
    candidate = next(e for e in effects["candidates"] if e["app_id"] == "mriq")["effect"]
    assert current == pytest.approx(41.1, abs=0.1)
    assert 251.5 <= candidate <= 252.5

    assert effect_of(0.266, 0.129, 300) == pytest.approx(41.1, abs=0.1)
    assert 251.5 <= effect_of(27.4, 2.23, 10) <= 252.5
    print(f"PASS criterion 2: current effect {current:.1f} s/h, "
          f"candidate effect {candidate:.1f} s/h")


def test_criterion_3_decision_gate(golden_replay, tmp_path):
    result, _ = golden_replay
    proposal = result.report["proposal"]
    assert proposal["ratio"] == pytest.approx(6.1, abs=0.1)
    assert result.report["verdict"] == "propose"
    assert proposal["app_id"] == "mriq"

    strict = replay_scenario(GOLDEN_SCENARIO, tmp_path / "strict", threshold=7.0)
    assert strict.report["verdict"] == "no_action"
    assert strict.report["proposal"]["diagnostic"] == "ratio below threshold"
    print(f"PASS criterion 3: ratio {proposal['ratio']:.2f} proposes mriq at "
          f"threshold 2.0, holds at 7.0")


def test_criterion_4_reconfiguration_event(golden_replay, write_scenario_variant, tmp_path):
    result, _ = golden_replay
    event = result.report["event"]
    assert event["outcome"] == "success"
    assert event["compile_done"] - event["compile_started"] == pytest.approx(21600.0)
    assert event["compile_done"] <= event["stopped_at"]
    assert event["downtime"] == pytest.approx(1.0, rel=0.1)

    def mutate(doc):
        doc["config"]["reconfig_mode"] = "dynamic"
        doc["expected"] = {}

    dynamic = replay_scenario(write_scenario_variant(mutate), tmp_path / "dyn")
    assert dynamic.report["event"]["downtime"] < 0.01

    backend = SimulatedBackend(CostModelConfig.from_file(GOLDEN_COST_MODEL))
    state = FpgaState()
    router = RequestRouter(state, backend)
    executor = ReconfigExecutor(state, backend, router=router)
    executor.bootstrap(OffloadPattern("tdfir:L02+L04", "tdfir", frozenset(["L02", "L04"])))
    swap = executor.execute_static_reconfig(
        OffloadPattern("mriq:L07+L12", "mriq", frozenset(["L07", "L12"]))
    )
    assert swap.outcome == "success"
    served = router.route(DataRef("post-swap", "mriq", 1048576))
    assert served == pytest.approx(2.23)
    assert router.served[-1][1] == "fpga"
    print(f"PASS criterion 4: compile-before-stop, downtime {event['downtime']:.3f} s "
          f"static / {dynamic.report['event']['downtime'] * 1000:.1f} ms dynamic, "
          f"post-swap mriq served on the device")


class TableBackend:
    """Minimal in-memory backend with unrestricted per-loop usages."""

    def __init__(self, usages, fpga_times, cpu_time=50.0):
        self.usages = usages
        self.fpga_times = fpga_times
        self.cpu_time = cpu_time
        self.measures = 0
        self.compiles = 0

    @property
    def capabilities(self):
        return BackendCapabilities(concurrency_safe=True, compile_duration_model=10.0)

    def now(self):
        return 0.0

    def resource_report(self, pattern):
        return sum(self.usages[loop_id] for loop_id in pattern.loop_ids)

    def compile(self, pattern):
        if self.resource_report(pattern) > 1.0:
            raise CompileError(f"{pattern.pattern_id} exceeds device capacity")
        self.compiles += 1
        return ArtifactHandle(
            handle_id=self.compiles,
            app_id=pattern.app_id,
            pattern_id=pattern.pattern_id,
            loop_ids=frozenset(pattern.loop_ids),
            compile_seconds=10.0,
            completed_at=0.0,
        )

    def measure(self, handle, data):
        key = pattern_key(handle.loop_ids)
        if key not in self.fpga_times:
            raise MeasurementError(f"no time for {key}")
        self.measures += 1
        return self.fpga_times[key]

    def measure_cpu(self, app_id, data):
        return self.cpu_time

    def activate(self, handle, mode):
        return None


def random_app(rng, n_loops, usage_pool):
    loops = tuple(
        LoopDescriptor(f"L{i:02d}", rng.randrange(0, 10000), rng.randrange(1, 500))
        for i in range(n_loops)
    )
    profile = AppCodeProfile(app_id="app", loops=loops)
    usages = {loop.loop_id: rng.choice(usage_pool) for loop in loops}
    fpga_times = {}
    for i, a in enumerate(loops):
        fpga_times[a.loop_id] = rng.uniform(1.0, 40.0)
        for b in loops[i + 1:]:
            fpga_times[pattern_key([a.loop_id, b.loop_id])] = rng.uniform(1.0, 40.0)
    return profile, usages, fpga_times


def expected_measurement_count(profile, usages, fpga_times):
    ranked = sorted(profile.loops, key=lambda l: (-l.intensity, l.loop_id))[:4]
    feasible = [l for l in ranked if usages[l.loop_id] <= 1.0]
    feasible.sort(key=lambda l: (-(l.intensity / usages[l.loop_id]), l.loop_id))
    picked = feasible[:3]
    count = len(picked)
    if count >= 2:
        fastest = sorted(picked, key=lambda l: (fpga_times[l.loop_id], l.loop_id))[:2]
        if usages[fastest[0].loop_id] + usages[fastest[1].loop_id] <= 1.0:
            count += 1
    return count


def test_criterion_5_search_measurement_budget():
    rng = random.Random(2024)
    datum = DataRef("d", "app", 64)
    combos_won = 0
    for _ in range(200):
        profile, usages, fpga_times = random_app(
            rng, rng.randrange(1, 13), usage_pool=[0.1, 0.2, 0.35, 0.5, 0.8, 1.2]
        )
        backend = TableBackend(usages, fpga_times)
        expected = expected_measurement_count(profile, usages, fpga_times)
        if expected == 0:
            with pytest.raises(SearchError):
                run_search(profile, datum, backend)
            continue
        result = run_search(profile, datum, backend)
        assert len(result.all_measured) == expected
        assert backend.measures == expected * 3
        best = min(result.all_measured, key=lambda p: (p.measured_time, p.pattern_id))
        assert result.best == best
        if len(result.best.loop_ids) == 2:
            combos_won += 1
    assert combos_won > 0

    # every loop over capacity: nothing can be measured
    profile, usages, fpga_times = random_app(rng, 5, usage_pool=[1.2])
    with pytest.raises(SearchError):
        run_search(profile, datum, TableBackend(usages, fpga_times))

    # monotone model: the combination always beats its member singles
    for _ in range(50):
        profile, usages, fpga_times = random_app(
            rng, rng.randrange(2, 13), usage_pool=[0.1, 0.2, 0.3, 0.45]
        )
        for key in list(fpga_times):
            if "+" in key:
                members = key.split("+")
                fpga_times[key] = 0.5 * min(fpga_times[m] for m in members)
        result = run_search(profile, datum, TableBackend(usages, fpga_times))
        assert len(result.best.loop_ids) == 2
    print("PASS criterion 5: measurement budget exact on 200 random apps, "
          f"combination won {combos_won} times and always under a monotone model")


def test_criterion_6_oracle_equivalence():
    rng = random.Random(60)

    for _ in range(500):
        loops = tuple(
            LoopDescriptor(f"L{i:02d}", rng.randrange(0, 50), rng.randrange(1, 20),
                           iteration_count=rng.randrange(0, 4))
            for i in range(rng.randrange(1, 16))
        )
        profile = AppCodeProfile(app_id="app", loops=loops)
        n = rng.randrange(1, 6)
        min_iter = rng.randrange(0, 3)
        pool = [l for l in loops if l.iteration_count >= min_iter]
        picked = []
        while pool and len(picked) < n:
            best = pool[0]
            for l in pool[1:]:
                if l.intensity > best.intensity or (
                    l.intensity == best.intensity and l.loop_id < best.loop_id
                ):
                    best = l
            picked.append(best)
            pool.remove(best)
        assert top_n_by_intensity(profile, n, min_iter) == picked

    for _ in range(500):
        candidates = [
            (LoopDescriptor(f"L{i:02d}", rng.randrange(0, 40), rng.randrange(1, 20)),
             rng.choice([0.1, 0.3, 0.6, 0.9, 1.1]))
            for i in range(rng.randrange(1, 10))
        ]
        n = rng.randrange(1, 5)
        pool = [(l, u) for l, u in candidates if u <= 1.0]
        picked = []
        while pool and len(picked) < n:
            best = pool[0]
            for item in pool[1:]:
                if item[0].intensity / item[1] > best[0].intensity / best[1] or (
                    item[0].intensity / item[1] == best[0].intensity / best[1]
                    and item[0].loop_id < best[0].loop_id
                ):
                    best = item
            picked.append(best)
            pool.remove(best)
        assert narrow_by_efficiency(candidates, n) == picked

    from fpga_reconf.analytics import AppLoadSummary

    for _ in range(500):
        summaries = [
            AppLoadSummary(f"a{i}", 1, 0.0, 1.0, rng.choice([2.0, 4.0, 8.0, 16.0]))
            for i in range(rng.randrange(1, 9))
        ]
        k = rng.randrange(1, 5)
        pool = list(summaries)
        picked = []
        while pool and len(picked) < k:
            best = pool[0]
            for s in pool[1:]:
                if s.corrected_time_total > best.corrected_time_total or (
                    s.corrected_time_total == best.corrected_time_total
                    and s.app_id < best.app_id
                ):
                    best = s
            picked.append(best)
            pool.remove(best)
        assert top_k_apps(summaries, k) == picked

    t0 = datetime(2025, 1, 1, tzinfo=timezone.utc)
    window = (t0, t0 + timedelta(hours=1))
    for _ in range(500):
        width = rng.choice([1, 64, 1000])
        records = [
            RequestRecord(t0 + timedelta(seconds=rng.randrange(3600)), "app",
                          rng.randrange(0, 5000), 0.1, "cpu", f"r{i}")
            for i in range(rng.randrange(1, 25))
        ]
        hist = build_histogram(records, "app", window, width)
        oracle = Counter(r.data_size // width for r in records)
        assert hist.counts == dict(oracle)
        top = max(oracle.values())
        assert hist.mode_bucket == min(b for b, c in oracle.items() if c == top)

    from fractions import Fraction

    for _ in range(500):
        weights = [rng.randrange(0, 10) for _ in range(rng.randrange(1, 9))]
        if all(w == 0 for w in weights):
            weights[0] = 1
        total = rng.randrange(0, 400)
        shares = largest_remainder_split(total, weights)
        scale = sum(weights)
        quotas = [Fraction(total * w, scale) for w in weights]
        floors = [q.numerator // q.denominator for q in quotas]
        remainders = [q - f for q, f in zip(quotas, floors)]
        assert sum(shares) == total
        assert all(s in (f, f + 1) for s, f in zip(shares, floors))
        ambiguous = any(
            weights[i] != weights[j] and remainders[i] == remainders[j] != 0
            for i in range(len(weights))
            for j in range(i + 1, len(weights))
        )
        if not ambiguous:
            expected = list(floors)
            order = sorted(range(len(weights)), key=lambda i: (-remainders[i], i))
            for i in order[: total - sum(floors)]:
                expected[i] += 1
            assert shares == expected
    print("PASS criterion 6: five selection functions match brute-force oracles "
          "on 500 random instances each")


def test_criterion_7_determinism_and_robustness(tmp_path, capsys):
    one = replay_scenario(GOLDEN_SCENARIO, tmp_path / "one")
    two = replay_scenario(GOLDEN_SCENARIO, tmp_path / "two")
    assert one.ok and two.ok
    first = (tmp_path / "one" / "cycle_report.json").read_bytes()
    second = (tmp_path / "two" / "cycle_report.json").read_bytes()
    assert first == second

    scenario = load_scenario(GOLDEN_SCENARIO)
    out = tmp_path / "robust"
    out.mkdir()
    config = scenario_config(scenario, out)
    records = generate_synthetic_log(
        scenario.workloads, scenario.window_start, scenario.hours, scenario.seed
    )
    analytics.write_request_log(records, config.log_path)
    with config.log_path.open("a") as fh:
        fh.write("not json at all\n")
        fh.write('{"timestamp": "2025-03-10T09:30:00Z"}\n')
    report = run_cycle(config, auto_approve=True)
    assert report["log"]["malformed"] == 2
    assert report["verdict"] == "propose"

    config.log_path.write_text("")
    config_doc = {
        "log_path": str(config.log_path),
        "profiles_dir": str(config.profiles_dir),
        "cost_model_path": str(config.cost_model_path),
        "catalog_dir": str(out / "catalog"),
        "output_dir": str(out),
    }
    config_path = out / "config.json"
    config_path.write_text(json.dumps(config_doc))
    code = cli.main(["run-cycle", "--config", str(config_path)])
    cli_report = json.loads(capsys.readouterr().out)
    assert code == 0
    assert cli_report["verdict"] == "no_action"
    print("PASS criterion 7: byte-identical replays, malformed lines counted, "
          "empty log exits 0 with no_action")
