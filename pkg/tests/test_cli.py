import json

import pytest

from fpga_reconf import analytics
from fpga_reconf.cli import EXIT_CYCLE, EXIT_DIFF, EXIT_OK, EXIT_USAGE, main
from fpga_reconf.scenario import generate_synthetic_log, load_scenario

from conftest import GOLDEN_COST_MODEL, GOLDEN_PROFILES, GOLDEN_SCENARIO


@pytest.fixture
def env(tmp_path):
    """Config file + generated request log wired to the bundled data."""

    def _make(**overrides):
        scenario = load_scenario(GOLDEN_SCENARIO)
        records = generate_synthetic_log(
            scenario.workloads, scenario.window_start, scenario.hours, scenario.seed
        )
        log = tmp_path / "requests.log"
        analytics.write_request_log(records, log)
        doc = {
            "log_path": str(log),
            "profiles_dir": str(GOLDEN_PROFILES),
            "cost_model_path": str(GOLDEN_COST_MODEL),
            "catalog_dir": str(tmp_path / "catalog"),
            "output_dir": str(tmp_path / "out"),
            "top_k": 2,
            "threshold": 2.0,
            "window_end": "2025-03-10T10:00:00+00:00",
            "approval_mode": "auto",
            "initial_pattern": {"app_id": "tdfir", "loop_ids": ["L02", "L04"]},
        }
        doc.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return path

    return _make


def test_replay_passes_against_golden_values(tmp_path, capsys):
    out = tmp_path / "replay-out"
    code = main(["replay", str(GOLDEN_SCENARIO), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert captured.out.count("PASS") == 16
    assert "FAIL" not in captured.out
    assert "replay matches golden values" in captured.out
    assert (out / "replay_diff.json").exists()


def test_replay_detects_divergence(write_scenario_variant, tmp_path, capsys):
    def mutate(doc):
        for item in doc["expected"]["values"]:
            if item["name"] == "ratio":
                item["value"] = 99.0

    path = write_scenario_variant(mutate)
    code = main(["replay", str(path), "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == EXIT_DIFF
    assert "FAIL ratio" in captured.out
    assert "diverged" in captured.err


def test_replay_seed_override_keeps_the_aggregates(tmp_path, capsys):
    code = main(["replay", str(GOLDEN_SCENARIO), "--out", str(tmp_path / "out"),
                 "--seed", "99"])
    assert code == EXIT_OK
    assert "replay matches golden values" in capsys.readouterr().out


def test_replay_threshold_override_flips_the_verdict(tmp_path, capsys):
    code = main(["replay", str(GOLDEN_SCENARIO), "--out", str(tmp_path / "out"),
                 "--threshold", "7.0"])
    captured = capsys.readouterr()
    assert code == EXIT_DIFF
    assert "FAIL verdict" in captured.out


def test_run_cycle_prints_the_report_and_persists(env, tmp_path, capsys):
    config = env()
    code = main(["run-cycle", "--config", str(config), "--auto-approve"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["verdict"] == "propose"
    assert report["approval"] == "approved"
    assert report["event"]["outcome"] == "success"
    assert (tmp_path / "out" / "cycle_report.json").exists()
    state = json.loads((tmp_path / "catalog" / "state.json").read_text())
    assert state["pattern_id"] == "mriq:L07+L12"


def test_run_cycle_dry_run_writes_nothing(env, tmp_path, capsys):
    config = env()
    code = main(["run-cycle", "--config", str(config), "--dry-run"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["dry_run"] is True
    assert not (tmp_path / "out").exists()
    assert not (tmp_path / "catalog").exists()


def test_run_cycle_threshold_flag_overrides_the_config(env, capsys):
    config = env()
    code = main(["run-cycle", "--config", str(config), "--threshold", "7.0"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["verdict"] == "no_action"
    assert report["proposal"]["diagnostic"] == "ratio below threshold"


def test_run_cycle_with_an_empty_log_is_ok(env, tmp_path, capsys):
    config = env()
    (tmp_path / "requests.log").write_text("")
    code = main(["run-cycle", "--config", str(config)])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["verdict"] == "no_action"
    assert report["diagnostic"] == "no traffic in request log"


def test_run_cycle_failure_exits_2(env, tmp_path, capsys):
    config = env(cost_model_path=str(tmp_path / "missing.json"))
    code = main(["run-cycle", "--config", str(config)])
    captured = capsys.readouterr()
    assert code == EXIT_CYCLE
    assert "cycle failed at backend" in captured.err


def test_usage_errors_exit_1(env, tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["run-cycle"])  # missing --config
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["run-cycle", "--config", str(tmp_path / "absent.json")])
    assert err.value.code == EXIT_USAGE
    capsys.readouterr()


def test_search_prints_and_persists_the_result(env, tmp_path, capsys):
    config = env()
    code = main(["search", "--config", str(config), "tdfir"])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["best"] == "tdfir:L02+L04"
    assert len(doc["patterns"]) == 4
    saved = list((tmp_path / "catalog" / "patterns").glob("tdfir-*.json"))
    assert len(saved) == 1


def test_search_dry_run_does_not_touch_the_catalog(env, tmp_path, capsys):
    config = env()
    code = main(["search", "--config", str(config), "mriq", "--dry-run"])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["best"] == "mriq:L07+L12"
    assert not (tmp_path / "catalog").exists()


def test_search_unknown_app_exits_1(env, capsys):
    code = main(["search", "--config", str(env()), "ghost"])
    assert code == EXIT_USAGE
    assert "no profile for app ghost" in capsys.readouterr().err


def test_search_with_no_traffic_exits_2(env, tmp_path, capsys):
    config = env()
    (tmp_path / "requests.log").write_text("")
    code = main(["search", "--config", str(config), "tdfir"])
    assert code == EXIT_CYCLE
    assert "no traffic" in capsys.readouterr().err


def test_approve_and_reject_write_answer_files(env, tmp_path, capsys):
    config = env()
    assert main(["approve", "--config", str(config), "abc123def456"]) == EXIT_OK
    assert main(["reject", "--config", str(config), "fedcba654321"]) == EXIT_OK
    answers = tmp_path / "catalog" / "answers"
    assert (answers / "abc123def456.answer").read_text().strip() == "ok"
    assert (answers / "fedcba654321.answer").read_text().strip() == "ng"
    out = capsys.readouterr().out
    assert "recorded ok for proposal abc123def456" in out
    assert "recorded ng for proposal fedcba654321" in out


def test_watch_runs_a_fixed_number_of_cycles(env, capsys):
    config = env()
    code = main(["watch", "--config", str(config), "--auto-approve",
                 "--cycles", "2", "--interval", "0"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "cycle 1: verdict=propose approval=approved" in out
    assert "cycle 2: verdict=no_action" in out


def test_analyze_prints_loads_and_histograms(env, capsys):
    code = main(["analyze", "--config", str(env())])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "top apps: mriq, tdfir" in out
    assert "tdfir: 300 req" in out
    assert "coeff 2.07" in out
    assert "mode=" in out
