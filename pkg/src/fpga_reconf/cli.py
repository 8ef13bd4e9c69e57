"""Command-line entry point.

Exit codes: 0 success or no_action, 1 usage/config error, 2 cycle
failure, 3 golden-diff failure on replay.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import timedelta
from pathlib import Path

from fpga_reconf import analytics, orchestrator, scenario
from fpga_reconf.errors import CycleError, OffloadError
from fpga_reconf.orchestrator import Catalog, OrchestratorConfig, render_report
from fpga_reconf.search import run_search

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CYCLE = 2
EXIT_DIFF = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for
    cycle failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fpga-reconf",
                     description="Request-driven FPGA offload reconfiguration")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="window analytics only: loads and histograms")
    _add_config(analyze)

    search = sub.add_parser("search", help="offload-pattern search for one app")
    _add_config(search)
    search.add_argument("app_id")
    search.add_argument("--dry-run", action="store_true", help="do not write to the catalog")

    cycle = sub.add_parser("run-cycle", help="one full analyze/search/decide/reconfigure cycle")
    _add_config(cycle)
    _add_cycle_flags(cycle)

    watch = sub.add_parser("watch", help="run cycles repeatedly")
    _add_config(watch)
    _add_cycle_flags(watch)
    watch.add_argument("--interval", type=float, default=60.0,
                       help="seconds between cycles (default 60)")
    watch.add_argument("--cycles", type=int, default=None,
                       help="stop after this many cycles (default: run until interrupted)")

    replay = sub.add_parser("replay", help="replay a scenario and diff against its golden values")
    replay.add_argument("scenario", type=Path)
    replay.add_argument("--out", type=Path, default=None,
                        help="output directory (default: <scenario>.out next to the file)")
    replay.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    replay.add_argument("--threshold", type=float, default=None,
                        help="override the decision threshold")

    approve = sub.add_parser("approve", help="answer ok to a pending proposal")
    _add_config(approve)
    approve.add_argument("proposal_id")

    reject = sub.add_parser("reject", help="answer ng to a pending proposal")
    _add_config(reject)
    reject.add_argument("proposal_id")

    return parser


def _add_config(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, required=True, help="orchestrator config file")


def _add_cycle_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--auto-approve", action="store_true",
                     help="answer ok without asking")
    sub.add_argument("--dry-run", action="store_true",
                     help="analyze and decide but change nothing")
    sub.add_argument("--threshold", type=float, default=None,
                     help="override the decision threshold")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except CycleError as exc:
        print(f"cycle failed at {exc.step}: {exc}", file=sys.stderr)
        return EXIT_CYCLE
    except (OffloadError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CYCLE


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "analyze":
        return _cmd_analyze(args)
    if args.command == "search":
        return _cmd_search(args)
    if args.command == "run-cycle":
        return _cmd_run_cycle(args)
    if args.command == "watch":
        return _cmd_watch(args)
    if args.command == "replay":
        return _cmd_replay(args)
    if args.command in ("approve", "reject"):
        return _cmd_answer(args)
    raise AssertionError(f"unhandled command {args.command}")


def _load_config(args: argparse.Namespace) -> OrchestratorConfig:
    try:
        return OrchestratorConfig.from_file(args.config)
    except ValueError as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from exc


def _cmd_analyze(args: argparse.Namespace) -> int:
    config = _load_config(args)
    profiles = orchestrator.load_profiles(config.profiles_dir)
    records, malformed = analytics.read_request_log(config.log_path, strict=config.strict_log)
    if not records:
        print("no traffic in request log")
        return EXIT_OK
    window_end = config.window_end or max(r.timestamp for r in records) + timedelta(microseconds=1)
    window = (window_end - timedelta(seconds=config.long_window_seconds), window_end)
    coefficients = {
        app_id: analytics.improvement_coefficient(profile)
        for app_id, profile in profiles.items()
    }
    summaries = analytics.summarize_window(records, window, coefficients)
    print(f"window {window[0].isoformat()} .. {window[1].isoformat()}"
          f" ({malformed} malformed lines skipped)")
    for s in summaries:
        print(f"  {s.app_id}: {s.request_count} req, raw {s.raw_time_total:.3f} s,"
              f" corrected {s.corrected_time_total:.3f} s"
              f" (coeff {s.improvement_coefficient:.2f})")
    top = analytics.top_k_apps(summaries, config.top_k)
    print("top apps: " + ", ".join(s.app_id for s in top))
    for s in top:
        histogram = analytics.build_histogram(records, s.app_id, window, config.bucket_width)
        buckets = ", ".join(f"{b}:{histogram.counts[b]}" for b in sorted(histogram.counts))
        print(f"  {s.app_id} sizes (width {histogram.bucket_width}):"
              f" {buckets} mode={histogram.mode_bucket}")
    return EXIT_OK


def _cmd_search(args: argparse.Namespace) -> int:
    config = _load_config(args)
    profiles = orchestrator.load_profiles(config.profiles_dir)
    if args.app_id not in profiles:
        print(f"no profile for app {args.app_id}", file=sys.stderr)
        return EXIT_USAGE
    records, _ = analytics.read_request_log(config.log_path, strict=config.strict_log)
    if not records:
        print("no traffic in request log", file=sys.stderr)
        return EXIT_CYCLE
    window_end = config.window_end or max(r.timestamp for r in records) + timedelta(microseconds=1)
    window = (window_end - timedelta(seconds=config.short_window_seconds), window_end)
    histogram = analytics.build_histogram(records, args.app_id, window, config.bucket_width)
    representative = analytics.select_representative(records, args.app_id, window, histogram)
    backend = orchestrator.build_backend(config)
    result = run_search(
        profiles[args.app_id], representative, backend,
        n_intensity=config.n_intensity,
        n_efficiency=config.n_efficiency,
        min_iterations=config.min_iterations,
        repeats=config.repeats,
    )
    doc = orchestrator.search_result_doc(result, representative)
    if not args.dry_run:
        Catalog(config.catalog_dir).save_search(result, representative)
    print(json.dumps(doc, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_run_cycle(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.threshold is not None:
        config.threshold = args.threshold
    report = orchestrator.run_cycle(
        config,
        auto_approve=args.auto_approve,
        dry_run=args.dry_run,
    )
    print(render_report(report), end="")
    return EXIT_OK


def _cmd_watch(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.threshold is not None:
        config.threshold = args.threshold
    ran = 0
    try:
        while args.cycles is None or ran < args.cycles:
            report = orchestrator.run_cycle(
                config,
                auto_approve=args.auto_approve,
                dry_run=args.dry_run,
            )
            ran += 1
            print(f"cycle {ran}: verdict={report['verdict']}"
                  f" approval={report.get('approval')}")
            if args.cycles is None or ran < args.cycles:
                time.sleep(args.interval)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    out_dir = args.out or args.scenario.with_suffix(".out")
    result = scenario.replay_scenario(
        args.scenario, out_dir, seed=args.seed, threshold=args.threshold
    )
    for check in result.checks:
        marker = "PASS" if check["ok"] else "FAIL"
        print(f"{marker} {check['name']}: expected {check['expected']},"
              f" got {check['actual']}")
    if not result.ok:
        print("replay diverged from the scenario's golden values", file=sys.stderr)
        return EXIT_DIFF
    print("replay matches golden values")
    return EXIT_OK


def _cmd_answer(args: argparse.Namespace) -> int:
    config = _load_config(args)
    catalog = Catalog(config.catalog_dir)
    catalog.answers_dir.mkdir(parents=True, exist_ok=True)
    answer = "ok" if args.command == "approve" else "ng"
    path = catalog.answers_dir / f"{args.proposal_id}.answer"
    path.write_text(answer + "\n")
    print(f"recorded {answer} for proposal {args.proposal_id}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
