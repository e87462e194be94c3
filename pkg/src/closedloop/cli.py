"""Command line: run suites, validate fixtures, replay traces, compare against the upload baseline.

Exit codes describe the harness, not the agent: 0 when a run completes
whatever its success rate, 1 when validation or replay finds a problem, and 2
for a bad configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import ConfigError, RunConfig, load_config
from .orchestrator import Mode, replay, run_suite
from .report import BASELINE_LABEL, Comparison
from .simenv import FixtureInvalid, check_reachability, load_fixture
from .trace import TraceFormatError, read_trace

log = logging.getLogger("closedloop")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    mode = Mode(args.mode) if getattr(args, "mode", None) else None
    return config.override(
        seed=args.seed,
        max_actions=args.max_actions,
        max_replans=args.max_replans,
        parallel=args.parallel,
        mode=mode,
    )


def _label(mode: Mode) -> str:
    return BASELINE_LABEL if mode is Mode.UPLOAD_BASELINE else mode.value


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_suite(config.episode_configs(), config.parallel, _label(config.mode))
    out = report.write(args.out)
    print(report.to_markdown(), end="")
    print(f"wrote {out}/report.json, report.md, report.csv and {report.episodes} traces")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    closed = run_suite(config.episode_configs(Mode.CLOSED_LOOP), config.parallel, _label(Mode.CLOSED_LOOP))
    baseline = run_suite(config.episode_configs(Mode.UPLOAD_BASELINE), config.parallel, BASELINE_LABEL)
    comparison = Comparison(closed, baseline)
    comparison.write(args.out)
    print(comparison.to_markdown(), end="")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        fixture = load_fixture(args.fixture)
    except FixtureInvalid as exc:
        print(f"invalid fixture: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"{fixture.name}: {len(fixture.screens)} screens, {len(fixture.tasks)} tasks")
    lengths = check_reachability(fixture)
    status = EXIT_OK
    for task_id, n in lengths.items():
        if n is None:
            print(f"  {task_id}: UNREACHABLE")
            if status == EXIT_OK:
                print(f"task {task_id!r} cannot reach its goal", file=sys.stderr)
            status = EXIT_FAIL
        else:
            print(f"  {task_id}: reachable in {n} actions")
    return status


def _transcript(events) -> None:
    for e in events:
        p = e.payload
        if e.kind == "execute":
            action = p["action"]["text"] if p["action"] else "(no action)"
            print(f"  step {p['step']}: {p['text']}  ->  {action}")
        elif e.kind == "verify":
            detail = f" ({p['failure_summary']})" if p["failure_summary"] else ""
            print(f"    verify: {p['verdict']}{detail}")
        elif e.kind == "replan":
            print(f"  replan: {p['outcome']}" + (f" (revision {p['revision']})" if "revision" in p else ""))
        elif e.kind == "episode_end":
            m = p["metrics"]
            print(f"  end: {p['stop_reason']}, success={p['success']}, MC={m['mc']}, MT={m['mt']}")


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        events = read_trace(args.trace)
    except FileNotFoundError:
        print(f"no such trace: {args.trace}", file=sys.stderr)
        return EXIT_FAIL
    except TraceFormatError as exc:
        print(f"unreadable trace: {exc}", file=sys.stderr)
        return EXIT_FAIL
    result = replay(events)
    if not result.ok:
        print(f"divergence at line {result.first_divergence}: {result.detail}", file=sys.stderr)
        return EXIT_FAIL
    _transcript(result.replayed)
    print(f"replay matches all {len(events)} recorded events")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="closedloop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def suite_flags(p: argparse.ArgumentParser, mode: bool) -> None:
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--parallel", type=int, help="episodes run concurrently")
        p.add_argument("--seed", type=int, help="run every task with this one seed")
        p.add_argument("--max-actions", type=int, help="action cap per episode")
        p.add_argument("--max-replans", type=int, help="replan cap per episode")
        if mode:
            p.add_argument("--mode", choices=[m.value for m in Mode])

    run = sub.add_parser("run", help="run a suite and write reports and traces")
    suite_flags(run, mode=True)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="closed loop against the emulated upload baseline")
    suite_flags(cmp_, mode=False)
    cmp_.set_defaults(func=cmd_compare)

    val = sub.add_parser("validate", help="check a fixture and the reachability of its tasks")
    val.add_argument("fixture")
    val.set_defaults(func=cmd_validate)

    rep = sub.add_parser("replay", help="re-run a trace on its recorded completions")
    rep.add_argument("trace")
    rep.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    for flag in ("parallel", "max_actions"):
        value = getattr(args, flag, None)
        if value is not None and value < 1:
            print(f"config error: --{flag.replace('_', '-')} must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
    if getattr(args, "max_replans", None) is not None and args.max_replans < 0:
        print("config error: --max-replans must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
