"""Command line: ``ens-lab list | run | suite``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import runner
from .errors import UnknownScenario
from .scenarios import parse_config_value


def _config(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"--config expects KEY=VALUE, got {pair!r}")
        try:
            out[key] = parse_config_value(key, value)
        except (KeyError, ValueError) as exc:
            raise SystemExit(f"bad --config {pair!r}: {exc}")
    return out


def _line(r: runner.RunReport) -> str:
    status = "PASS" if r.passed else "FAIL"
    got = ",".join(r.patterns) or "-"
    want = ",".join(r.expected) or "-"
    tail = f"  {r.error}" if r.error else ""
    return f"{status}  {r.scenario:<24} expect={want:<8} got={got:<8} alarms={r.alarms} {r.wall_time * 1000:6.0f} ms{tail}"


def cmd_list(args) -> int:
    for s in runner.list_scenarios(args.filter):
        want = ",".join(sorted(s.expect)) or "-"
        print(f"{s.id:<24} {s.protocol:<7} {want:<8} {s.description}")
    return 0


def cmd_run(args) -> int:
    try:
        report = runner.run(args.scenario, args.seed, _config(args.config), args.trace_out)
    except UnknownScenario as exc:
        print(f"unknown scenario: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(report.to_record(), indent=2))
    else:
        print(_line(report))
        for v in report.violations:
            print(f"  {v['property']:<16} tick={v['witness_tick']:<8} failed={','.join(v['failed_conditions']) or '-'}"
                  f"  pattern={v['pattern']}")
    return 0 if report.passed else 1


def cmd_suite(args) -> int:
    reports = runner.run_all(args.filter, args.seed, _config(args.config), args.workers)
    if args.trace_dir:
        out = Path(args.trace_dir)
        out.mkdir(parents=True, exist_ok=True)
        # re-run serially for the files; runs are deterministic so hashes agree
        for r in reports:
            path = out / f"{r.scenario}.ndjson"
            again = runner.run(r.scenario, args.seed, _config(args.config), path)
            r.trace_path = again.trace_path
    for r in reports:
        print(_line(r))
    passed = sum(r.passed for r in reports)
    print(f"{passed}/{len(reports)} scenarios met their expectation")
    if args.report:
        Path(args.report).write_text(json.dumps([r.to_record() for r in reports], indent=2))
    return 0 if passed == len(reports) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ens-lab", description="Exposure-notification attack lab")
    sub = p.add_subparsers(dest="command", required=True)

    ls = sub.add_parser("list", help="list registered scenarios")
    ls.add_argument("--filter", default="*", help="glob over scenario ids")
    ls.set_defaults(func=cmd_list)

    rn = sub.add_parser("run", help="run one scenario")
    rn.add_argument("scenario")
    rn.add_argument("--seed", type=int, default=42)
    rn.add_argument("--trace-out", metavar="PATH")
    rn.add_argument("--config", action="append", default=[], metavar="KEY=VALUE")
    rn.add_argument("--json", action="store_true", help="print the full report as JSON")
    rn.set_defaults(func=cmd_run)

    st = sub.add_parser("suite", help="run every scenario matching a filter")
    st.add_argument("--filter", default="*", help="glob over scenario ids")
    st.add_argument("--report", metavar="PATH", help="write the JSON suite report here")
    st.add_argument("--seed", type=int, default=42)
    st.add_argument("--workers", type=int, default=1)
    st.add_argument("--trace-dir", metavar="DIR", help="write one trace file per scenario")
    st.add_argument("--config", action="append", default=[], metavar="KEY=VALUE")
    st.set_defaults(func=cmd_suite)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
