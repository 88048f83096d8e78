"""Run scenarios, check their traces and report pattern agreement."""

from __future__ import annotations

import fnmatch
import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import UnknownScenario
from .propcheck import check, patterns_of
from .scenarios import SCENARIOS, Ctx, Scenario, build_config
from .worldmodel import ClockConfig, EventKind, Trace, World


@dataclass
class RunReport:
    scenario: str
    seed: int
    expected: list[str]
    patterns: list[str]
    violations: list[dict] = field(default_factory=list)
    alarms: int = 0
    passed: bool = False
    trace_hash: str = ""
    wall_time: float = 0.0
    trace_path: str | None = None
    error: str | None = None

    def to_record(self) -> dict:
        return dict(self.__dict__)


def list_scenarios(pattern: str = "*") -> list[Scenario]:
    return [s for sid, s in sorted(SCENARIOS.items()) if fnmatch.fnmatchcase(sid, pattern)]


def get(sid: str) -> Scenario:
    try:
        return SCENARIOS[sid]
    except KeyError:
        raise UnknownScenario(sid) from None


def trace_hash(trace: Trace) -> str:
    return hashlib.sha256(trace.to_ndjson().encode()).hexdigest()


def alarm_count(trace: Trace) -> int:
    """Number of distinct phones that raised a risk claim."""
    return len({e["phone"] for e in trace.of_kind(EventKind.P_CLAIM_AT_RISK)})


def execute(sid: str, seed: int = 42, config: dict[str, Any] | None = None) -> tuple[Scenario, Ctx]:
    """Run the script only; returns the context holding the world and the adversary."""
    sc = get(sid)
    merged = {**sc.config, **(config or {})}
    world = World(seed, build_config(ClockConfig, "clock", merged))
    ctx = Ctx(world, merged)
    sc.script(ctx)
    return sc, ctx


def run(sid: str, seed: int = 42, config: dict[str, Any] | None = None,
        trace_out: str | Path | None = None) -> RunReport:
    sc = get(sid)
    started = time.perf_counter()
    report = RunReport(sid, seed, sorted(sc.expect), [])
    try:
        _, ctx = execute(sid, seed, config)
        trace = ctx.world.trace
        violations = check(trace, sc.protocol)
        report.violations = [v.to_record() for v in violations]
        report.patterns = sorted(patterns_of(violations))
        report.alarms = alarm_count(trace)
        report.trace_hash = trace_hash(trace)
        if trace_out is not None:
            Path(trace_out).write_text(trace.to_ndjson())
            report.trace_path = str(trace_out)
        audit = ctx._adversary.audit() if ctx._adversary else []
        if audit:
            report.error = f"adversary emitted {len(audit)} underivable value(s)"
        report.passed = (
            not audit
            and set(report.patterns) == set(sc.expect)
            and (sc.expect_alarms is None or report.alarms == sc.expect_alarms)
        )
    except Exception as exc:  # a crashing script is a failed run, not a crashed suite
        report.error = f"{type(exc).__name__}: {exc}"
        report.passed = False
    report.wall_time = time.perf_counter() - started
    return report


def _run_one(args: tuple[str, int, dict | None]) -> RunReport:
    return run(*args)


def run_all(pattern: str = "*", seed: int = 42, config: dict[str, Any] | None = None,
            workers: int = 1) -> list[RunReport]:
    jobs = [(s.id, seed, config) for s in list_scenarios(pattern)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]
