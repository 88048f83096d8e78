"""Soundness and upload-authorisation checks over finished traces, and attack classification.

Soundness: every risk claim PClaimAtRisk(R, dayClose, instClose) needs a
phone I != R, a place both occupied during instClose, and a diagnosis
HAClaimInfected(I, dayContag, dayTest) with dayContag <= dayClose < dayTest
and the two diagnosis days at most 14 apart.  The condition letters are

* ``a`` some diagnosis exists,
* ``b`` the diagnosis interval spans at most 14 days,
* ``c`` shared place in the claimed epoch,
* ``d`` the claimed day lies inside the diagnosis interval,
* ``e`` the infected phone is not the claimant.

When no binding satisfies all of them, the violation reports the smallest
failing subset over all diagnoses (``{"a"}`` when there is none).  In DP3T
mode the upper bound of ``d`` is relaxed to dayClose <= dayTest.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .errors import UnclassifiedViolation
from .worldmodel import ADVERSARY, EventKind, Trace, TraceEvent, within_14_days

PATTERNS: tuple[str, ...] = (
    "A1", "A2", "A3", "A4",
    "B1", "B2", "B3",
    "C1", "C2",
    "X1", "X2", "X3", "X4", "X5", "X6", "X7",
    "Y1", "Y2", "Y3", "Y4", "Y5", "Y6", "Y7",
    "Z1", "Z2", "Z3", "Z4",
)

PROTOCOLS = ("robert", "dp3t", "cwa")


class Property(str, Enum):
    SOUNDNESS = "Soundness"
    UPLOAD_AUTH_GAEN = "UploadAuthGaen"
    UPLOAD_AUTH_ROBERT = "UploadAuthRobert"


@dataclass
class Violation:
    property: Property
    witness: TraceEvent
    failed_conditions: frozenset[str] = frozenset()
    pattern: str | None = None
    evidence: list[TraceEvent] = field(default_factory=list)
    binding: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "property": self.property.value,
            "witness_tick": self.witness.tick,
            "failed_conditions": sorted(self.failed_conditions),
            "pattern": self.pattern,
            "evidence_ticks": sorted({e.tick for e in self.evidence}),
        }


# -- soundness -------------------------------------------------------------------


def _failed_for(claim: TraceEvent, ha: TraceEvent, shared: bool, relaxed_upper: bool) -> frozenset[str]:
    r, dc = claim["phone"], claim["day_close"]
    i, db, dt = ha["phone"], ha["day_begin"], ha["day_end"]
    failed = set()
    if not within_14_days(db, dt):
        failed.add("b")
    if not shared:
        failed.add("c")
    upper_ok = dc <= dt if relaxed_upper else dc < dt
    if not (db <= dc and upper_ok):
        failed.add("d")
    if r == i:
        failed.add("e")
    return frozenset(failed)


def _minimal(sets: Iterable[frozenset[str]]) -> frozenset[str]:
    return min(sets, key=lambda s: (len(s), sorted(s)))


def check_soundness(trace: Trace, protocol: str) -> list[Violation]:
    trace.validate()
    places: dict[tuple[str, int], set[str]] = defaultdict(set)
    isat: dict[tuple[str, int], list[TraceEvent]] = defaultdict(list)
    for ev in trace.of_kind(EventKind.IS_AT):
        places[(ev["phone"], ev.epoch)].add(ev["place"])
        isat[(ev["phone"], ev.epoch)].append(ev)
    diagnoses = trace.of_kind(EventKind.HA_CLAIM_INFECTED)
    relaxed = protocol == "dp3t"
    out = []
    for claim in trace.of_kind(EventKind.P_CLAIM_AT_RISK):
        r, ec = claim["phone"], claim["epoch_close"]
        if not diagnoses:
            out.append(Violation(Property.SOUNDNESS, claim, frozenset({"a"}), evidence=list(isat[(r, ec)])))
            continue
        per_ha = []
        for ha in diagnoses:
            shared = bool(places[(r, ec)] & places[(ha["phone"], ec)])
            per_ha.append((_failed_for(claim, ha, shared, relaxed), ha))
        if any(not f for f, _ in per_ha):
            continue
        best = _minimal(f for f, _ in per_ha)
        evidence = [ha for f, ha in per_ha if f == best] + isat[(r, ec)]
        out.append(Violation(Property.SOUNDNESS, claim, best, evidence=evidence))
    return out


# -- upload authorisation --------------------------------------------------------


def _first_positive(trace: Trace) -> dict[str, int]:
    first: dict[str, int] = {}
    for ev in trace.of_kind(EventKind.TEST_POSITIVE):
        first.setdefault(ev["phone"], ev.tick)
    return first


def check_upload_auth(trace: Trace, protocol: str) -> list[Violation]:
    trace.validate()
    positive = _first_positive(trace)
    out = []
    if protocol == "robert":
        for ev in trace.of_kind(EventKind.UPLOAD_ACCEPTED):
            u = ev["uploader"]
            if ev["records"] > 0 and not positive.get(u, ev.tick + 1) < ev.tick:
                out.append(Violation(Property.UPLOAD_AUTH_ROBERT, ev, binding={"uploader": u}))
        return out
    created: dict[str, list[TraceEvent]] = defaultdict(list)
    for ev in trace.of_kind(EventKind.CREATE_KEY):
        created[ev["key"]].append(ev)
    for ev in trace.of_kind(EventKind.KEY_RELEASED):
        # only honestly generated keys are covered; every creator must be diagnosed
        for c in created.get(ev["key"], []):
            owner = c["phone"]
            if not positive.get(owner, ev.tick + 1) < ev.tick:
                out.append(Violation(Property.UPLOAD_AUTH_GAEN, ev, evidence=[c],
                                     binding={"owner": owner, "uploader": ev.get("uploader")}))
                break
    return out


# -- classification --------------------------------------------------------------


class _Facts:
    """Indexes over one trace used by the pattern predicates."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.corrupts = trace.of_kind(EventKind.CORRUPT)
        self.adv_writes = [e for e in trace.of_kind(EventKind.BLE_WR) if e["actor"] == ADVERSARY]
        self.adv_msgs = {e["msg"] for e in self.adv_writes}
        self.writes_by: dict[str, set[str]] = defaultdict(set)
        for e in trace.of_kind(EventKind.BLE_WR):
            self.writes_by[e["actor"]].add(e["msg"])
        self.positive = _first_positive(trace)
        self.owner = {e["key"]: e["phone"] for e in trace.of_kind(EventKind.CREATE_KEY)}
        self.released = defaultdict(list)
        for e in trace.of_kind(EventKind.KEY_RELEASED):
            self.released[e["key"]].append(e)
        self.uploads = trace.of_kind(EventKind.UPLOAD_ACCEPTED)

    def corrupt(self, label: str | None = None, target: str | None = None, **args) -> list[TraceEvent]:
        return [
            e for e in self.corrupts
            if (label is None or e["capability"] == label)
            and (target is None or e["target"] == target)
            and all(e.get(k) == v for k, v in args.items())
        ]

    def with_payload(self, value_digest: str) -> list[TraceEvent]:
        return [e for e in self.corrupts if value_digest in e["payload"]]


def _classify_robert_soundness(v: Violation, f: _Facts) -> tuple[str | None, list[TraceEvent]]:
    r = v.witness["phone"]
    if ev := f.corrupt("CorruptBSend", victim=r):
        return "X5", ev
    if (st := f.corrupt("CorruptBState")) and (fk := f.corrupt("CorruptBFederationKey")):
        return "X6", st + fk
    if ev := f.corrupt("CorruptPhoneKey", target=r):
        return "X7", ev
    if v.failed_conditions == {"e"}:
        return "X1", v.evidence
    if v.failed_conditions == {"d"}:
        return "X2", v.evidence
    relays = [e for e in f.adv_writes if e["msg"] in f.writes_by[r]]
    if relays:
        return "X3", relays
    if not f.adv_writes:
        for up in f.uploads:
            u = up["uploader"]
            if u in f.positive and f.corrupt(target=u):
                return "X4", [up] + f.corrupt(target=u)
    return None, []


def _classify_gaen_soundness(v: Violation, f: _Facts, protocol: str) -> tuple[str | None, list[TraceEvent]]:
    key, msg = v.witness.get("key"), v.witness.get("msg")
    released = f.released.get(key, [])
    owner = f.owner.get(key)
    adv = [e for e in f.adv_writes if e["msg"] == msg]
    owner_corrupt = f.corrupt(target=owner) if owner else []
    state = f.corrupt("CorruptBState")
    if protocol == "dp3t":
        if state and not released and adv:
            return "Y7", state + adv
        if state and not released:
            return "Y6", state
        if owner is None and released and (ha := f.corrupt("CorruptHAState")):
            return "Y4", ha + released
        if owner is not None and owner not in f.positive and adv:
            return "Y5", adv + owner_corrupt
        if owner in f.positive and adv and (pk := f.corrupt("CorruptPhoneKey", target=owner)):
            return "Y2", pk + adv
        if adv:
            return "Y3", adv
        if owner in f.positive and owner_corrupt and v.failed_conditions <= {"d"}:
            return "Y1", owner_corrupt + released
        return None, []
    if state and not released:
        return "Z4", state
    if owner is None and released:
        return "Z2", released
    if owner is not None and owner not in f.positive and owner_corrupt:
        return "Z3", owner_corrupt + adv
    if adv:
        return "Z1", adv
    return None, []


_TOKEN_SOURCES = (("CorruptPhoneReceive", "A1"), ("CorruptQRList", "A2"), ("CorruptBReceive", "A3"))


def _classify_robert_upload(v: Violation, f: _Facts) -> tuple[str | None, list[TraceEvent]]:
    reveals = [e for e in f.with_payload(v.witness["token"]) if e.tick < v.witness.tick]
    for label, pattern in _TOKEN_SOURCES:
        hits = [e for e in reveals if e["capability"] == label]
        if hits:
            return pattern, hits
    if state := f.corrupt("CorruptBState"):
        return "A4", state
    return None, []


def _classify_gaen_upload(v: Violation, f: _Facts, protocol: str) -> tuple[str | None, list[TraceEvent]]:
    owner, uploader = v.binding["owner"], v.binding["uploader"]
    if protocol == "dp3t":
        if uploader == owner:
            return "B2", f.corrupt("CorruptHASend") + f.corrupt("CorruptHAState")
        if uploader in f.positive:
            return "B3", f.corrupt(target=uploader)
        return "B1", f.corrupt(target=owner)
    if uploader == owner:
        return "C2", f.corrupt(target=owner)
    return "C1", f.corrupt(target=owner)


def classify(violation: Violation, trace: Trace, protocol: str, facts: _Facts | None = None) -> str:
    f = facts or _Facts(trace)
    if violation.property is Property.SOUNDNESS:
        if protocol == "robert":
            pattern, ev = _classify_robert_soundness(violation, f)
        else:
            pattern, ev = _classify_gaen_soundness(violation, f, protocol)
    elif violation.property is Property.UPLOAD_AUTH_ROBERT:
        pattern, ev = _classify_robert_upload(violation, f)
    else:
        pattern, ev = _classify_gaen_upload(violation, f, protocol)
    if pattern is None:
        raise UnclassifiedViolation(f"{violation.property.value} at tick {violation.witness.tick}")
    violation.pattern = pattern
    seen = {e.tick for e in violation.evidence}
    violation.evidence.extend(e for e in ev if e.tick not in seen)
    return pattern


def check(trace: Trace, protocol: str, classify_all: bool = True) -> list[Violation]:
    """Both properties, every violation classified."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol}")
    violations = check_soundness(trace, protocol) + check_upload_auth(trace, protocol)
    if classify_all:
        facts = _Facts(trace)
        for v in violations:
            classify(v, trace, protocol, facts)
    return violations


def patterns_of(violations: Iterable[Violation]) -> set[str]:
    return {v.pattern for v in violations if v.pattern}

