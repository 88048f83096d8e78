import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enslab import runner
from enslab.errors import TraceSchemaError, UnclassifiedViolation
from enslab.propcheck import (
    PATTERNS,
    Property,
    Violation,
    check,
    check_soundness,
    check_upload_auth,
    classify,
)
from enslab.worldmodel import EventKind, Trace, TraceEvent
from tracegen import PHONES, SPACING, ev, oracle, random_trace, verdicts



# -- examples ------------------------------------------------------------------------


def test_empty_trace_has_no_violations():
    for protocol in ("robert", "dp3t", "cwa"):
        assert check(Trace(), protocol) == []


def test_unknown_protocol():
    with pytest.raises(ValueError):
        check(Trace(), "tcn")


def test_malformed_trace_rejected():
    with pytest.raises(TraceSchemaError):
        check_soundness(Trace([ev(0, EventKind.P_CLAIM_AT_RISK, phone="R")]), "cwa")


def test_claim_without_diagnosis_fails_a():
    t = Trace([ev(0, EventKind.P_CLAIM_AT_RISK, phone="R", day_close=0, epoch_close=0)])
    [v] = check_soundness(t, "cwa")
    assert v.failed_conditions == {"a"}


def _justified(day_end: int) -> list[TraceEvent]:
    return [
        ev(0, EventKind.IS_AT, phone="R", place="a"),
        ev(4, EventKind.IS_AT, phone="I", place="a"),
        ev(40, EventKind.HA_CLAIM_INFECTED, phone="I", day_begin=0, day_end=day_end),
        ev(44, EventKind.P_CLAIM_AT_RISK, phone="R", day_close=0, epoch_close=0),
    ]


def test_justified_claim_is_sound():
    assert check_soundness(Trace(_justified(1)), "robert") == []


def test_claim_on_test_day_only_sound_under_dp3t():
    t = Trace(_justified(0))
    assert check_soundness(t, "dp3t") == []
    [v] = check_soundness(t, "cwa")
    assert v.failed_conditions == {"d"}


def test_failed_set_is_minimal_over_diagnoses():
    events = _justified(1)
    events[2] = ev(40, EventKind.HA_CLAIM_INFECTED, phone="R", day_begin=0, day_end=1)
    events.append(ev(48, EventKind.HA_CLAIM_INFECTED, phone="Q", day_begin=0, day_end=30))
    [v] = check_soundness(Trace(events), "cwa")
    # self-diagnosis fails only e; the Q diagnosis fails b and c
    assert v.failed_conditions == {"e"}


def test_upload_auth_robert_needs_earlier_positive():
    t = Trace([
        ev(0, EventKind.UPLOAD_ACCEPTED, backend="B", uploader="P", token="t", records=1),
        ev(4, EventKind.TEST_POSITIVE, phone="P", day=0),
        ev(8, EventKind.UPLOAD_ACCEPTED, backend="B", uploader="P", token="t", records=1),
        ev(12, EventKind.UPLOAD_ACCEPTED, backend="B", uploader="Q", token="t", records=0),
    ])
    [v] = check_upload_auth(t, "robert")
    assert v.witness.tick == 0 and v.property is Property.UPLOAD_AUTH_ROBERT


def test_upload_auth_gaen_skips_forged_keys():
    t = Trace([
        ev(0, EventKind.CREATE_KEY, phone="V", day=0, key="k"),
        ev(4, EventKind.KEY_RELEASED, backend="B", key="k", day=0, uploader="M"),
        ev(8, EventKind.KEY_RELEASED, backend="B", key="forged", day=0, uploader="M"),
    ])
    [v] = check_upload_auth(t, "cwa")
    assert v.binding == {"owner": "V", "uploader": "M"}


def test_honest_and_attack_traces():
    _, ctx = runner.execute("honest.robert")
    trace = ctx.world.trace
    assert len(trace.of_kind(EventKind.P_CLAIM_AT_RISK)) == 1
    assert check(trace, "robert") == []
    _, ctx = runner.execute("robert.X3")
    [v] = check(ctx.world.trace, "robert")
    assert v.failed_conditions == {"c"} and v.pattern == "X3"
    _, ctx = runner.execute("cwa.C1")
    [v] = check(ctx.world.trace, "cwa")
    assert v.property is Property.UPLOAD_AUTH_GAEN and v.pattern == "C1"
    _, ctx = runner.execute("robert.A1")
    [v] = check(ctx.world.trace, "robert")
    assert v.property is Property.UPLOAD_AUTH_ROBERT


@pytest.mark.parametrize("sid,pattern", [("robert.X2", "X2"), ("dp3t.Y5", "Y5"), ("cwa.Z4", "Z4")])
def test_classification_examples(sid, pattern):
    _, ctx = runner.execute(sid)
    found = {v.pattern for v in check(ctx.world.trace, ctx._adversary.protocol)}
    assert pattern in found


def test_unclassifiable_violation_raises():
    t = Trace([ev(0, EventKind.P_CLAIM_AT_RISK, phone="R", day_close=0, epoch_close=0, key="k", msg="m")])
    [v] = check_soundness(t, "cwa")
    with pytest.raises(UnclassifiedViolation):
        classify(v, t, "cwa")


def test_violation_record():
    t = Trace([ev(0, EventKind.P_CLAIM_AT_RISK, phone="R", day_close=0, epoch_close=0)])
    [v] = check(t, "robert", classify_all=False)
    rec = v.to_record()
    assert rec["property"] == "Soundness" and rec["failed_conditions"] == ["a"] and rec["pattern"] is None
    assert isinstance(v, Violation) and len(PATTERNS) == 27


# -- oracle equivalence -----------------------------------------------------------------


@pytest.mark.parametrize("protocol", ["robert", "dp3t", "cwa"])
def test_matches_naive_oracle_on_100_random_traces(protocol):
    rng = random.Random(2024)
    nonempty = 0
    for _ in range(100):
        trace = random_trace(rng, rng.randint(0, 50))
        got, want = verdicts(trace, protocol), oracle(trace, protocol)
        assert got == want
        nonempty += bool(want)
    assert nonempty > 20  # the generator actually exercises violations


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False), st.integers(0, 50), st.sampled_from(["robert", "dp3t", "cwa"]))
def test_matches_oracle_hypothesis(rnd, n, protocol):
    trace = random_trace(rnd, n)
    assert verdicts(trace, protocol) == oracle(trace, protocol)


# -- metamorphic -----------------------------------------------------------------------


def _insert(trace: Trace, *new: TraceEvent) -> Trace:
    return Trace(sorted([*trace, *new], key=lambda e: e.tick))


def test_adding_a_diagnosis_never_adds_soundness_violations():
    rng = random.Random(5)
    for _ in range(100):
        trace = random_trace(rng, rng.randint(1, 40))
        slot = rng.randrange(len(trace)) * SPACING + 1
        extra = ev(slot, EventKind.HA_CLAIM_INFECTED, phone=rng.choice(PHONES + ("J",)),
                   day_begin=0, day_end=rng.randint(0, 6))
        before = {v.witness.tick for v in check_soundness(trace, "cwa")}
        after = {v.witness.tick for v in check_soundness(_insert(trace, extra), "cwa")}
        assert after <= before


def test_injected_witness_justifies_the_claim():
    rng = random.Random(6)
    fixed = 0
    for _ in range(200):
        trace = random_trace(rng, rng.randint(5, 50))
        for v in check_soundness(trace, "cwa"):
            r, ec, dc = v.witness["phone"], v.witness["epoch_close"], v.witness["day_close"]
            here = [e for e in trace.of_kind(EventKind.IS_AT) if e["phone"] == r and e.epoch == ec]
            if not here:
                continue
            e = here[0]
            patched = _insert(
                trace,
                ev(e.tick + 1, EventKind.IS_AT, phone="J", place=e["place"]),
                ev(e.tick + 2, EventKind.HA_CLAIM_INFECTED, phone="J", day_begin=dc, day_end=dc + 1),
            )
            assert v.witness.tick not in {x.witness.tick for x in check_soundness(patched, "cwa")}
            fixed += 1
    assert fixed > 10
