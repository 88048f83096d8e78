"""Random synthetic traces for checker-versus-oracle comparisons."""

import random

import oracles
from enslab.propcheck import check_soundness, check_upload_auth
from enslab.worldmodel import EventKind, Trace, TraceEvent

SPACING = 4       # ticks between generated events; leaves room for insertions
EPOCH_TICKS = 12  # synthetic epoch length (a multiple of SPACING)
EPD = 4           # synthetic epochs per day

PHONES = ("P", "Q", "R")
PLACES = ("a", "b")
KEYS = ("k1", "k2", "k3")


def ev(tick: int, kind: EventKind, **args) -> TraceEvent:
    epoch = tick // EPOCH_TICKS
    return TraceEvent(tick, epoch // EPD, epoch, kind, args)


def random_trace(rng: random.Random, n: int) -> Trace:
    events = []
    isat: list[tuple[str, int]] = []
    for i in range(n):
        t = i * SPACING
        epoch, day = t // EPOCH_TICKS, t // EPOCH_TICKS // EPD
        k = rng.choice(["IsAt"] * 4 + ["HA", "Claim", "Claim", "Pos", "Up", "Create", "Rel"])
        p = rng.choice(PHONES)
        if k == "IsAt":
            events.append(ev(t, EventKind.IS_AT, phone=p, place=rng.choice(PLACES)))
            isat.append((p, epoch))
        elif k == "HA":
            b = rng.randint(max(0, day - 16), day)
            events.append(ev(t, EventKind.HA_CLAIM_INFECTED, phone=p, day_begin=b, day_end=rng.randint(b, day + 1)))
        elif k == "Claim":
            if isat and rng.random() < 0.7:
                p, ec = rng.choice(isat)
            else:
                ec = rng.randint(0, max(epoch, 0))
            dc = ec // EPD if rng.random() < 0.8 else rng.randint(0, day)
            events.append(ev(t, EventKind.P_CLAIM_AT_RISK, phone=p, day_close=dc, epoch_close=ec))
        elif k == "Pos":
            events.append(ev(t, EventKind.TEST_POSITIVE, phone=p, day=day))
        elif k == "Up":
            events.append(ev(t, EventKind.UPLOAD_ACCEPTED, backend="B", uploader=p, token="t",
                             records=rng.randint(0, 2)))
        elif k == "Create":
            events.append(ev(t, EventKind.CREATE_KEY, phone=p, day=day, key=rng.choice(KEYS)))
        else:
            events.append(ev(t, EventKind.KEY_RELEASED, backend="B", key=rng.choice(KEYS), day=day,
                             uploader=rng.choice(PHONES)))
    return Trace(events)


def verdicts(trace: Trace, protocol: str) -> set[tuple]:
    """Checker output reduced to (property, witness tick, failed conditions)."""
    found = check_soundness(trace, protocol) + check_upload_auth(trace, protocol)
    return {(v.property.value, v.witness.tick, tuple(sorted(v.failed_conditions))) for v in found}


def oracle(trace: Trace, protocol: str) -> set[tuple]:
    return oracles.naive_verdicts([e.to_record() for e in trace], protocol)
