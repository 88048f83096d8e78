"""Discretised time, tagged places, the Bluetooth space-time channel and the event trace.

Time is a single global integer tick measured in seconds.  Every emitted
event consumes one tick, so ticks in a trace are strictly increasing.  An
epoch is ``epoch_length`` ticks and a day is ``epochs_per_day`` epochs; the
``day`` and ``epoch`` fields written on every event are Unix aligned.

Places are opaque tags.  Two agents are in proximity exactly when they
visit the same tag during the same epoch; nothing else about geometry is
modelled, so proximity is deliberately not transitive.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator, Union

from .errors import BeforeServiceStart, NotPresent, TraceSchemaError

ADVERSARY = "ADV"

DEFAULT_EPOCH_LENGTH = 600
DEFAULT_EPOCHS_PER_DAY = 144


class EventKind(str, Enum):
    IS_AT = "IsAt"
    DAY = "Day"
    EPOCH = "Epoch"
    BLE_WR = "BLEwr"
    BLE_RD = "BLErd"
    P_CLAIM_AT_RISK = "PClaimAtRisk"
    HA_CLAIM_INFECTED = "HAClaimInfected"
    PHONE_INIT = "PhoneInit"
    CREATE_KEY = "CreateKey"
    MARK_POSITIVE = "MarkPositive"
    TEST_POSITIVE = "TestPositive"
    CORRUPT = "Corrupt"
    UPLOAD_ACCEPTED = "UploadAccepted"
    KEY_RELEASED = "KeyReleased"


# Required argument names per kind.  Extra arguments are allowed.
EVENT_SCHEMA: dict[EventKind, tuple[str, ...]] = {
    EventKind.IS_AT: ("phone", "place"),
    EventKind.DAY: ("day",),
    EventKind.EPOCH: ("epoch",),
    EventKind.BLE_WR: ("actor", "place", "msg"),
    EventKind.BLE_RD: ("actor", "place", "msg"),
    EventKind.P_CLAIM_AT_RISK: ("phone", "day_close", "epoch_close"),
    EventKind.HA_CLAIM_INFECTED: ("phone", "day_begin", "day_end"),
    EventKind.PHONE_INIT: ("phone", "country"),
    EventKind.CREATE_KEY: ("phone", "day", "key"),
    EventKind.MARK_POSITIVE: ("phone",),
    EventKind.TEST_POSITIVE: ("phone", "day"),
    EventKind.CORRUPT: ("target", "capability", "payload"),
    EventKind.UPLOAD_ACCEPTED: ("backend", "uploader", "token", "records"),
    EventKind.KEY_RELEASED: ("backend", "key", "day"),
}


def digest(data: bytes) -> str:
    """Short hex digest used wherever message bytes appear in a trace."""
    return hashlib.sha256(data).hexdigest()[:32]


@dataclass(frozen=True)
class UnixAligned:
    pass


@dataclass(frozen=True)
class CountryAligned:
    country: str
    offset: int  # seconds since tick 0 at which the country's service started


Alignment = Union[UnixAligned, CountryAligned]


def epoch_of(tick: int, alignment: Alignment = UnixAligned(), epoch_length: int = DEFAULT_EPOCH_LENGTH) -> int:
    if isinstance(alignment, CountryAligned):
        if tick < alignment.offset:
            raise BeforeServiceStart(f"tick {tick} precedes {alignment.country} start {alignment.offset}")
        return (tick - alignment.offset) // epoch_length
    return tick // epoch_length


def day_of_epoch(epoch: int, epochs_per_day: int = DEFAULT_EPOCHS_PER_DAY, offset_epochs: int = 0) -> int:
    return (epoch + offset_epochs) // epochs_per_day


def within_14_days(d1: int, d2: int) -> bool:
    """True iff ``d2`` is at most 14 days after ``d1``."""
    return 0 <= d2 - d1 <= 14


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    day: int
    epoch: int
    kind: EventKind
    args: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Any:
        return self.args[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.args.get(name, default)

    def to_record(self) -> dict[str, Any]:
        return {"tick": self.tick, "day": self.day, "epoch": self.epoch, "kind": self.kind.value, "args": self.args}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "TraceEvent":
        try:
            kind = EventKind(rec["kind"])
            ev = cls(int(rec["tick"]), int(rec["day"]), int(rec["epoch"]), kind, dict(rec["args"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceSchemaError(f"bad trace record {rec!r}: {exc}") from exc
        return ev


class Trace:
    """Append-only ordered event log."""

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events: list[TraceEvent] = list(events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i: int) -> TraceEvent:
        return self.events[i]

    def append(self, ev: TraceEvent) -> None:
        if self.events and ev.tick <= self.events[-1].tick:
            raise TraceSchemaError(f"tick {ev.tick} not after {self.events[-1].tick}")
        self.events.append(ev)

    def of_kind(self, *kinds: EventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def at_tick(self, tick: int) -> TraceEvent:
        for e in self.events:
            if e.tick == tick:
                return e
        raise KeyError(tick)

    def validate(self) -> None:
        """Raise TraceSchemaError unless kinds, arities and time ordering are consistent."""
        last_tick = -1
        last_day = None
        epoch_day: dict[int, int] = {}
        for ev in self.events:
            if not isinstance(ev.kind, EventKind):
                raise TraceSchemaError(f"unknown kind {ev.kind!r}")
            missing = [a for a in EVENT_SCHEMA[ev.kind] if a not in ev.args]
            if missing:
                raise TraceSchemaError(f"{ev.kind.value}@{ev.tick} missing {missing}")
            if ev.tick <= last_tick:
                raise TraceSchemaError(f"tick {ev.tick} not increasing")
            if last_day is not None and ev.day < last_day:
                raise TraceSchemaError(f"day went backwards at tick {ev.tick}")
            if epoch_day.setdefault(ev.epoch, ev.day) != ev.day:
                raise TraceSchemaError(f"epoch {ev.epoch} mapped to two days")
            last_tick, last_day = ev.tick, ev.day

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e.to_record(), separators=(",", ":")) + "\n" for e in self.events)

    @classmethod
    def from_ndjson(cls, text: str) -> "Trace":
        out = cls()
        for line in text.splitlines():
            if line.strip():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise TraceSchemaError(str(exc)) from exc
                out.events.append(TraceEvent.from_record(rec))
        return out


@dataclass
class ClockConfig:
    epoch_length: int = DEFAULT_EPOCH_LENGTH
    epochs_per_day: int = DEFAULT_EPOCHS_PER_DAY

    @property
    def day_length(self) -> int:
        return self.epoch_length * self.epochs_per_day


CellKey = tuple[str, int, int]  # (place, day, epoch)


class World:
    """Shared state of one simulation run: clock, RNG, Bluetooth cells and trace."""

    def __init__(self, seed: int = 0, clock: ClockConfig | None = None):
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = clock or ClockConfig()
        self.now = 0
        self.trace = Trace()
        self._cells: dict[CellKey, list[tuple[str, bytes]]] = defaultdict(list)
        self._present: set[tuple[str, str, int]] = set()
        self._marked_epoch = 0
        self._marked_day = 0

    # -- time ---------------------------------------------------------------

    def epoch(self, tick: int | None = None) -> int:
        return (self.now if tick is None else tick) // self.clock.epoch_length

    def day(self, tick: int | None = None) -> int:
        return self.epoch(tick) // self.clock.epochs_per_day

    def day_of_epoch(self, epoch: int) -> int:
        return epoch // self.clock.epochs_per_day

    def epoch_start(self, epoch: int) -> int:
        return epoch * self.clock.epoch_length

    def day_start(self, day: int) -> int:
        return day * self.clock.day_length

    def advance(self, ticks: int) -> int:
        if ticks < 1:
            raise ValueError("advance needs a positive tick count")
        self.now += ticks
        self._mark_boundaries()
        return self.now

    def advance_to(self, tick: int) -> int:
        if tick > self.now:
            self.advance(tick - self.now)
        return self.now

    def goto(self, day: int, epoch_in_day: int = 0, second: int = 60) -> int:
        """Advance to ``second`` seconds into the given epoch of ``day``."""
        target = self.day_start(day) + epoch_in_day * self.clock.epoch_length + second
        if target < self.now:
            raise ValueError(f"cannot go back from {self.now} to {target}")
        return self.advance_to(target)

    def _mark_boundaries(self) -> None:
        d, e = self.day(), self.epoch()
        if d != self._marked_day:
            self._marked_day = d
            self._append(EventKind.DAY, {"day": d})
        if self.epoch() != self._marked_epoch:
            self._marked_epoch = self.epoch()
            self._append(EventKind.EPOCH, {"epoch": self._marked_epoch})
        if self.epoch() != e or self.day() != d:
            self._mark_boundaries()

    def _append(self, kind: EventKind, args: dict[str, Any]) -> TraceEvent:
        ev = TraceEvent(self.now, self.day(), self.epoch(), kind, args)
        self.trace.append(ev)
        self.now += 1
        return ev

    def emit(self, kind: EventKind, **args: Any) -> TraceEvent:
        self._mark_boundaries()
        return self._append(kind, args)

    # -- space --------------------------------------------------------------

    def visit(self, phone: str, place: str) -> None:
        """Record that an honest phone is at ``place`` during the current epoch."""
        self._mark_boundaries()
        key = (phone, place, self.epoch())
        if key not in self._present:
            self._present.add(key)
            self.emit(EventKind.IS_AT, phone=phone, place=place)

    def is_present(self, phone: str, place: str) -> bool:
        return (phone, place, self.epoch()) in self._present

    def cell(self, place: str, day: int, epoch: int) -> list[bytes]:
        return [m for _, m in self._cells.get((place, day, epoch), [])]

    def ble_write(self, actor: str, place: str, msg: bytes, honest: bool = True) -> None:
        if honest and not self.is_present(actor, place):
            raise NotPresent(f"{actor} is not at {place} in epoch {self.epoch()}")
        self._mark_boundaries()
        self._cells[(place, self.day(), self.epoch())].append((actor, msg))
        self.emit(EventKind.BLE_WR, actor=actor, place=place, msg=digest(msg))

    def ble_read(self, actor: str, place: str, honest: bool = True) -> list[bytes]:
        """Return every message in the current cell; honest phones do not hear their own writes."""
        if honest and not self.is_present(actor, place):
            raise NotPresent(f"{actor} is not at {place} in epoch {self.epoch()}")
        self._mark_boundaries()
        out = [m for w, m in self._cells.get((place, self.day(), self.epoch()), []) if not (honest and w == actor)]
        for m in out:
            self.emit(EventKind.BLE_RD, actor=actor, place=place, msg=digest(m))
        return out

    def randbytes(self, n: int) -> bytes:
        return self.rng.randbytes(n)
