"""GAEN key schedule, broadcast payloads and on-device exposure matching.

Shared by the DP3T and CWA deployments.  A phone holds one Temporary
Exposure Key per day, unrolls it into one Rolling Proximity Identifier per
epoch, records identifiers it hears and later matches them against keys
released by a back end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import cryptokit as ck
from .errors import OneTekPerDay
from .worldmodel import EventKind, World, digest

RPIK_LABEL = b"ENRPIK"
AEMK_LABEL = b"ENAEMK"
TEK_RETENTION_DAYS = 14
AEM_VERSION = 0x40


class MatchMode(str, Enum):
    CWA = "cwa"    # epoch-bound identifiers, symmetric skew tolerance
    DP3T = "dp3t"  # any epoch of the key's day


@dataclass(frozen=True)
class Tek:
    key: bytes
    day: int
    start_epoch: int

    @property
    def id(self) -> str:
        return digest(self.key)


@dataclass(frozen=True)
class Observation:
    payload: bytes
    epoch: int
    place: str
    tick: int

    @property
    def rpi(self) -> bytes:
        return self.payload[:16]


@dataclass(frozen=True)
class ReleasedKey:
    """One entry of a released-key bundle."""

    tek: bytes
    day: int
    country: str
    signature: bytes

    def signed_bytes(self) -> bytes:
        return release_message(self.tek, self.day, self.country)

    def to_record(self) -> dict:
        return {"tek": self.tek.hex(), "day": self.day, "country": self.country, "signature": self.signature.hex()}

    @classmethod
    def from_record(cls, rec: dict) -> "ReleasedKey":
        return cls(bytes.fromhex(rec["tek"]), int(rec["day"]), rec["country"], bytes.fromhex(rec["signature"]))


@dataclass(frozen=True)
class Exposure:
    tek: bytes
    observation: Observation
    matched_epoch: int


def release_message(tek: bytes, day: int, country: str) -> bytes:
    return b"release|" + country.encode() + b"|" + day.to_bytes(4, "big") + tek


def sign_release(secret: bytes, tek: bytes, day: int, country: str) -> ReleasedKey:
    return ReleasedKey(tek, day, country, ck.sign(secret, release_message(tek, day, country)))


def rpik(tek: bytes) -> bytes:
    return ck.kdf(tek, RPIK_LABEL)


def aemk(tek: bytes) -> bytes:
    return ck.kdf(tek, AEMK_LABEL)


def padded_epoch(epoch: int) -> bytes:
    return b"EN-RPI" + bytes(6) + epoch.to_bytes(4, "little")


def rpi_for(tek: bytes, epoch: int) -> bytes:
    return ck.block128_encrypt(rpik(tek), padded_epoch(epoch))


def aem_for(tek: bytes, epoch: int, metadata: bytes = bytes([AEM_VERSION, 0])) -> bytes:
    block = epoch.to_bytes(4, "little") + metadata[:12].ljust(12, b"\0")
    return ck.block128_encrypt(aemk(tek), block)


def payload_for(tek: bytes, epoch: int, power: int = 0) -> bytes:
    return rpi_for(tek, epoch) + aem_for(tek, epoch, bytes([AEM_VERSION, power & 0xFF]))


def day_epochs(day: int, epochs_per_day: int) -> range:
    return range(day * epochs_per_day, (day + 1) * epochs_per_day)


def unroll(tek: bytes, day: int, epochs_per_day: int) -> dict[bytes, int]:
    """Map every RPI of the key's day to its epoch."""
    return {rpi_for(tek, j): j for j in day_epochs(day, epochs_per_day)}


def match(
    observations: list[Observation],
    released: list[tuple[bytes, int]],
    mode: MatchMode = MatchMode.CWA,
    skew_tolerance: int = 12,
    epochs_per_day: int = 144,
) -> list[Exposure]:
    """Report observations explained by a released (tek, day) pair.

    CWA mode accepts an observation whose epoch is within ``skew_tolerance``
    epochs of the epoch the identifier was derived for.  DP3T mode accepts
    the identifier anywhere on the key's day.
    """
    out: list[Exposure] = []
    for tek, day in released:
        table = unroll(tek, day, epochs_per_day)
        for obs in observations:
            j = table.get(obs.rpi)
            if j is None:
                continue
            if mode is MatchMode.DP3T:
                ok = obs.epoch // epochs_per_day == day
            else:
                ok = abs(obs.epoch - j) <= skew_tolerance
            if ok:
                out.append(Exposure(tek, obs, j))
    return out


class GaenPhone:
    """Phone-side GAEN framework state: keys, observation database, risk claims."""

    ROLE = "phone"
    PROTOCOL = "gaen"

    def __init__(self, world: World, name: str, country: str, match_mode: MatchMode, skew_tolerance: int = 12):
        self.world = world
        self.name = name
        self.country = country
        self.match_mode = match_mode
        self.skew_tolerance = skew_tolerance
        self.teks: list[Tek] = []
        self.observations: list[Observation] = []
        self.compromised = False
        self.pinned_keys: dict[str, bytes] = {}
        self._claimed: set[tuple[bytes, int]] = set()
        self.at_risk = False
        world.emit(EventKind.PHONE_INIT, phone=name, country=country)

    # -- keys ---------------------------------------------------------------

    def new_tek(self) -> Tek:
        day = self.world.day()
        if not self.compromised and any(t.day == day for t in self.teks):
            raise OneTekPerDay(f"{self.name} already has a TEK for day {day}")
        tek = Tek(self.world.randbytes(16), day, self.world.epoch())
        self.teks = [t for t in self.teks if day - t.day <= TEK_RETENTION_DAYS]
        self.teks.append(tek)
        self.world.emit(EventKind.CREATE_KEY, phone=self.name, day=day, key=tek.id)
        return tek

    def tek_for_day(self, day: int) -> Tek | None:
        for t in reversed(self.teks):
            if t.day == day:
                return t
        return None

    def current_tek(self) -> Tek:
        return self.tek_for_day(self.world.day()) or self.new_tek()

    # -- Bluetooth ----------------------------------------------------------

    def broadcast(self, place: str) -> bytes:
        self.world.visit(self.name, place)
        tek = self.current_tek()
        msg = payload_for(tek.key, self.world.epoch())
        self.world.ble_write(self.name, place, msg)
        return msg

    def scan(self, place: str) -> list[bytes]:
        self.world.visit(self.name, place)
        tick, epoch = self.world.now, self.world.epoch()
        msgs = self.world.ble_read(self.name, place)
        for m in msgs:
            if len(m) == 32:
                self.observations.append(Observation(m, epoch, place, tick))
        return msgs

    def meet(self, place: str) -> None:
        """Broadcast then listen at ``place`` within the current epoch."""
        self.broadcast(place)
        self.scan(place)

    # -- matching -----------------------------------------------------------

    def verify_bundle(self, bundle: list[ReleasedKey]) -> list[ReleasedKey]:
        ok = []
        for rk in bundle:
            pk = self.pinned_keys.get(rk.country)
            if pk is not None and ck.verify(pk, rk.signed_bytes(), rk.signature):
                ok.append(rk)
        return ok

    def check_exposure(self, bundle: list[ReleasedKey]) -> list[Exposure]:
        """Match verified keys; every newly explained observation raises one risk claim."""
        keys = [(rk.tek, rk.day) for rk in self.verify_bundle(bundle)]
        exposures = match(self.observations, keys, self.match_mode, self.skew_tolerance,
                          self.world.clock.epochs_per_day)
        fresh = []
        for exp in exposures:
            mark = (exp.observation.payload, exp.observation.epoch)
            if mark in self._claimed:
                continue
            self._claimed.add(mark)
            fresh.append(exp)
            self.at_risk = True
            obs = exp.observation
            self.world.emit(
                EventKind.P_CLAIM_AT_RISK,
                phone=self.name,
                day_close=self.world.day_of_epoch(obs.epoch),
                epoch_close=obs.epoch,
                key=digest(exp.tek),
                msg=digest(obs.payload),
            )
        return fresh

    # -- compromise ---------------------------------------------------------

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptPhoneKey":
            day = kw.get("day")
            teks = [t for t in self.teks if day is None or t.day == day]
            return {f"tek[{t.day}]": t for t in teks}
        if label == "CorruptPhoneReceived":
            return {f"obs[{i}]": o.payload for i, o in enumerate(self.observations)}
        if label in ("CorruptPhoneSend", "CorruptPhoneReceive"):
            return {}
        raise KeyError(label)
