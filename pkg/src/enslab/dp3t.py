"""DP3T with device-bound authorisation codes (variant 3) and home-region federation.

Before testing, the phone commits to its day keys with blinded hashes.  A
health authority that diagnoses the user signs each commitment; the back
end later accepts a key only with a recent signature over the recomputed
commitment.  Day-key identifiers are matched anywhere on their day.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import cryptokit as ck
from .errors import BadSignature, CommitmentMismatch, NoAuthorisation, StaleCode, TooManyKeys
from .gaen import GaenPhone, MatchMode, ReleasedKey, Tek, sign_release
from .worldmodel import EventKind, World, digest

MAX_COMMITTED_KEYS = 14


@dataclass
class Dp3tConfig:
    ac_freshness_days: int = 2
    release_at_day_end: bool = True
    max_committed_keys: int = MAX_COMMITTED_KEYS


def commitment_hash(tek: bytes, t: int, r: bytes) -> bytes:
    return ck.hash256(tek + t.to_bytes(4, "big") + r)


@dataclass(frozen=True)
class Commitment:
    h: bytes
    tek_epoch_t: int
    blind_r: bytes


@dataclass(frozen=True)
class AuthCode:
    h: bytes
    issue_day: int
    country: str
    sig: bytes

    @staticmethod
    def message(h: bytes, issue_day: int, country: str) -> bytes:
        return b"ac|" + country.encode() + b"|" + issue_day.to_bytes(4, "big") + h


@dataclass(frozen=True)
class UploadTuple:
    tek: bytes
    t: int
    r: bytes
    ac: AuthCode


@dataclass
class UploadResult:
    accepted: list[bytes] = field(default_factory=list)
    rejected: list[tuple[int, str]] = field(default_factory=list)


class Dp3tPhone(GaenPhone):
    PROTOCOL = "dp3t"

    def __init__(self, world: World, name: str, country: str, config: Dp3tConfig | None = None):
        super().__init__(world, name, country, MatchMode.DP3T)
        self.config = config or Dp3tConfig()
        self.test_db: list[tuple[bytes, int, bytes]] = []
        self.auth_codes: list[AuthCode] = []
        self.window: tuple[int, int] | None = None
        self.visited: set[str] = set()
        self.positive = False

    def commit_keys(self, teks: list[Tek] | None = None) -> list[Commitment]:
        teks = list(self.teks if teks is None else teks)
        if len(teks) > self.config.max_committed_keys:
            raise TooManyKeys(f"{len(teks)} keys > {self.config.max_committed_keys}")
        out = []
        for tek in teks:
            r = self.world.randbytes(16)
            self.test_db.append((tek.key, tek.start_epoch, r))
            out.append(Commitment(commitment_hash(tek.key, tek.start_epoch, r), tek.start_epoch, r))
        return out

    def commitments(self) -> list[Commitment]:
        """Commitments for every row of the test database."""
        return [Commitment(commitment_hash(k, t, r), t, r) for k, t, r in self.test_db]

    def receive_result(self, codes: list[AuthCode], window: tuple[int, int] | None) -> None:
        self.auth_codes = list(codes)
        self.window = window
        self.positive = True
        self.world.emit(EventKind.MARK_POSITIVE, phone=self.name)

    def upload_tuples(self, respect_window: bool = True) -> list[UploadTuple]:
        """Tuples an honest phone uploads: committed keys whose day lies in the window."""
        codes = {ac.h: ac for ac in self.auth_codes}
        epd = self.world.clock.epochs_per_day
        out = []
        for tek, t, r in self.test_db:
            ac = codes.get(commitment_hash(tek, t, r))
            if ac is None:
                continue
            if respect_window and self.window is not None and not self.window[0] <= t // epd < self.window[1]:
                continue
            out.append(UploadTuple(tek, t, r, ac))
        return out

    def delete_key_material(self) -> None:
        self.teks.clear()
        self.test_db.clear()
        self.auth_codes.clear()

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptPhoneTestDBRead":
            return {f"testdb[{i}]": row for i, row in enumerate(self.test_db)}
        if label == "CorruptPhoneTestDBWrite":
            tek: Tek = kw["tek"]
            r = kw.get("blind") or self.world.randbytes(16)
            self.test_db.append((tek.key, tek.start_epoch, r))
            return {"row": (tek.key, tek.start_epoch, r)}
        return super().corruption_payload(label, **kw)


class Dp3tHealthAuthority:
    ROLE = "ha"
    PROTOCOL = "dp3t"

    def __init__(self, world: World, country: str):
        self.world = world
        self.country = country
        self.name = f"HA:{country}"
        self.keys = ck.SigKeyPair.generate(world.rng)

    def sign_commitment(self, h: bytes, issue_day: int, secret: bytes | None = None) -> AuthCode:
        sig = ck.sign(secret or self.keys.secret, AuthCode.message(h, issue_day, self.country))
        return AuthCode(h, issue_day, self.country, sig)

    def diagnose_and_sign(
        self, phone: Dp3tPhone, commitments: list[Commitment], window: tuple[int, int], positive: bool = True
    ) -> list[AuthCode]:
        if not positive:
            raise NoAuthorisation(f"{phone.name} tested negative")
        day = self.world.day()
        self.world.emit(EventKind.HA_CLAIM_INFECTED, phone=phone.name, day_begin=window[0], day_end=window[1])
        self.world.emit(EventKind.TEST_POSITIVE, phone=phone.name, day=day)
        return [self.sign_commitment(c.h, day) for c in commitments]

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptHAState":
            return {"ha_sig_secret": self.keys.secret}
        if label == "CorruptHASend":
            return {}
        raise KeyError(label)


class Dp3tBackend:
    ROLE = "backend"
    PROTOCOL = "dp3t"

    def __init__(self, world: World, country: str, ha_public: bytes, config: Dp3tConfig | None = None):
        self.world = world
        self.country = country
        self.name = f"B:{country}"
        self.ha_public = ha_public
        self.config = config or Dp3tConfig()
        self.keys = ck.SigKeyPair.generate(world.rng)
        self.pending: list[tuple[bytes, int, str]] = []  # (tek, day, uploader)
        self.released: list[ReleasedKey] = []
        self.federation: dict[str, "Dp3tBackend"] = {country: self}

    def upload_keys(self, uploader: str, tuples: list[UploadTuple]) -> UploadResult:
        """Each tuple is an independent single-key upload."""
        res = UploadResult()
        today = self.world.day()
        epd = self.world.clock.epochs_per_day
        for i, tup in enumerate(tuples):
            h = commitment_hash(tup.tek, tup.t, tup.r)
            ac = tup.ac
            if ac.h != h:
                res.rejected.append((i, CommitmentMismatch.__name__))
                continue
            if not ck.verify(self.ha_public, AuthCode.message(ac.h, ac.issue_day, ac.country), ac.sig):
                res.rejected.append((i, BadSignature.__name__))
                continue
            if not 0 <= today - ac.issue_day <= self.config.ac_freshness_days:
                res.rejected.append((i, StaleCode.__name__))
                continue
            self.pending.append((tup.tek, tup.t // epd, uploader))
            res.accepted.append(tup.tek)
        self.publish()
        return res

    def release_tick(self, day: int) -> int:
        if self.config.release_at_day_end:
            return self.world.day_start(day + 1)
        return 0

    def publish(self) -> list[ReleasedKey]:
        due = [p for p in self.pending if self.release_tick(p[1]) <= self.world.now]
        self.pending = [p for p in self.pending if p not in due]
        out = []
        for tek, day, uploader in due:
            rk = sign_release(self.keys.secret, tek, day, self.country)
            self.released.append(rk)
            out.append(rk)
            self.world.emit(EventKind.KEY_RELEASED, backend=self.name, key=digest(tek), day=day, uploader=uploader)
        return out

    def publish_and_fetch(self, phone: Dp3tPhone) -> list[ReleasedKey]:
        """Keys of the home region plus every declared visited region."""
        out: list[ReleasedKey] = []
        for region in sorted({self.country} | phone.visited):
            backend = self.federation.get(region)
            if backend is None:
                continue
            backend.publish()
            out.extend(backend.released)
        return out

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptBState":
            return {"backend_sig_secret": self.keys.secret}
        if label == "CorruptBReceive":
            return {}
        raise KeyError(label)


def federate(*backends: Dp3tBackend) -> None:
    table = {b.country: b for b in backends}
    for b in backends:
        b.federation = table
