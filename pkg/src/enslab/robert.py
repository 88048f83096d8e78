"""ROBERT: server-centric registration, EBID broadcast, QR-authorised upload and risk status.

The back end owns every secret that defines an ephemeral.  A phone
registers through a Diffie-Hellman exchange, receives its encrypted
Bluetooth identifiers (EBIDs) per epoch, broadcasts authenticated HELLO
messages and records the ones it hears.  A diagnosed phone uploads its
recorded HELLOs with a QR token; the back end files each into the
emitter's list of exposed epochs (LEE).  Phones learn their status by
asking the back end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from . import cryptokit as ck
from .errors import (
    AlreadyRegistered,
    BadLength,
    BadMac,
    DropRecord,
    EpochMismatch,
    InvalidToken,
    ScheduleGap,
    StaleTimestamp,
    TokenExpired,
    TokenReused,
    UnknownEmitter,
    UnknownId,
)
from .worldmodel import CountryAligned, EventKind, World, digest, epoch_of

HELLO_LEN = 16
T16_MOD = 1 << 16
MAX_RECORD_AGE_DAYS = 14


@dataclass
class RobertConfig:
    hello_tolerance_s: int = 5
    batch_limit: int | None = None
    bind_window_to_token: bool = False
    self_filter: bool = False
    long_validity_days: int = 8
    short_validity_min: int = 60
    sheet_days: int = 10


def t16_of(tick: int) -> int:
    return tick % T16_MOD


def t16_drift(a: int, b: int) -> int:
    """Distance between two 16-bit timestamps on the wrapping circle."""
    d = abs(a - b) % T16_MOD
    return min(d, T16_MOD - d)


@dataclass(frozen=True)
class HelloMsg:
    ecc: int
    ebid: bytes
    t16: int
    mac: bytes

    def authenticated_part(self) -> bytes:
        return bytes([self.ecc]) + self.ebid + struct.pack(">H", self.t16)

    def encode(self) -> bytes:
        return self.authenticated_part() + self.mac

    @classmethod
    def decode(cls, data: bytes) -> "HelloMsg":
        if len(data) != HELLO_LEN:
            raise BadLength(f"HELLO must be {HELLO_LEN} bytes, got {len(data)}")
        return cls(data[0], data[1:9], struct.unpack(">H", data[9:11])[0], data[11:16])

    @classmethod
    def build(cls, k_auth: bytes, ecc: int, ebid: bytes, tick: int) -> "HelloMsg":
        t16 = t16_of(tick)
        body = bytes([ecc]) + ebid + struct.pack(">H", t16)
        return cls(ecc, ebid, t16, ck.mac40(k_auth, body))


@dataclass(frozen=True)
class UploadRecord:
    """A recorded HELLO together with the claimed reception time."""

    hello: bytes
    tick: int


class QrKind(str, Enum):
    LONG = "long"
    SHORT = "short"


@dataclass(frozen=True)
class RobertQr:
    token: bytes
    kind: QrKind
    country: str
    valid_from: int
    expires: int  # last valid tick, inclusive
    window: tuple[int, int] | None
    sig: bytes = b""

    def message(self) -> bytes:
        w = b"" if self.window is None else struct.pack(">ii", *self.window)
        return (b"qr|" + self.country.encode() + b"|" + self.kind.value.encode() + b"|"
                + struct.pack(">qq", self.valid_from, self.expires) + w + self.token)


@dataclass(frozen=True)
class ScheduleEntry:
    epoch: int
    ebid: bytes
    ecc: int


@dataclass
class UploadResult:
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)
    forwarded: int = 0


@dataclass(frozen=True)
class StatusResponse:
    at_risk: bool
    exposure_tick: int | None = None


def _encode_schedule(entries: list[ScheduleEntry]) -> bytes:
    return b"".join(struct.pack(">I", e.epoch) + e.ebid + bytes([e.ecc]) for e in entries)


def decode_schedule(data: bytes) -> list[ScheduleEntry]:
    if len(data) % 13:
        raise BadLength("pre-hello payload is not a whole number of entries")
    return [ScheduleEntry(struct.unpack(">I", data[i:i + 4])[0], data[i + 4:i + 12], data[i + 12])
            for i in range(0, len(data), 13)]


@dataclass
class IdRecord:
    id_a: int
    phone: str
    k_enc: bytes
    k_auth: bytes
    lee: list[tuple[int, int]] = field(default_factory=list)  # (country epoch, claimed tick)
    notified: bool = False


class RobertBackend:
    ROLE = "backend"
    PROTOCOL = "robert"

    def __init__(self, world: World, country: str, country_code: int, config: RobertConfig | None = None,
                 service_start: int = 0):
        self.world = world
        self.country = country
        self.country_code = country_code & 0xFF
        self.name = f"B:{country}"
        self.config = config or RobertConfig()
        self.alignment = CountryAligned(country, service_start)
        self.k_s = world.randbytes(ck.PRP64_KEY_LEN)
        self.k_fed = world.randbytes(16)
        self.dh = ck.DhKeyPair.generate(world.rng)
        self.qr_keys = ck.SigKeyPair.generate(world.rng)
        self.id_table: dict[int, IdRecord] = {}
        self.qr_issued: dict[bytes, RobertQr] = {}
        self.qr_used: set[bytes] = set()
        self.federation: dict[int, RobertBackend] = {self.country_code: self}
        self.qr_publics: dict[str, bytes] = {country: self.qr_keys.public}
        self.wire: list[tuple[str, bytes]] = []  # sealed phone-bound messages, visible on the Internet
        self.sent_plain: list[tuple[str, bytes]] = []
        self.received: list[tuple[str, object]] = []

    # -- time -----------------------------------------------------------------

    def epoch(self, tick: int | None = None) -> int:
        return epoch_of(self.world.now if tick is None else tick, self.alignment, self.world.clock.epoch_length)

    # -- registration ---------------------------------------------------------

    def register(self, phone_name: str, pk_a: bytes) -> tuple[int, bytes]:
        if any(r.phone == phone_name for r in self.id_table.values()):
            raise AlreadyRegistered(phone_name)
        while True:
            id_a = int.from_bytes(self.world.randbytes(5), "big")
            if id_a not in self.id_table:
                break
        k_enc, k_auth = ck.derive_registration_keys(ck.dh_shared(self.dh.secret, pk_a))
        self.id_table[id_a] = IdRecord(id_a, phone_name, k_enc, k_auth)
        sealed_id = self._send(phone_name, k_enc, id_a.to_bytes(5, "big"))
        return id_a, sealed_id

    def _send(self, phone_name: str, key: bytes, plaintext: bytes) -> bytes:
        sealed = ck.seal(key, self.world.randbytes(12), plaintext)
        self.wire.append((phone_name, sealed))
        self.sent_plain.append((phone_name, plaintext))
        return sealed

    def mint_entry(self, id_a: int, epoch: int) -> ScheduleEntry:
        ebid = ck.prp64_encrypt(self.k_s, ck.pack_epoch_id(epoch, id_a))
        return ScheduleEntry(epoch, ebid, ck.ecc_encrypt(self.k_fed, ebid, self.country_code))

    def provision_ebids(self, id_a: int, epochs: range) -> bytes:
        """Pre-hello message: the schedule for ``epochs`` sealed under K_enc."""
        rec = self.id_table.get(id_a)
        if rec is None:
            raise UnknownId(f"{id_a:#x}")
        entries = [self.mint_entry(id_a, i) for i in epochs]
        return self._send(rec.phone, rec.k_enc, _encode_schedule(entries))

    # -- QR codes -------------------------------------------------------------

    def issue_qr(self, kind: QrKind, start_day: int | None = None, window: tuple[int, int] | None = None) -> RobertQr:
        now = self.world.now
        if kind is QrKind.LONG:
            start = self.world.day() if start_day is None else start_day
            valid_from = self.world.day_start(start)
            expires = self.world.day_start(start + self.config.long_validity_days) - 1
        else:
            valid_from, expires = now, now + self.config.short_validity_min * 60
        if not self.config.bind_window_to_token:
            window = None
        qr = RobertQr(self.world.randbytes(16), kind, self.country, valid_from, expires, window)
        qr = RobertQr(qr.token, kind, self.country, valid_from, expires, window,
                      ck.sign(self.qr_keys.secret, qr.message()))
        self.qr_issued[qr.token] = qr
        return qr

    def issue_sheet(self, first_day: int) -> list[RobertQr]:
        return [self.issue_qr(QrKind.LONG, first_day + k) for k in range(self.config.sheet_days)]

    def _consume(self, qr: RobertQr) -> None:
        """Step (1): signature by a federated issuer, validity period, single use at the issuer."""
        pk = self.qr_publics.get(qr.country)
        if pk is None or not ck.verify(pk, qr.message(), qr.sig):
            raise InvalidToken("QR signature invalid")
        if not qr.valid_from <= self.world.now <= qr.expires:
            raise TokenExpired("QR outside validity period")
        issuer = self._backend_of_country(qr.country)
        if qr.token in issuer.qr_used:
            raise TokenReused("QR already used")
        issuer.qr_used.add(qr.token)

    def _backend_of_country(self, country: str) -> "RobertBackend":
        for b in self.federation.values():
            if b.country == country:
                return b
        raise InvalidToken(f"unknown issuer {country}")

    # -- upload ---------------------------------------------------------------

    def upload(self, uploader: str, qr: RobertQr, records: list[UploadRecord],
               window: tuple[int, int] | None = None, uploader_id: int | None = None) -> UploadResult:
        """Checks (1)-(9).  Token errors reject the batch; all others reject one record."""
        self.received.append((uploader, (qr, list(records), window)))
        self._consume(qr)
        res = UploadResult()
        bound = qr.window if self.config.bind_window_to_token else None
        for idx, rec in enumerate(records):
            if self.config.batch_limit is not None and idx >= self.config.batch_limit:
                res.rejected.append((idx, "BatchLimit"))
                continue
            reason = self._check_record(rec, bound, uploader_id, res)
            if reason is not None:
                res.rejected.append((idx, reason))
        self.world.emit(EventKind.UPLOAD_ACCEPTED, backend=self.name, uploader=uploader, token=digest(qr.token),
                        records=res.accepted)
        return res

    def _check_record(self, rec: UploadRecord, bound: tuple[int, int] | None, uploader_id: int | None,
                      res: UploadResult) -> str | None:
        try:
            hello = HelloMsg.decode(rec.hello)                                        # (2)
        except BadLength:
            return "Malformed"
        if t16_drift(hello.t16, t16_of(rec.tick)) > self.config.hello_tolerance_s:   # (3)
            return StaleTimestamp.__name__
        claimed_day = self.world.day(rec.tick)
        if not 0 <= self.world.day() - claimed_day <= MAX_RECORD_AGE_DAYS:
            return "TooOld"
        if bound is not None and not bound[0] <= claimed_day < bound[1]:
            return "OutsideWindow"
        cc = ck.ecc_decrypt(self.k_fed, hello.ebid, hello.ecc)                     # (4)
        owner = self.federation.get(cc)
        if owner is None:
            return DropRecord.__name__
        if owner is not self:
            res.forwarded += 1
        reason = owner.process_record(hello, rec.tick, uploader_id if owner is self else None)
        if reason is None:
            res.accepted += 1
        return reason

    def _authenticate(self, hello: HelloMsg, tick: int) -> IdRecord:
        """Steps (5)-(9) on a parsed HELLO: decrypt EBID, known id, epoch match, MAC."""
        epoch, id_a = ck.unpack_epoch_id(ck.prp64_decrypt(self.k_s, hello.ebid))    # (5)
        rec = self.id_table.get(id_a)                                                # (6)
        if rec is None:
            raise UnknownEmitter(f"{id_a:#x}")
        if abs(epoch - self.epoch(tick)) > 1:                                        # (7)
            raise EpochMismatch(f"EBID epoch {epoch} vs claimed {self.epoch(tick)}")
        if not ck.verify40(rec.k_auth, hello.authenticated_part(), hello.mac):      # (8)-(9)
            raise BadMac("HELLO MAC invalid")
        return rec

    def process_record(self, hello: HelloMsg, tick: int, uploader_id: int | None = None) -> str | None:
        """Entry point for local and federation-forwarded records (from step (5))."""
        try:
            rec = self._authenticate(hello, tick)
        except (UnknownEmitter, EpochMismatch, BadMac) as exc:
            return type(exc).__name__
        if self.config.self_filter and uploader_id is not None and rec.id_a == uploader_id:
            return "SelfRecord"
        rec.lee.append((self.epoch(tick), tick))
        return None

    # -- status ---------------------------------------------------------------

    def status_request(self, phone_name: str, hello: bytes, tick: int) -> StatusResponse:
        """The request is authenticated like an uploaded HELLO of the current epoch."""
        self.received.append((phone_name, hello))
        msg = HelloMsg.decode(hello)
        if t16_drift(msg.t16, t16_of(tick)) > self.config.hello_tolerance_s:
            raise StaleTimestamp("status request timestamp")
        try:
            rec = self._authenticate(msg, tick)
        except UnknownEmitter as exc:
            raise UnknownId(str(exc)) from exc
        if rec.notified or not rec.lee:
            return StatusResponse(False)
        rec.notified = True
        return StatusResponse(True, max(t for _, t in rec.lee))

    # -- compromise -----------------------------------------------------------

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptBState":
            return {"K_S": self.k_s, "sk_S": self.dh.secret, "qr_sig_secret": self.qr_keys.secret}
        if label == "CorruptBFederationKey":
            return {"K_fed": self.k_fed}
        if label == "CorruptBIDTable":
            return {f"id[{r.phone}]": (r.k_enc, r.k_auth, r.id_a) for r in self.id_table.values()}
        if label == "CorruptQRList":
            return {f"qr[{i}]": q for i, q in enumerate(self.qr_issued.values()) if q.token not in self.qr_used}
        if label == "CorruptBReceive":
            msg = kw.get("message")
            if msg is not None:
                return {"message": msg}
            return {f"recv[{i}]": m for i, (_, m) in enumerate(self.received)}
        if label == "CorruptBSend":
            return {f"sent[{i}]": p for i, (_, p) in enumerate(self.sent_plain)}
        raise KeyError(label)


def federate(*backends: RobertBackend) -> None:
    """Share one federation key and routing table between back ends."""
    k_fed = backends[0].k_fed
    table = {b.country_code: b for b in backends}
    publics = {b.country: b.qr_keys.public for b in backends}
    for b in backends:
        b.k_fed = k_fed
        b.federation = table
        b.qr_publics = publics


@dataclass(frozen=True)
class ReceivedHello:
    hello: bytes
    epoch: int  # country-aligned reception epoch
    tick: int
    place: str


class RobertPhone:
    ROLE = "phone"
    PROTOCOL = "robert"

    def __init__(self, world: World, name: str, backend: RobertBackend):
        self.world = world
        self.name = name
        self.backend = backend
        self.country = backend.country
        self.dh: ck.DhKeyPair | None = None
        self.id_a: int | None = None
        self.k_enc = b""
        self.k_auth = b""
        self.schedule: dict[int, ScheduleEntry] = {}
        self.received: list[ReceivedHello] = []
        self.dropped: list[bytes] = []
        self.qr: RobertQr | None = None
        self.window: tuple[int, int] | None = None
        self.at_risk = False
        self.compromised = False

    def register(self) -> int:
        if self.id_a is not None:
            raise AlreadyRegistered(self.name)
        self.dh = ck.DhKeyPair.generate(self.world.rng)
        self.k_enc, self.k_auth = ck.derive_registration_keys(ck.dh_shared(self.dh.secret, self.backend.dh.public))
        id_a, sealed = self.backend.register(self.name, self.dh.public)
        plain = ck.open_sealed(self.k_enc, sealed)
        if plain is None or int.from_bytes(plain, "big") != id_a:
            raise UnknownId("registration confirmation failed")
        self.id_a = id_a
        self.world.emit(EventKind.PHONE_INIT, phone=self.name, country=self.country)
        return id_a

    def refresh(self, day: int | None = None) -> int:
        """Fetch EBIDs covering every country epoch that starts on ``day``."""
        day = self.world.day() if day is None else day
        first = self.backend.epoch(max(self.world.day_start(day), self.backend.alignment.offset))
        last = self.backend.epoch(self.world.day_start(day + 1) - 1)
        sealed = self.backend.provision_ebids(self.id_a, range(first, last + 1))
        plain = ck.open_sealed(self.k_enc, sealed)
        if plain is None:
            raise BadMac("pre-hello message failed authentication")
        for e in decode_schedule(plain):
            self.schedule[e.epoch] = e
        return len(self.schedule)

    def current_entry(self) -> ScheduleEntry:
        e = self.schedule.get(self.backend.epoch())
        if e is None:
            raise ScheduleGap(f"{self.name} has no EBID for epoch {self.backend.epoch()}")
        return e

    def hello_now(self) -> bytes:
        e = self.current_entry()
        return HelloMsg.build(self.k_auth, e.ecc, e.ebid, self.world.now).encode()

    def broadcast(self, place: str) -> bytes:
        self.world.visit(self.name, place)
        msg = self.hello_now()
        self.world.ble_write(self.name, place, msg)
        return msg

    def scan(self, place: str) -> list[bytes]:
        """Listen at ``place``.  HELLOs whose timestamp drifts beyond tolerance are dropped."""
        tick = self.world.now
        self.world.visit(self.name, place)
        kept = []
        for m in self.world.ble_read(self.name, place):
            try:
                hello = HelloMsg.decode(m)
            except BadLength:
                continue
            if t16_drift(hello.t16, t16_of(tick)) > self.backend.config.hello_tolerance_s:
                self.dropped.append(m)
                continue
            self.received.append(ReceivedHello(m, self.backend.epoch(tick), tick, place))
            kept.append(m)
        return kept

    def meet(self, place: str) -> None:
        self.broadcast(place)
        self.scan(place)

    # -- diagnosis and upload -------------------------------------------------

    def receive_qr(self, qr: RobertQr, window: tuple[int, int] | None) -> None:
        self.qr = qr
        self.window = window
        self.world.emit(EventKind.MARK_POSITIVE, phone=self.name)

    def records(self, window: tuple[int, int] | None = None) -> list[UploadRecord]:
        window = window if window is not None else self.window
        out = []
        for r in self.received:
            d = self.world.day(r.tick)
            if window is not None and not window[0] <= d < window[1]:
                continue
            if self.world.day() - d > MAX_RECORD_AGE_DAYS:
                continue
            out.append(UploadRecord(r.hello, r.tick))
        return out

    def upload_message(self) -> tuple[RobertQr, list[UploadRecord], tuple[int, int] | None]:
        return self.qr, self.records(), self.window

    def upload(self, backend: RobertBackend | None = None,
               records: list[UploadRecord] | None = None, qr: RobertQr | None = None) -> UploadResult:
        backend = backend or self.backend
        qr = qr or self.qr
        if qr is None:
            raise InvalidToken(f"{self.name} holds no QR code")
        res = backend.upload(self.name, qr, self.records() if records is None else records, self.window, self.id_a)
        if qr is self.qr:
            self.qr = None
        return res

    # -- status ---------------------------------------------------------------

    def status(self) -> bool:
        resp = self.backend.status_request(self.name, self.hello_now(), self.world.now)
        return self.handle_status(resp)

    def handle_status(self, resp: StatusResponse) -> bool:
        """A positive response raises one risk claim dated at the reported exposure."""
        if not resp.at_risk or resp.exposure_tick is None:
            return False
        self.at_risk = True
        t = resp.exposure_tick
        self.world.emit(EventKind.P_CLAIM_AT_RISK, phone=self.name, day_close=self.world.day(t),
                        epoch_close=self.world.epoch(t))
        return True

    # -- compromise -----------------------------------------------------------

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptPhoneKey":
            return {"sk_A": self.dh.secret}
        if label == "CorruptPhoneReceived":
            return {f"hello[{i}]": r for i, r in enumerate(self.received)}
        if label == "CorruptPhoneReceive":
            return {"qr": self.qr} if self.qr is not None else {}
        if label == "CorruptPhoneSend":
            return {}
        raise KeyError(label)


class RobertHealthAuthority:
    ROLE = "ha"
    PROTOCOL = "robert"

    def __init__(self, world: World, backend: RobertBackend):
        self.world = world
        self.backend = backend
        self.country = backend.country
        self.name = f"HA:{backend.country}"
        self.sheet: list[RobertQr] = []

    def fetch_sheet(self, first_day: int) -> list[RobertQr]:
        self.sheet = self.backend.issue_sheet(first_day)
        return self.sheet

    def _pick(self, window: tuple[int, int]) -> RobertQr:
        if self.backend.config.bind_window_to_token:
            return self.backend.issue_qr(QrKind.SHORT, window=window)
        now = self.world.now
        for qr in self.sheet:
            if qr.valid_from <= now <= qr.expires and qr.token not in self.backend.qr_used:
                self.sheet.remove(qr)
                return qr
        return self.backend.issue_qr(QrKind.SHORT)

    def diagnose(self, phone: RobertPhone, window: tuple[int, int]) -> RobertQr:
        """Positive diagnosis: contagious over days [window[0], window[1]) with the test on window[1]."""
        self.world.emit(EventKind.HA_CLAIM_INFECTED, phone=phone.name, day_begin=window[0], day_end=window[1])
        self.world.emit(EventKind.TEST_POSITIVE, phone=phone.name, day=self.world.day())
        qr = self._pick(window)
        phone.receive_qr(qr, window)
        return qr
