"""CWA upload authorisation (guid -> regToken -> TAN) and EFGS federation.

The verification server and the test result server are one process.  It
stores only hashes of guids, registration tokens and TANs.  A TAN authorises
exactly one upload but is not bound to the keys it authorises.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import cryptokit as ck
from .errors import (
    DuplicateKeyDay,
    GuidAlreadyUsed,
    InvalidTan,
    NotPositive,
    TanAlreadyIssued,
    TanReused,
    TooManyKeys,
    UnknownToken,
)
from .gaen import GaenPhone, MatchMode, ReleasedKey, Tek, sign_release
from .worldmodel import EventKind, World, digest

MAX_UPLOAD_KEYS = 14


@dataclass
class CwaConfig:
    one_tan_per_token: bool = True
    skew_tolerance_epochs: int = 12


@dataclass
class EfgsConfig:
    expiry_agreement: bool = True
    release_delay_hours: int = 2


class TestResult(str, Enum):
    __test__ = False  # not a pytest class

    PENDING = "pending"
    POSITIVE = "positive"
    NEGATIVE = "negative"


def h(data: bytes) -> bytes:
    return ck.hash256(data)


class VerificationServer:
    """Verification server merged with the test result server."""

    ROLE = "vs"
    PROTOCOL = "cwa"

    def __init__(self, world: World, country: str, config: CwaConfig | None = None):
        self.world = world
        self.country = country
        self.name = f"VS:{country}"
        self.config = config or CwaConfig()
        self.guid_hashes: set[bytes] = set()
        self.reg_tokens: dict[bytes, bytes] = {}
        self.tan_hashes: set[bytes] = set()
        self.spent_tans: set[bytes] = set()
        self.tan_issue_counts: dict[bytes, int] = {}
        self.results: dict[bytes, TestResult] = {}  # TRS side, keyed by h(guid)
        self.tans_seen: list[bytes] = []  # plaintext TANs in transit, visible to a corrupted VS

    # -- TRS ------------------------------------------------------------------

    def lab_result(self, guid: bytes, result: TestResult) -> None:
        self.results[h(guid)] = result

    # -- phone-facing ---------------------------------------------------------

    def register(self, guid: bytes) -> bytes:
        hg = h(guid)
        if hg in self.guid_hashes and self.config.one_tan_per_token:
            raise GuidAlreadyUsed("guid already registered")
        self.guid_hashes.add(hg)
        reg_token = self.world.randbytes(16)
        self.reg_tokens[h(reg_token)] = hg
        return reg_token

    def poll(self, reg_token: bytes) -> TestResult:
        hg = self.reg_tokens.get(h(reg_token))
        if hg is None:
            raise UnknownToken("unknown registration token")
        return self.results.get(hg, TestResult.PENDING)

    def issue_tan(self, reg_token: bytes) -> bytes:
        if self.poll(reg_token) is not TestResult.POSITIVE:
            raise NotPositive("no positive result for this token")
        hr = h(reg_token)
        if self.config.one_tan_per_token and self.tan_issue_counts.get(hr, 0) >= 1:
            raise TanAlreadyIssued("a TAN was already issued for this token")
        tan = self.world.randbytes(16)
        self.tan_hashes.add(h(tan))
        self.tan_issue_counts[hr] = self.tan_issue_counts.get(hr, 0) + 1
        return tan

    # -- backend-facing -------------------------------------------------------

    def verify_tan(self, tan: bytes) -> None:
        ht = h(tan)
        if ht in self.spent_tans:
            raise TanReused("TAN already used")
        if ht not in self.tan_hashes:
            raise InvalidTan("unknown TAN")
        self.tan_hashes.discard(ht)
        self.spent_tans.add(ht)
        self.tans_seen.append(tan)

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptVSReceiveFromTRSnB":
            return {f"tan[{i}]": t for i, t in enumerate(self.tans_seen)}
        if label in ("CorruptVSSendToPhone", "CorruptVSSendToTRSnB", "CorruptVSReceiveFromPhone"):
            return {}
        raise KeyError(label)


@dataclass
class EfgsRow:
    tek: bytes
    day: int
    origin: str
    visited: frozenset[str]
    expiry_tick: int
    uploader: str


class Efgs:
    """Central federation database shared by every national back end."""

    def __init__(self, world: World, config: EfgsConfig | None = None):
        self.world = world
        self.config = config or EfgsConfig()
        self.rows: list[EfgsRow] = []
        self.backends: dict[str, "CwaBackend"] = {}

    def agreed_expiry(self, day: int) -> int:
        return self.world.day_start(day + 1) + self.config.release_delay_hours * 3600

    def sync(self, backend: "CwaBackend", rows: list[EfgsRow]) -> None:
        self.rows.extend(rows)

    def fetch(self, backend: "CwaBackend") -> list[EfgsRow]:
        return [r for r in self.rows if backend.country in r.visited or r.origin == backend.country]


class CwaBackend:
    ROLE = "backend"
    PROTOCOL = "cwa"

    def __init__(
        self,
        world: World,
        country: str,
        vs: VerificationServer,
        efgs: Efgs | None = None,
        local_release_delay_s: int = 7200,
    ):
        self.world = world
        self.country = country
        self.name = f"B:{country}"
        self.vs = vs
        self.efgs = efgs
        self.local_release_delay_s = local_release_delay_s
        self.keys = ck.SigKeyPair.generate(world.rng)
        self.stored: list[EfgsRow] = []
        self.released: list[ReleasedKey] = []
        self._released_ids: set[tuple[bytes, int]] = set()
        self.received_uploads: list[tuple[list[Tek], bytes]] = []
        if efgs is not None:
            efgs.backends[country] = self

    def upload_teks(self, uploader: str, teks: list[Tek], tan: bytes, visited: set[str] | None = None) -> list[bytes]:
        if len(teks) > MAX_UPLOAD_KEYS:
            raise TooManyKeys(f"{len(teks)} keys > {MAX_UPLOAD_KEYS}")
        days = [t.day for t in teks]
        if len(set(days)) != len(days):
            raise DuplicateKeyDay("two keys for the same day in one upload")
        self.received_uploads.append((list(teks), tan))
        self.vs.verify_tan(tan)
        visited_set = frozenset(visited or ()) | {self.country}
        rows = [EfgsRow(t.key, t.day, self.country, visited_set, self.release_tick(t.day), uploader) for t in teks]
        self.stored.extend(rows)
        if self.efgs is not None:
            self.efgs.sync(self, rows)
        return [t.key for t in teks]

    def release_tick(self, day: int) -> int:
        if self.efgs is not None and self.efgs.config.expiry_agreement:
            return self.efgs.agreed_expiry(day)
        return self.world.day_start(day + 1) + self.local_release_delay_s

    def _candidates(self) -> list[EfgsRow]:
        rows = list(self.stored)
        if self.efgs is not None:
            rows.extend(r for r in self.efgs.fetch(self) if r.origin != self.country)
        return rows

    def publish(self) -> list[ReleasedKey]:
        out = []
        for row in self._candidates():
            ident = (row.tek, row.day)
            if ident in self._released_ids or self.release_tick(row.day) > self.world.now:
                continue
            self._released_ids.add(ident)
            rk = sign_release(self.keys.secret, row.tek, row.day, self.country)
            self.released.append(rk)
            out.append(rk)
            self.world.emit(EventKind.KEY_RELEASED, backend=self.name, key=digest(row.tek), day=row.day,
                            uploader=row.uploader)
        return out

    def fetch(self) -> list[ReleasedKey]:
        self.publish()
        return list(self.released)

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptBState":
            return {"backend_sig_secret": self.keys.secret}
        if label == "CorruptBReceiveFromPhone":
            if "message" in kw:
                teks, tan = kw["message"]
                return {"tan": tan, **{f"tek[{t.day}]": t for t in teks}}
            out = {}
            for i, (teks, tan) in enumerate(self.received_uploads):
                out[f"upload[{i}].tan"] = tan
                for t in teks:
                    out[f"upload[{i}].tek[{t.day}]"] = t
            return out
        if label in ("CorruptBReceiveFromVS", "CorruptBSend"):
            return {}
        raise KeyError(label)


class CwaPhone(GaenPhone):
    PROTOCOL = "cwa"

    def __init__(self, world: World, name: str, country: str, config: CwaConfig | None = None):
        self.config = config or CwaConfig()
        super().__init__(world, name, country, MatchMode.CWA, self.config.skew_tolerance_epochs)
        self.reg_token: bytes | None = None
        self.tan: bytes | None = None
        self.visited: set[str] = set()

    def scan_and_register(self, vs: VerificationServer, guid: bytes) -> bytes:
        self.reg_token = vs.register(guid)
        return self.reg_token

    def poll_result(self, vs: VerificationServer) -> TestResult:
        if self.reg_token is None:
            raise UnknownToken("phone holds no registration token")
        result = vs.poll(self.reg_token)
        self.deliver_result(result)
        return result

    def deliver_result(self, result: TestResult) -> None:
        if result is TestResult.POSITIVE:
            self.world.emit(EventKind.MARK_POSITIVE, phone=self.name)

    def request_tan(self, vs: VerificationServer) -> bytes:
        if self.reg_token is None:
            raise UnknownToken("phone holds no registration token")
        self.tan = vs.issue_tan(self.reg_token)
        return self.tan

    def upload_message(self, days: tuple[int, int] | None = None) -> tuple[list[Tek], bytes]:
        """Keys of completed days, restricted to ``days`` = [first, last) when given."""
        if self.tan is None:
            raise InvalidTan("phone holds no TAN")
        teks = [t for t in self.teks if days is None or days[0] <= t.day < days[1]]
        return [t for t in teks if t.day < self.world.day()][-MAX_UPLOAD_KEYS:], self.tan

    def upload(self, backend: CwaBackend, days: tuple[int, int] | None = None) -> list[bytes]:
        teks, tan = self.upload_message(days)
        out = backend.upload_teks(self.name, teks, tan, self.visited)
        self.tan = None
        return out

    def corruption_payload(self, label: str, **kw) -> dict:
        if label == "CorruptPhoneReceive":
            out = {}
            if self.reg_token is not None:
                out["reg_token"] = self.reg_token
            if self.tan is not None:
                out["tan"] = self.tan
            return out
        return super().corruption_payload(label, **kw)


class TestSite:
    """Health authority side: hands out guid QR codes and records diagnoses."""

    ROLE = "ha"
    PROTOCOL = "cwa"
    __test__ = False

    def __init__(self, world: World, country: str, vs: VerificationServer):
        self.world = world
        self.country = country
        self.name = f"HA:{country}"
        self.vs = vs

    def take_test(self) -> bytes:
        return self.world.randbytes(16)

    def report(self, phone: str, guid: bytes, positive: bool, window: tuple[int, int]) -> None:
        if positive:
            self.world.emit(EventKind.HA_CLAIM_INFECTED, phone=phone, day_begin=window[0], day_end=window[1])
            self.world.emit(EventKind.TEST_POSITIVE, phone=phone, day=self.world.day())
        self.vs.lab_result(guid, TestResult.POSITIVE if positive else TestResult.NEGATIVE)
