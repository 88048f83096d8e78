"""Capability-based attacker.

The adversary can read and write the Bluetooth channel anywhere and may
invoke any capability from a closed table against an agent of the
matching role.  Each invocation is logged as a Corrupt event whose payload
lists digests of the values revealed, and every revealed value enters a
knowledge base with its provenance.  Values the adversary emits must be
derivable from that knowledge; ``audit`` replays the check.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import cryptokit as ck
from . import gaen
from .errors import InvalidCapability, NotKnown
from .worldmodel import ADVERSARY, EventKind, World, digest

BLUETOOTH_CAPABILITIES = ("BLErd", "BLEwr")

# label -> (role, protocols where the capability exists)
CAPABILITY_TABLE: dict[str, tuple[str, frozenset[str]]] = {
    "BLErd": ("bluetooth", frozenset({"robert", "dp3t", "cwa"})),
    "BLEwr": ("bluetooth", frozenset({"robert", "dp3t", "cwa"})),
    "CorruptPhoneKey": ("phone", frozenset({"robert", "dp3t", "cwa"})),
    "CorruptPhoneReceived": ("phone", frozenset({"robert", "dp3t", "cwa"})),
    "CorruptPhoneSend": ("phone", frozenset({"robert", "dp3t", "cwa"})),
    "CorruptPhoneReceive": ("phone", frozenset({"robert", "dp3t", "cwa"})),
    "CorruptPhoneTestDBRead": ("phone", frozenset({"dp3t"})),
    "CorruptPhoneTestDBWrite": ("phone", frozenset({"dp3t"})),
    "CorruptBState": ("backend", frozenset({"robert", "dp3t", "cwa"})),
    "CorruptBReceive": ("backend", frozenset({"robert", "dp3t"})),
    "CorruptBSend": ("backend", frozenset({"robert", "cwa"})),
    "CorruptBReceiveFromVS": ("backend", frozenset({"cwa"})),
    "CorruptBReceiveFromPhone": ("backend", frozenset({"cwa"})),
    "CorruptQRList": ("backend", frozenset({"robert"})),
    "CorruptBIDTable": ("backend", frozenset({"robert"})),
    "CorruptBFederationKey": ("backend", frozenset({"robert"})),
    "CorruptVSSendToTRSnB": ("vs", frozenset({"cwa"})),
    "CorruptVSReceiveFromTRSnB": ("vs", frozenset({"cwa"})),
    "CorruptVSSendToPhone": ("vs", frozenset({"cwa"})),
    "CorruptVSReceiveFromPhone": ("vs", frozenset({"cwa"})),
    "CorruptHAState": ("ha", frozenset({"dp3t"})),
    "CorruptHASend": ("ha", frozenset({"dp3t"})),
}

CAPABILITIES = frozenset(CAPABILITY_TABLE)


def atoms(value: Any) -> list[bytes]:
    """Flatten a revealed value into the byte strings it is made of."""
    if isinstance(value, (bytes, bytearray)):
        return [bytes(value)]
    if isinstance(value, bool) or value is None:
        return []
    if isinstance(value, int):
        return [value.to_bytes(8, "big", signed=value < 0)]
    if isinstance(value, str):
        return []
    if isinstance(value, dict):
        return [a for v in value.values() for a in atoms(v)]
    if isinstance(value, (list, tuple, set, frozenset)):
        return [a for v in value for a in atoms(v)]
    if dataclasses.is_dataclass(value):
        return [a for f in dataclasses.fields(value) for a in atoms(getattr(value, f.name))]
    return []


def _teks(value: Any) -> list[gaen.Tek]:
    if isinstance(value, gaen.Tek):
        return [value]
    if isinstance(value, dict):
        return [t for v in value.values() for t in _teks(v)]
    if isinstance(value, (list, tuple)):
        return [t for v in value for t in _teks(v)]
    return []


@dataclass
class Knowledge:
    """Known byte strings with provenance, plus a bounded Dolev-Yao closure."""

    facts: dict[bytes, str] = field(default_factory=dict)
    teks: dict[bytes, int] = field(default_factory=dict)  # key -> day
    publics: set[bytes] = field(default_factory=set)
    secrets: set[bytes] = field(default_factory=set)
    epochs_per_day: int = 144
    _dirty: bool = False

    def learn(self, value: Any, provenance: str, secret: bool = False) -> None:
        for a in atoms(value):
            if a not in self.facts:
                self.facts[a] = provenance
                self._dirty = True
            if secret and len(a) == 32:
                self.secrets.add(a)
        for t in _teks(value):
            self.teks.setdefault(t.key, t.day)

    def learn_public(self, value: bytes, provenance: str = "public") -> None:
        self.publics.add(value)
        self.learn(value, provenance)

    def learn_tek(self, key: bytes, day: int, provenance: str) -> None:
        self.teks[key] = day
        self.learn(key, provenance)

    def provenance(self, value: bytes) -> str | None:
        self.close()
        return self.facts.get(value)

    # -- closure ------------------------------------------------------------

    def _add(self, value: bytes, provenance: str) -> bool:
        if value in self.facts:
            return False
        self.facts[value] = provenance
        return True

    def close(self, max_rounds: int = 6) -> None:
        """Unpair HELLOs and payloads, run DH with known secrets, decrypt with known keys."""
        if not self._dirty:
            return
        for _ in range(max_rounds):
            grew = False
            items = list(self.facts.items())
            keys32 = [v for v, _ in items if len(v) == 32]
            keys24 = [v for v, _ in items if len(v) == ck.PRP64_KEY_LEN]
            for v, prov in items:
                if len(v) == 32 and v not in self.publics:
                    grew |= self._add(v[:16], f"split({prov})")
                    grew |= self._add(v[16:], f"split({prov})")
                if len(v) == 16:
                    grew |= self._add(v[1:9], f"unpair({prov})")
                    grew |= self._add(v[11:16], f"unpair({prov})")
                if len(v) == 8:
                    for k in keys24:
                        block = ck.prp64_decrypt(k, v)
                        ep, ident = ck.unpack_epoch_id(block)
                        grew |= self._add(ident.to_bytes(8, "big"), f"dec({prov})")
                if len(v) > 32:
                    for k in keys32:
                        plain = ck.open_sealed(k, v)
                        if plain is not None:
                            grew |= self._add(plain, f"open({prov})")
                            for i in range(0, len(plain) - 12, 13):
                                grew |= self._add(plain[i + 4:i + 12], f"open({prov})")
            for s in list(self.secrets):
                for pk in self.publics:
                    shared = ck.dh_shared(s, pk)
                    k_enc, k_auth = ck.derive_registration_keys(shared)
                    for k in (shared, k_enc, k_auth):
                        grew |= self._add(k, "dh")
            if not grew:
                break
        self._dirty = False

    # -- membership ---------------------------------------------------------

    def _rpi_owner(self, value: bytes) -> bool:
        for key, day in self.teks.items():
            for j in gaen.day_epochs(day, self.epochs_per_day):
                if len(value) == 16 and gaen.rpi_for(key, j) == value:
                    return True
                if len(value) == 32 and gaen.payload_for(key, j) == value:
                    return True
        return False

    def knows(self, value: bytes) -> bool:
        self.close()
        if value in self.facts or value in self.teks:
            return True
        if len(value) in (16, 32) and self._rpi_owner(value):
            return True
        return False


class Adversary:
    """Scripted attacker sharing the world of the honest agents."""

    name = ADVERSARY

    def __init__(self, world: World, protocol: str):
        self.world = world
        self.protocol = protocol
        self.kb = Knowledge(epochs_per_day=world.clock.epochs_per_day)
        self.held: set[tuple[str, str]] = set()
        self.emitted: list[tuple[str, bytes]] = []

    # -- capabilities ---------------------------------------------------------

    def check_capability(self, target: Any, label: str) -> None:
        if label not in CAPABILITY_TABLE:
            raise InvalidCapability(f"unknown capability {label}")
        role, protocols = CAPABILITY_TABLE[label]
        if role == "bluetooth":
            raise InvalidCapability(f"{label} is exercised through ble_read/ble_write")
        if getattr(target, "ROLE", None) != role:
            raise InvalidCapability(f"{label} needs a {role}, {getattr(target, 'name', target)!r} is not one")
        if self.protocol not in protocols:
            raise InvalidCapability(f"{label} does not exist in {self.protocol}")

    def corrupt(self, target: Any, label: str, **kw: Any) -> dict:
        """Invoke ``label`` on ``target``; log the Corrupt event and learn the payload."""
        self.check_capability(target, label)
        payload = target.corruption_payload(label, **kw)
        secret = label in ("CorruptPhoneKey", "CorruptBState", "CorruptHAState", "CorruptBIDTable")
        self.kb.learn(payload, f"{label}@{target.name}", secret=secret)
        if label == "CorruptPhoneKey" and getattr(target, "PROTOCOL", "") != "robert":
            for t in _teks(payload):
                self.kb.learn_tek(t.key, t.day, f"{label}@{target.name}")
        if label in ("CorruptPhoneKey", "CorruptPhoneSend", "CorruptPhoneReceive",
                     "CorruptPhoneTestDBRead", "CorruptPhoneTestDBWrite"):
            target.compromised = True
        self.held.add((target.name, label))
        extra = {k: v for k, v in kw.items() if isinstance(v, (str, int))}
        self.world.emit(EventKind.CORRUPT, target=target.name, capability=label,
                        payload=sorted({digest(a) for a in atoms(payload)}), **extra)
        return payload

    def holds(self, target: Any, label: str) -> bool:
        return (target.name, label) in self.held

    def require(self, target: Any, label: str) -> None:
        if not self.holds(target, label):
            raise InvalidCapability(f"adversary does not hold {label} on {target.name}")

    def log_use(self, target: Any, label: str, values: Iterable[bytes] = (), **detail: Any) -> None:
        """Record an injection through a held channel-end capability."""
        self.require(target, label)
        self.world.emit(EventKind.CORRUPT, target=target.name, capability=label,
                        payload=sorted({digest(v) for v in values}), **detail)

    # -- Bluetooth ------------------------------------------------------------

    def ble_read(self, place: str) -> list[bytes]:
        msgs = self.world.ble_read(ADVERSARY, place, honest=False)
        for m in msgs:
            self.kb.learn(m, f"BLErd@{place}")
        return msgs

    def ble_write(self, place: str, msg: bytes) -> None:
        self.ensure_known(msg, "BLEwr")
        self.world.ble_write(ADVERSARY, place, msg, honest=False)

    # -- Internet -------------------------------------------------------------

    def eavesdrop(self, values: Iterable[bytes], where: str = "internet") -> None:
        """Passive Internet observation needs no capability."""
        for v in values:
            self.kb.learn(v, where)

    def learn_public(self, value: bytes) -> None:
        self.kb.learn_public(value)

    def learn_released(self, bundle: Iterable[gaen.ReleasedKey]) -> list[gaen.ReleasedKey]:
        """Released-key bundles are public downloads."""
        bundle = list(bundle)
        for rk in bundle:
            self.kb.learn_tek(rk.tek, rk.day, f"bundle@{rk.country}")
        return bundle

    # -- knowledge ------------------------------------------------------------

    def knows(self, value: bytes) -> bool:
        return self.kb.knows(value)

    def ensure_known(self, value: bytes, use: str) -> None:
        if not self.kb.knows(value):
            raise NotKnown(f"{use}: adversary cannot derive {digest(value)}")
        self.emitted.append((use, value))

    def derive(self, value: bytes, provenance: str) -> bytes:
        """Register a value the adversary just computed from known inputs."""
        self.kb.learn(value, provenance)
        return value

    def audit(self) -> list[tuple[str, bytes]]:
        """Emitted values that are not derivable; empty for a sound script."""
        return [(u, v) for u, v in self.emitted if not self.kb.knows(v)]

    # -- constructors ---------------------------------------------------------

    def need(self, *values: bytes) -> None:
        for v in values:
            if not self.kb.knows(v):
                raise NotKnown(f"adversary does not know {digest(v)}")

    def forge_tek(self, day: int) -> gaen.Tek:
        tek = gaen.Tek(self.world.randbytes(16), day, day * self.world.clock.epochs_per_day)
        self.kb.learn_tek(tek.key, day, "fresh")
        return tek

    def gaen_payload(self, tek: bytes, epoch: int) -> bytes:
        self.need(tek)
        return self.derive(gaen.payload_for(tek, epoch), "rpi(tek)")

    def robert_hello(self, k_auth: bytes, ecc: int, ebid: bytes, tick: int) -> bytes:
        from .robert import HelloMsg

        self.need(k_auth, ebid)
        return self.derive(HelloMsg.build(k_auth, ecc, ebid, tick).encode(), "hello(K_auth)")

    def robert_mint(self, k_s: bytes, k_fed: bytes, country_code: int, id_a: int, epoch: int) -> tuple[bytes, int]:
        """EBID and ECC for an arbitrary identifier, given the back-end secrets."""
        self.need(k_s, k_fed, id_a.to_bytes(8, "big"))
        ebid = ck.prp64_encrypt(k_s, ck.pack_epoch_id(epoch, id_a))
        self.derive(ebid, "senc(K_S)")
        return ebid, ck.ecc_encrypt(k_fed, ebid, country_code)

    def open_sealed(self, key: bytes, blob: bytes) -> bytes:
        self.need(key, blob)
        plain = ck.open_sealed(key, blob)
        if plain is None:
            raise NotKnown("sealed message does not open under the given key")
        return self.derive(plain, "open")

    def robert_qr(self, secret: bytes, country: str, kind, valid_from: int, expires: int):
        """A fresh QR token signed with a leaked issuer key."""
        from .robert import RobertQr

        self.need(secret)
        token = self.derive(self.world.randbytes(16), "fresh")
        qr = RobertQr(token, kind, country, valid_from, expires, None)
        return RobertQr(token, kind, country, valid_from, expires, None, self.sign_with(secret, qr.message()))

    def robert_registration_keys(self, secret: bytes, peer_public: bytes) -> tuple[bytes, bytes]:
        self.need(secret, peer_public)
        k_enc, k_auth = ck.derive_registration_keys(ck.dh_shared(secret, peer_public))
        return self.derive(k_enc, "dh"), self.derive(k_auth, "dh")

    def sign_with(self, secret: bytes, msg: bytes) -> bytes:
        self.need(secret)
        return self.derive(ck.sign(secret, msg), "sign")
