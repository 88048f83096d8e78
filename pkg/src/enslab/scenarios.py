"""Scripted runs: honest baselines, one scenario per attack pattern, mitigations and group uploads.

Every script drives one World through honest agents and, where needed, a
capability-based adversary.  The runner checks the resulting trace and
compares the classified patterns with ``Scenario.expect``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable

from . import gaen
from .adversary import Adversary
from .cwa import CwaBackend, CwaConfig, CwaPhone, Efgs, EfgsConfig, TestSite, VerificationServer
from .dp3t import (
    AuthCode,
    Dp3tBackend,
    Dp3tConfig,
    Dp3tHealthAuthority,
    Dp3tPhone,
    UploadTuple,
    commitment_hash,
)
from .dp3t import federate as dp3t_federate
from .errors import DuplicateKeyDay, GuidAlreadyUsed
from .robert import (
    QrKind,
    RobertBackend,
    RobertConfig,
    RobertHealthAuthority,
    RobertPhone,
    StatusResponse,
    UploadRecord,
    decode_schedule,
)
from .robert import federate as robert_federate
from .worldmodel import ClockConfig, World

# -- configuration ---------------------------------------------------------------

CONFIG_SECTIONS: dict[str, type] = {
    "robert": RobertConfig,
    "dp3t": Dp3tConfig,
    "cwa": CwaConfig,
    "efgs": EfgsConfig,
    "clock": ClockConfig,
}


def config_defaults() -> dict[str, Any]:
    out = {}
    for prefix, cls in CONFIG_SECTIONS.items():
        for f in dataclasses.fields(cls):
            out[f"{prefix}.{f.name}"] = f.default
    return out


def parse_config_value(key: str, text: str) -> Any:
    """Coerce a command-line string to the type of the default for ``key``."""
    defaults = config_defaults()
    if key not in defaults:
        raise KeyError(f"unknown config key {key}")
    default = defaults[key]
    low = text.strip().lower()
    if low in ("none", "null"):
        return None
    if isinstance(default, bool):
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key} expects a boolean, got {text!r}")
    if isinstance(default, int) or default is None:
        return int(text, 0)
    return text


def build_config(cls: type, prefix: str, values: dict[str, Any]):
    kw = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key in values:
            v = values[key]
            kw[f.name] = parse_config_value(key, v) if isinstance(v, str) else v
    return cls(**kw)


@dataclass
class Ctx:
    """Handed to every script: the world, merged config and a lazily created adversary."""

    world: World
    config: dict[str, Any] = field(default_factory=dict)
    _adversary: Adversary | None = None

    def cfg(self, cls: type, prefix: str):
        return build_config(cls, prefix, self.config)

    def adversary(self, protocol: str) -> Adversary:
        if self._adversary is None:
            self._adversary = Adversary(self.world, protocol)
        return self._adversary


@dataclass(frozen=True)
class Scenario:
    id: str
    protocol: str
    script: Callable[[Ctx], None]
    expect: frozenset[str] = frozenset()
    config: dict[str, Any] = field(default_factory=dict)
    mitigates: str | None = None  # id of the unmitigated twin
    expect_alarms: int | None = None
    description: str = ""


SCENARIOS: dict[str, Scenario] = {}


def scenario(sid: str, protocol: str, expect=(), config=None, mitigates=None, alarms=None, description=""):
    def deco(fn: Callable[[Ctx], None]) -> Callable[[Ctx], None]:
        doc = description or (fn.__doc__ or "").strip().splitlines()[0]
        SCENARIOS[sid] = Scenario(sid, protocol, fn, frozenset(expect), dict(config or {}), mitigates, alarms, doc)
        return fn
    return deco


# -- labs ------------------------------------------------------------------------


class _Lab:
    def __init__(self, ctx: Ctx):
        self.ctx = ctx
        self.w = ctx.world
        self.phones: dict[str, Any] = {}

    def at(self, day: int, epoch: int = 6, second: int = 60) -> None:
        self.w.goto(day, epoch, second)
        for p in self.phones.values():
            self._prepare(p, day)

    def _prepare(self, phone, day: int) -> None:
        pass

    @staticmethod
    def contact(place: str, a, b) -> None:
        # interleaved so both HELLO timestamps stay fresh
        a.broadcast(place)
        b.scan(place)
        b.broadcast(place)
        a.scan(place)


class RobertLab(_Lab):
    def __init__(self, ctx: Ctx, countries=(("FR", 0x21),)):
        super().__init__(ctx)
        cfg = ctx.cfg(RobertConfig, "robert")
        self.backends = {c: RobertBackend(self.w, c, code, cfg) for c, code in countries}
        robert_federate(*self.backends.values())
        self.ha = {c: RobertHealthAuthority(self.w, b) for c, b in self.backends.items()}
        for ha in self.ha.values():
            ha.fetch_sheet(0)
        self._days: dict[str, set[int]] = {}

    @property
    def backend(self) -> RobertBackend:
        return next(iter(self.backends.values()))

    def phone(self, name: str, country: str | None = None) -> RobertPhone:
        p = RobertPhone(self.w, name, self.backends[country] if country else self.backend)
        p.register()
        self.phones[name] = p
        self._days[name] = set()
        self._prepare(p, self.w.day())
        return p

    def _prepare(self, phone, day: int) -> None:
        if day not in self._days[phone.name]:
            phone.refresh(day)
            self._days[phone.name].add(day)

    def diagnose(self, phone: RobertPhone, window: tuple[int, int]):
        return self.ha[phone.country].diagnose(phone, window)


class Dp3tLab(_Lab):
    def __init__(self, ctx: Ctx, country: str = "CH"):
        super().__init__(ctx)
        self.cfg = ctx.cfg(Dp3tConfig, "dp3t")
        self.country = country
        self.ha = Dp3tHealthAuthority(self.w, country)
        self.backend = Dp3tBackend(self.w, country, self.ha.keys.public, self.cfg)
        dp3t_federate(self.backend)

    def phone(self, name: str) -> Dp3tPhone:
        p = Dp3tPhone(self.w, name, self.country, self.cfg)
        p.pinned_keys[self.country] = self.backend.keys.public
        self.phones[name] = p
        return p

    def _prepare(self, phone, day: int) -> None:
        if phone.tek_for_day(day) is None:
            phone.new_tek()

    def diagnose(self, phone: Dp3tPhone, window: tuple[int, int], commit: bool = True) -> None:
        if commit:
            phone.commit_keys()
        codes = self.ha.diagnose_and_sign(phone, phone.commitments(), window)
        phone.receive_result(codes, window)

    def upload(self, phone: Dp3tPhone, respect_window: bool = True):
        return self.backend.upload_keys(phone.name, phone.upload_tuples(respect_window))

    def notify(self, *phones: Dp3tPhone) -> None:
        for v in phones:
            v.check_exposure(self.backend.publish_and_fetch(v))

    def forged_tuple(self, adv: Adversary, secret: bytes, tek: gaen.Tek) -> UploadTuple:
        """Upload tuple for ``tek`` carrying an authorisation code signed with a leaked HA key."""
        r = adv.derive(self.w.randbytes(16), "fresh")
        h = commitment_hash(tek.key, tek.start_epoch, r)
        day = self.w.day()
        sig = adv.sign_with(secret, AuthCode.message(h, day, self.country))
        return UploadTuple(tek.key, tek.start_epoch, r, AuthCode(h, day, self.country, sig))


class CwaLab(_Lab):
    def __init__(self, ctx: Ctx, countries=("DE",), local_delays: dict[str, int] | None = None):
        super().__init__(ctx)
        self.cfg = ctx.cfg(CwaConfig, "cwa")
        self.efgs = Efgs(self.w, ctx.cfg(EfgsConfig, "efgs"))
        default_delay = self.efgs.config.release_delay_hours * 3600
        delays = local_delays or {}
        self.vs, self.backends, self.sites = {}, {}, {}
        for c in countries:
            self.vs[c] = VerificationServer(self.w, c, self.cfg)
            self.backends[c] = CwaBackend(self.w, c, self.vs[c], self.efgs, delays.get(c, default_delay))
            self.sites[c] = TestSite(self.w, c, self.vs[c])
        self.home = countries[0]

    @property
    def backend(self) -> CwaBackend:
        return self.backends[self.home]

    def phone(self, name: str, country: str | None = None) -> CwaPhone:
        p = CwaPhone(self.w, name, country or self.home, self.cfg)
        for c, b in self.backends.items():
            p.pinned_keys[c] = b.keys.public
        self.phones[name] = p
        return p

    def _prepare(self, phone, day: int) -> None:
        if phone.tek_for_day(day) is None:
            phone.new_tek()

    def test_positive(self, phone: CwaPhone, window: tuple[int, int]) -> bytes:
        site, vs = self.sites[phone.country], self.vs[phone.country]
        guid = site.take_test()
        phone.scan_and_register(vs, guid)
        site.report(phone.name, guid, True, window)
        phone.poll_result(vs)
        phone.request_tan(vs)
        return guid

    def upload(self, phone: CwaPhone, window: tuple[int, int]):
        return phone.upload(self.backends[phone.country], days=window)

    def notify(self, *phones: CwaPhone) -> None:
        for v in phones:
            v.check_exposure(self.backends[v.country].fetch())


# == honest baselines ============================================================


@scenario("honest.robert", "robert")
def honest_robert(ctx: Ctx) -> None:
    """Two contacts, one diagnosis, the real contact is notified and the bystander is not."""
    lab = RobertLab(ctx)
    P, V, W = lab.phone("P"), lab.phone("V"), lab.phone("W")
    lab.at(1, 6)
    lab.contact("cafe", P, V)
    lab.at(1, 20)
    lab.contact("park", V, W)
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    P.upload()
    for ph in (V, W):
        ph.status()


@scenario("honest.dp3t", "dp3t")
def honest_dp3t(ctx: Ctx) -> None:
    """Commit, diagnose, upload the window, the contact matches after release."""
    lab = Dp3tLab(ctx)
    P, V, W = lab.phone("P"), lab.phone("V"), lab.phone("W")
    lab.at(1, 6)
    lab.contact("cafe", P, V)
    lab.at(1, 20)
    lab.contact("park", V, W)
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    lab.upload(P)
    lab.notify(V, W)


@scenario("honest.cwa", "cwa")
def honest_cwa(ctx: Ctx) -> None:
    """guid, registration token, TAN, upload, release after the agreed expiry."""
    lab = CwaLab(ctx)
    P, V, W = lab.phone("P"), lab.phone("V"), lab.phone("W")
    lab.at(1, 6)
    lab.contact("cafe", P, V)
    lab.at(1, 20)
    lab.contact("park", V, W)
    lab.at(3, 0)
    lab.test_positive(P, (0, 3))
    lab.upload(P, (0, 3))
    lab.at(3, 13)
    lab.notify(V, W)


# == ROBERT ======================================================================


def _robert_reflect(ctx: Ctx) -> None:
    """The adversary echoes P's own HELLO back to P; P later matches itself."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    P = lab.phone("P")
    lab.at(1, 6)
    P.broadcast("home")
    adv.ble_write("home", adv.ble_read("home")[0])
    P.scan("home")
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    P.upload()
    P.status()


scenario("robert.X1", "robert", expect={"X1"})(_robert_reflect)
scenario("robert.X1.mitigated", "robert", config={"robert.self_filter": True}, mitigates="robert.X1",
         description="Reflection with the back end dropping the uploader's own HELLOs")(_robert_reflect)


def _robert_out_of_window(ctx: Ctx) -> None:
    """A diagnosed phone uploads contacts from before its contagious window."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(1, 6)
    lab.contact("office", P, V)
    adv.corrupt(P, "CorruptPhoneSend")
    lab.at(8, 0)
    lab.diagnose(P, (6, 8))
    P.upload(records=[UploadRecord(r.hello, r.tick) for r in P.received])
    V.status()


scenario("robert.X2", "robert", expect={"X2"})(_robert_out_of_window)
scenario("robert.X2.mitigated", "robert", config={"robert.bind_window_to_token": True}, mitigates="robert.X2",
         description="Out-of-window upload against a token bound to the diagnosis window")(_robert_out_of_window)


@scenario("robert.X3", "robert", expect={"X3"})
def robert_relay(ctx: Ctx) -> None:
    """V's HELLO is relayed from the station to the hospital where P hears it."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(1, 6)
    V.broadcast("station")
    adv.ble_write("hospital", adv.ble_read("station")[0])
    P.scan("hospital")
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    P.upload()
    V.status()


@scenario("robert.X4", "robert", expect={"X4"})
def robert_collect_upload(ctx: Ctx) -> None:
    """A HELLO sniffed elsewhere is uploaded by a compromised diagnosed phone."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(1, 6)
    V.broadcast("station")
    heard_at = ctx.world.now
    hello = adv.ble_read("station")[0]
    adv.corrupt(P, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    adv.ensure_known(hello, "upload")
    P.upload(records=P.records() + [UploadRecord(hello, heard_at)])
    V.status()


@scenario("robert.X5", "robert", expect={"X5"})
def robert_fake_status(ctx: Ctx) -> None:
    """The back end's outgoing channel answers V's status request with a fake exposure."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    V = lab.phone("V")
    lab.at(2, 10)
    adv.corrupt(lab.backend, "CorruptBSend")
    adv.log_use(lab.backend, "CorruptBSend", victim=V.name)
    V.handle_status(StatusResponse(True, ctx.world.now))


@scenario("robert.X6", "robert", expect={"X6"})
def robert_mint_ebid(ctx: Ctx) -> None:
    """Back-end secrets let the adversary mint V's EBID and have a helper upload it."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    b = lab.backend
    V, M = lab.phone("V"), lab.phone("M")
    lab.at(2, 30)
    claim_tick = ctx.world.now
    k_s = adv.corrupt(b, "CorruptBState")["K_S"]
    k_fed = adv.corrupt(b, "CorruptBFederationKey")["K_fed"]
    _, k_auth, id_a = adv.corrupt(b, "CorruptBIDTable")[f"id[{V.name}]"]
    adv.corrupt(M, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.diagnose(M, (0, 3))
    ebid, ecc = adv.robert_mint(k_s, k_fed, b.country_code, id_a, b.epoch(claim_tick))
    hello = adv.robert_hello(k_auth, ecc, ebid, claim_tick)
    M.upload(records=[UploadRecord(hello, claim_tick)])
    V.status()


@scenario("robert.X7", "robert", expect={"X7"})
def robert_phone_key(ctx: Ctx) -> None:
    """V's registration secret opens its EBID schedule; a helper uploads a forged HELLO."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    b = lab.backend
    V, H = lab.phone("V"), lab.phone("H")
    adv.learn_public(b.dh.public)
    lab.at(2, 0)
    adv.eavesdrop([blob for name, blob in b.wire if name == V.name])
    sk_a = adv.corrupt(V, "CorruptPhoneKey")["sk_A"]
    k_enc, k_auth = adv.robert_registration_keys(sk_a, b.dh.public)
    schedule = {}
    for name, blob in b.wire:
        if name != V.name:
            continue
        plain = adv.open_sealed(k_enc, blob)
        if len(plain) > 5 and len(plain) % 13 == 0:
            schedule.update({e.epoch: e for e in decode_schedule(plain)})
    lab.at(2, 30)
    claim_tick = ctx.world.now
    entry = schedule[b.epoch(claim_tick)]
    hello = adv.robert_hello(k_auth, entry.ecc, entry.ebid, claim_tick)
    adv.corrupt(H, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.diagnose(H, (0, 3))
    H.upload(records=[UploadRecord(hello, claim_tick)])
    V.status()


def _robert_token_lab(ctx: Ctx):
    lab = RobertLab(ctx, countries=(("FR", 0x21), ("DE", 0x42)))
    P = lab.phone("P", "DE")
    M, V = lab.phone("M", "FR"), lab.phone("V", "FR")
    lab.at(1, 6)
    lab.contact("bus", M, V)
    lab.at(3, 0)
    return lab, P, M


def _robert_misuse(ctx: Ctx, lab: RobertLab, M: RobertPhone, qr) -> None:
    adv = ctx.adversary("robert")
    adv.corrupt(M, "CorruptPhoneSend")
    adv.ensure_known(qr.token, "upload")
    M.upload(qr=qr)


@scenario("robert.A1", "robert", expect={"A1"})
def robert_token_from_phone(ctx: Ctx) -> None:
    """A positive phone's QR leaks on its incoming channel and authorises another upload."""
    lab, P, M = _robert_token_lab(ctx)
    adv = ctx.adversary("robert")
    lab.diagnose(P, (0, 3))
    qr = adv.corrupt(P, "CorruptPhoneReceive")["qr"]
    _robert_misuse(ctx, lab, M, qr)


@scenario("robert.A2", "robert", expect={"A2"})
def robert_token_from_list(ctx: Ctx) -> None:
    """An unused code from the issuer's QR list authorises an upload in a federated country."""
    lab, P, M = _robert_token_lab(ctx)
    adv = ctx.adversary("robert")
    now = ctx.world.now
    listing = adv.corrupt(lab.backends["DE"], "CorruptQRList")
    qr = next(q for q in listing.values() if q.valid_from <= now <= q.expires)
    _robert_misuse(ctx, lab, M, qr)


@scenario("robert.A3", "robert", expect={"A3"})
def robert_token_intercepted(ctx: Ctx) -> None:
    """P's upload is captured at the back end's receiving end and its token reused."""
    lab, P, M = _robert_token_lab(ctx)
    adv = ctx.adversary("robert")
    lab.diagnose(P, (0, 3))
    msg = P.upload_message()
    captured = adv.corrupt(lab.backends["DE"], "CorruptBReceive", message=msg)["message"]
    _robert_misuse(ctx, lab, M, captured[0])


@scenario("robert.A4", "robert", expect={"A4"})
def robert_token_forged(ctx: Ctx) -> None:
    """The issuer's signing key mints a fresh QR code."""
    lab, P, M = _robert_token_lab(ctx)
    adv = ctx.adversary("robert")
    secret = adv.corrupt(lab.backends["DE"], "CorruptBState")["qr_sig_secret"]
    w = ctx.world
    qr = adv.robert_qr(secret, "DE", QrKind.LONG, w.day_start(w.day()), w.day_start(w.day() + 8) - 1)
    _robert_misuse(ctx, lab, M, qr)


# == DP3T ========================================================================


@scenario("dp3t.Y1", "dp3t", expect={"Y1"})
def dp3t_out_of_window(ctx: Ctx) -> None:
    """A diagnosed phone uploads a key from before its contagious window."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(1, 6)
    lab.contact("office", P, V)
    adv.corrupt(P, "CorruptPhoneSend")
    lab.at(8, 0)
    lab.diagnose(P, (6, 8))
    lab.upload(P, respect_window=False)
    lab.notify(V)


@scenario("dp3t.Y2", "dp3t", expect={"Y2"})
def dp3t_stolen_key_broadcast(ctx: Ctx) -> None:
    """An infected phone's key is stolen and broadcast where the phone never was."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(2, 10)
    P.broadcast("home")
    tek = adv.corrupt(P, "CorruptPhoneKey", day=2)["tek[2]"]
    lab.at(2, 40)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    lab.upload(P)
    lab.notify(V)


@scenario("dp3t.Y3", "dp3t", expect={"Y3"})
def dp3t_replay(ctx: Ctx) -> None:
    """A payload heard at the hospital is replayed later the same day at the mall."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(2, 10)
    P.broadcast("hospital")
    msg = adv.ble_read("hospital")[0]
    lab.at(2, 30)
    adv.ble_write("mall", msg)
    V.scan("mall")
    lab.at(3, 0)
    lab.diagnose(P, (0, 3))
    lab.upload(P)
    lab.notify(V)


@scenario("dp3t.Y4", "dp3t", expect={"Y4"})
def dp3t_forged_key_ha(ctx: Ctx) -> None:
    """A fresh key is broadcast and uploaded under a code signed with the leaked HA key."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    V, M = lab.phone("V"), lab.phone("M")
    secret = adv.corrupt(lab.ha, "CorruptHAState")["ha_sig_secret"]
    tek = adv.forge_tek(2)
    lab.at(2, 20)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    adv.corrupt(M, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.backend.upload_keys(M.name, [lab.forged_tuple(adv, secret, tek)])
    lab.notify(V)


@scenario("dp3t.Y5", "dp3t", expect={"Y5", "B1"})
def dp3t_healthy_key(ctx: Ctx) -> None:
    """A healthy phone's stolen key is replayed at two places and uploaded with a forged code."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    V2, V, V3, M = lab.phone("V2"), lab.phone("V"), lab.phone("V3"), lab.phone("M")
    lab.at(2, 5)
    tek = adv.corrupt(V2, "CorruptPhoneKey", day=2)["tek[2]"]
    lab.at(2, 20)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    lab.at(2, 50)
    adv.ble_write("gym", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V3.scan("gym")
    secret = adv.corrupt(lab.ha, "CorruptHAState")["ha_sig_secret"]
    adv.corrupt(M, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.backend.upload_keys(M.name, [lab.forged_tuple(adv, secret, tek)])
    lab.notify(V, V3)


@scenario("dp3t.Y6", "dp3t", expect={"Y6"})
def dp3t_forged_bundle(ctx: Ctx) -> None:
    """A real contact's key, never uploaded, is pushed to R in a bundle signed with the leaked back-end key."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    S, R = lab.phone("S"), lab.phone("R")
    lab.at(2, 10)
    lab.contact("cafe", S, R)
    tek = adv.corrupt(S, "CorruptPhoneKey", day=2)["tek[2]"]
    secret = adv.corrupt(lab.backend, "CorruptBState")["backend_sig_secret"]
    lab.at(3, 0)
    sig = adv.sign_with(secret, gaen.release_message(tek.key, 2, lab.country))
    R.check_exposure([gaen.ReleasedKey(tek.key, 2, lab.country, sig)])


@scenario("dp3t.Y7", "dp3t", expect={"Y7"})
def dp3t_forged_key_bundle(ctx: Ctx) -> None:
    """A fresh key is broadcast to V and then pushed in a forged signed bundle."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    V = lab.phone("V")
    tek = adv.forge_tek(2)
    lab.at(2, 20)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    secret = adv.corrupt(lab.backend, "CorruptBState")["backend_sig_secret"]
    lab.at(3, 0)
    sig = adv.sign_with(secret, gaen.release_message(tek.key, 2, lab.country))
    V.check_exposure([gaen.ReleasedKey(tek.key, 2, lab.country, sig)])


@scenario("dp3t.B1", "dp3t", expect={"B1"})
def dp3t_upload_other_key(ctx: Ctx) -> None:
    """A healthy phone's key is uploaded by another phone with a forged code."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    V, M = lab.phone("V"), lab.phone("M")
    lab.at(2, 5)
    tek = adv.corrupt(V, "CorruptPhoneKey", day=2)["tek[2]"]
    secret = adv.corrupt(lab.ha, "CorruptHAState")["ha_sig_secret"]
    adv.corrupt(M, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.backend.upload_keys(M.name, [lab.forged_tuple(adv, secret, tek)])


@scenario("dp3t.B2", "dp3t", expect={"B2"})
def dp3t_fake_result(ctx: Ctx) -> None:
    """A healthy tested phone receives forged codes for its own commitments and uploads."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    V = lab.phone("V")
    lab.at(1, 5)
    lab.at(2, 5)
    lab.at(3, 0)
    V.commit_keys()
    rows = adv.corrupt(V, "CorruptPhoneTestDBRead")
    secret = adv.corrupt(lab.ha, "CorruptHAState")["ha_sig_secret"]
    day = ctx.world.day()
    codes = []
    for tek, t, r in rows.values():
        h = adv.derive(commitment_hash(tek, t, r), "hash")
        codes.append(AuthCode(h, day, lab.country, adv.sign_with(secret, AuthCode.message(h, day, lab.country))))
    adv.corrupt(lab.ha, "CorruptHASend")
    adv.log_use(lab.ha, "CorruptHASend", [c.sig for c in codes], victim=V.name)
    V.receive_result(codes, None)
    lab.upload(V)


@scenario("dp3t.B3", "dp3t", expect={"B3"})
def dp3t_planted_row(ctx: Ctx) -> None:
    """A healthy phone's key is planted in a positive phone's test database."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(2, 5)
    tek = adv.corrupt(V, "CorruptPhoneKey", day=2)["tek[2]"]
    lab.at(3, 0)
    P.commit_keys()
    adv.corrupt(P, "CorruptPhoneTestDBWrite", tek=tek)
    lab.diagnose(P, (0, 3), commit=False)
    lab.upload(P)


# == CWA =========================================================================


@scenario("cwa.Z1", "cwa", expect={"Z1"})
def cwa_relay(ctx: Ctx) -> None:
    """A payload is relayed to another place within the skew tolerance."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    P, V = lab.phone("P"), lab.phone("V")
    lab.at(2, 10)
    P.broadcast("hospital")
    msg = adv.ble_read("hospital")[0]
    lab.at(2, 18)
    adv.ble_write("mall", msg)
    V.scan("mall")
    lab.at(3, 0)
    lab.test_positive(P, (0, 3))
    lab.upload(P, (0, 3))
    lab.at(3, 13)
    lab.notify(V)


def _cwa_efgs_gap(ctx: Ctx) -> None:
    """A key released early by one country is replayed to a phone of another country."""
    lab = CwaLab(ctx, countries=("DE", "FR"), local_delays={"DE": 0, "FR": 7200})
    adv = ctx.adversary("cwa")
    w = ctx.world
    P, V = lab.phone("P", "DE"), lab.phone("V", "FR")
    P.visited.add("FR")
    lab.at(1, 143)
    lab.at(2, 0)
    lab.test_positive(P, (0, 2))
    lab.upload(P, (0, 2))
    tek = None
    for k in range(0, 20):
        w.goto(2, k, 120)
        found = [rk for rk in adv.learn_released(lab.backends["DE"].fetch()) if rk.day == 1]
        if found:
            tek = found[0].tek
            break
    if tek is None:
        return
    last = gaen.day_epochs(1, w.clock.epochs_per_day).stop - 1
    adv.ble_write("mall", adv.gaen_payload(tek, last))
    V.scan("mall")
    lab.at(2, 30)
    lab.notify(V)


scenario("cwa.Z1.efgs", "cwa", expect={"Z1"}, config={"efgs.expiry_agreement": False})(_cwa_efgs_gap)
scenario("cwa.Z1.efgs.mitigated", "cwa", mitigates="cwa.Z1.efgs",
         description="Cross-country replay when every country releases at the agreed expiry")(_cwa_efgs_gap)


@scenario("cwa.Z2", "cwa", expect={"Z2"})
def cwa_stolen_tan(ctx: Ctx) -> None:
    """A TAN captured at the back end authorises a forged key that was broadcast to V."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    P, V, M = lab.phone("P"), lab.phone("V"), lab.phone("M")
    tek = adv.forge_tek(2)
    lab.at(2, 20)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    lab.at(3, 0)
    lab.test_positive(P, (0, 3))
    tan = adv.corrupt(lab.backend, "CorruptBReceiveFromPhone", message=P.upload_message((0, 3)))["tan"]
    adv.corrupt(M, "CorruptPhoneSend")
    adv.ensure_known(tan, "upload")
    lab.backend.upload_teks(M.name, [tek], tan)
    lab.at(3, 13)
    lab.notify(V)


@scenario("cwa.Z3", "cwa", expect={"Z3", "C1"})
def cwa_healthy_key(ctx: Ctx) -> None:
    """A healthy phone's key is replayed and uploaded with a TAN stolen from a positive phone."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    P, V2, V, V3, M = (lab.phone(n) for n in ("P", "V2", "V", "V3", "M"))
    lab.at(2, 5)
    tek = adv.corrupt(V2, "CorruptPhoneKey", day=2)["tek[2]"]
    lab.at(2, 20)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    lab.at(2, 40)
    adv.ble_write("gym", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V3.scan("gym")
    lab.at(3, 0)
    lab.test_positive(P, (0, 3))
    tan = adv.corrupt(P, "CorruptPhoneReceive")["tan"]
    adv.corrupt(M, "CorruptPhoneSend")
    lab.backend.upload_teks(M.name, [tek], tan)
    lab.at(3, 13)
    lab.notify(V, V3)


@scenario("cwa.Z4", "cwa", expect={"Z4"})
def cwa_forged_bundle(ctx: Ctx) -> None:
    """A fresh key is broadcast and pushed in a bundle signed with the leaked back-end key."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    V = lab.phone("V")
    tek = adv.forge_tek(2)
    lab.at(2, 20)
    adv.ble_write("mall", adv.gaen_payload(tek.key, ctx.world.epoch()))
    V.scan("mall")
    secret = adv.corrupt(lab.backend, "CorruptBState")["backend_sig_secret"]
    lab.at(3, 0)
    sig = adv.sign_with(secret, gaen.release_message(tek.key, 2, lab.home))
    V.check_exposure([gaen.ReleasedKey(tek.key, 2, lab.home, sig)])


@scenario("cwa.C1", "cwa", expect={"C1"})
def cwa_upload_other_key(ctx: Ctx) -> None:
    """A positive phone's TAN authorises the upload of a healthy phone's key."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    P, V, M = lab.phone("P"), lab.phone("V"), lab.phone("M")
    lab.at(2, 5)
    tek = adv.corrupt(V, "CorruptPhoneKey", day=2)["tek[2]"]
    lab.at(3, 0)
    lab.test_positive(P, (0, 3))
    tan = adv.corrupt(P, "CorruptPhoneReceive")["tan"]
    adv.corrupt(M, "CorruptPhoneSend")
    lab.backend.upload_teks(M.name, [tek], tan)
    lab.at(3, 13)
    lab.backend.publish()


def _cwa_guid_replay(ctx: Ctx) -> None:
    """A second phone registers a positive phone's guid and uploads its own keys."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    P, M = lab.phone("P"), lab.phone("M")
    lab.at(1, 5)
    lab.at(2, 5)
    lab.at(3, 0)
    guid = lab.test_positive(P, (0, 3))
    lab.upload(P, (0, 3))
    adv.corrupt(M, "CorruptPhoneSend")
    vs = lab.vs[lab.home]
    try:
        M.scan_and_register(vs, guid)
    except GuidAlreadyUsed:
        return
    M.poll_result(vs)
    M.request_tan(vs)
    M.upload(lab.backend, days=(0, 3))
    lab.at(3, 13)
    lab.backend.publish()


scenario("cwa.C2", "cwa", expect={"C2"}, config={"cwa.one_tan_per_token": False})(_cwa_guid_replay)
scenario("cwa.C2.mitigated", "cwa", mitigates="cwa.C2",
         description="guid replay against a verification server that registers each guid once")(_cwa_guid_replay)


# == group uploads ===============================================================

_GROUP = {"G1": ("V1",), "G2": ("V2", "V3", "V4"), "G3": ("V4", "V5")}
_VICTIMS = ("V1", "V2", "V3", "V4", "V5")


def _group_contacts(lab: _Lab) -> None:
    epoch = 6
    for g, victims in _GROUP.items():
        for v in victims:
            lab.at(2, epoch)
            lab.contact(f"{g}-{v}", lab.phones[g], lab.phones[v])
            epoch += 2


@scenario("group.robert", "robert", expect={"X4"}, alarms=5)
def group_robert(ctx: Ctx) -> None:
    """G1 tests positive and uploads the contacts of the whole group."""
    lab = RobertLab(ctx)
    adv = ctx.adversary("robert")
    for n in (*_GROUP, *_VICTIMS):
        lab.phone(n)
    _group_contacts(lab)
    G1 = lab.phones["G1"]
    pooled = []
    for g in ("G2", "G3"):
        pooled.extend(adv.corrupt(lab.phones[g], "CorruptPhoneReceived").values())
    adv.corrupt(G1, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.diagnose(G1, (0, 3))
    G1.upload(records=G1.records() + [UploadRecord(r.hello, r.tick) for r in pooled])
    for v in _VICTIMS:
        lab.phones[v].status()


@scenario("group.dp3t", "dp3t", expect=(), alarms=1)
def group_dp3t(ctx: Ctx) -> None:
    """G1's authorisation codes are bound to its own keys, so the group key is refused."""
    lab = Dp3tLab(ctx)
    adv = ctx.adversary("dp3t")
    for n in (*_GROUP, *_VICTIMS):
        lab.phone(n)
    _group_contacts(lab)
    G1 = lab.phones["G1"]
    tek = adv.corrupt(lab.phones["G2"], "CorruptPhoneKey", day=2)["tek[2]"]
    adv.corrupt(G1, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.diagnose(G1, (0, 3))
    lab.upload(G1)
    ac = G1.auth_codes[0]
    r = adv.derive(ctx.world.randbytes(16), "fresh")
    lab.backend.upload_keys(G1.name, [UploadTuple(tek.key, tek.start_epoch, r, ac)])
    lab.notify(*(lab.phones[v] for v in _VICTIMS))


@scenario("group.cwa", "cwa", expect={"Z3", "C1"}, alarms=3)
def group_cwa(ctx: Ctx) -> None:
    """One key per day: the group uploads the key of the member with the most contacts."""
    lab = CwaLab(ctx)
    adv = ctx.adversary("cwa")
    for n in (*_GROUP, *_VICTIMS):
        lab.phone(n)
    _group_contacts(lab)
    teks = {g: adv.corrupt(lab.phones[g], "CorruptPhoneKey", day=2)["tek[2]"] for g in _GROUP}
    G1 = lab.phones["G1"]
    adv.corrupt(G1, "CorruptPhoneSend")
    lab.at(3, 0)
    lab.test_positive(G1, (0, 3))
    try:
        lab.backend.upload_teks(G1.name, list(teks.values()), G1.tan)
    except DuplicateKeyDay:
        pass
    best = max(_GROUP, key=lambda g: len(_GROUP[g]))
    lab.backend.upload_teks(G1.name, [teks[best]], G1.tan)
    lab.at(3, 13)
    lab.notify(*(lab.phones[v] for v in _VICTIMS))


MITIGATION_PAIRS: dict[str, str] = {s.id: s.mitigates for s in SCENARIOS.values() if s.mitigates}

