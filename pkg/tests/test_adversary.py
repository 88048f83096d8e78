import pytest

from enslab import cryptokit as ck
from enslab import gaen
from enslab.adversary import CAPABILITIES, CAPABILITY_TABLE, Adversary, Knowledge, atoms
from enslab.dp3t import Dp3tBackend, Dp3tHealthAuthority, Dp3tPhone
from enslab.errors import InvalidCapability, NotKnown
from enslab.robert import QrKind, RobertBackend, RobertPhone
from enslab.worldmodel import ADVERSARY, EventKind, World


def robert_world():
    w = World(31)
    b = RobertBackend(w, "FR", 0x21)
    v = RobertPhone(w, "V", b)
    v.register()
    v.refresh()
    return w, b, v, Adversary(w, "robert")


def test_table_has_22_capabilities_with_roles():
    assert len(CAPABILITIES) == 22
    assert {role for role, _ in CAPABILITY_TABLE.values()} == {"bluetooth", "phone", "backend", "vs", "ha"}


def test_invalid_capabilities():
    w, b, v, adv = robert_world()
    with pytest.raises(InvalidCapability):
        adv.corrupt(b, "CorruptPhoneKey")       # wrong role
    with pytest.raises(InvalidCapability):
        adv.corrupt(b, "CorruptBReceiveFromVS")  # CWA only
    with pytest.raises(InvalidCapability):
        adv.corrupt(v, "CorruptPhoneTestDBRead")  # DP3T only
    with pytest.raises(InvalidCapability):
        adv.corrupt(v, "Teleport")
    with pytest.raises(InvalidCapability):
        adv.corrupt(v, "BLErd")
    with pytest.raises(InvalidCapability):
        adv.log_use(b, "CorruptBSend")           # not held yet
    assert not w.trace.of_kind(EventKind.CORRUPT)


def test_corrupt_logs_payload_digests():
    w, b, v, adv = robert_world()
    out = adv.corrupt(b, "CorruptBFederationKey")
    assert out == {"K_fed": b.k_fed}
    ev = w.trace.of_kind(EventKind.CORRUPT)[-1]
    assert ev["target"] == "B:FR" and ev["capability"] == "CorruptBFederationKey"
    assert len(ev["payload"]) == 1
    assert adv.knows(b.k_fed)
    assert adv.kb.provenance(b.k_fed) == "CorruptBFederationKey@B:FR"


def test_qr_list_reveals_unused_tokens():
    w, b, v, adv = robert_world()
    used = b.issue_qr(QrKind.SHORT)
    fresh = b.issue_qr(QrKind.SHORT)
    b.upload("X", used, [])
    listing = adv.corrupt(b, "CorruptQRList")
    assert [q.token for q in listing.values()] == [fresh.token]
    assert adv.knows(fresh.token) and not adv.knows(used.token)


def test_dp3t_phone_key_reveals_day_key_and_all_its_rpis():
    w = World(2)
    p = Dp3tPhone(w, "P", "CH")
    w.goto(3, 1)
    tek = p.new_tek()
    adv = Adversary(w, "dp3t")
    got = adv.corrupt(p, "CorruptPhoneKey", day=3)
    assert got["tek[3]"].key == tek.key
    rpis = [gaen.rpi_for(tek.key, j) for j in gaen.day_epochs(3, 144)]
    assert len(rpis) == 144
    assert all(adv.knows(r) for r in rpis)
    assert adv.knows(gaen.payload_for(tek.key, 3 * 144 + 7))
    assert not adv.knows(gaen.rpi_for(tek.key, 4 * 144))  # other day


def test_backend_secrets_mint_valid_ephemerals_for_any_id():
    w, b, v, adv = robert_world()
    k_s = adv.corrupt(b, "CorruptBState")["K_S"]
    k_fed = adv.corrupt(b, "CorruptBFederationKey")["K_fed"]
    adv.corrupt(b, "CorruptBIDTable")
    ebid, ecc = adv.robert_mint(k_s, k_fed, 0x21, v.id_a, 5)
    ref = b.mint_entry(v.id_a, 5)
    assert (ebid, ecc) == (ref.ebid, ref.ecc)


def test_mint_needs_secrets():
    w, b, v, adv = robert_world()
    with pytest.raises(NotKnown):
        adv.robert_mint(b.k_s, b.k_fed, 0x21, v.id_a, 5)


def test_ciphertext_alone_reveals_nothing():
    w, b, v, adv = robert_world()
    blob = [s for name, s in b.wire if name == "V"][-1]
    adv.eavesdrop([blob])
    assert adv.knows(blob)
    assert not adv.knows(v.schedule[0].ebid)
    with pytest.raises(NotKnown):
        adv.open_sealed(v.k_enc, blob)


def test_closure_opens_schedule_after_phone_key_and_server_public():
    w, b, v, adv = robert_world()
    adv.eavesdrop([s for name, s in b.wire if name == "V"])
    adv.learn_public(b.dh.public)
    adv.corrupt(v, "CorruptPhoneKey")
    assert adv.knows(v.k_auth)
    assert adv.knows(v.schedule[10].ebid)


def test_ble_write_requires_knowledge_and_audit_is_clean():
    w, b, v, adv = robert_world()
    with pytest.raises(NotKnown):
        adv.ble_write("q", b"x" * 16)
    w.visit("V", "q")
    msg = v.broadcast("q")
    assert adv.ble_read("q") == [msg]
    adv.ble_write("elsewhere", msg)
    assert adv.audit() == []
    wr = w.trace.of_kind(EventKind.BLE_WR)[-1]
    assert wr["actor"] == ADVERSARY and wr["place"] == "elsewhere"


def test_log_use_records_injection():
    w = World(4)
    ha = Dp3tHealthAuthority(w, "CH")
    adv = Adversary(w, "dp3t")
    adv.corrupt(ha, "CorruptHASend")
    adv.log_use(ha, "CorruptHASend", [b"sig"], victim="V")
    ev = w.trace.of_kind(EventKind.CORRUPT)[-1]
    assert ev["victim"] == "V" and ev["capability"] == "CorruptHASend"


def test_forged_bundle_signature_needs_backend_secret():
    w = World(5)
    ha = Dp3tHealthAuthority(w, "CH")
    b = Dp3tBackend(w, "CH", ha.keys.public)
    adv = Adversary(w, "dp3t")
    tek = adv.forge_tek(0)
    msg = gaen.release_message(tek.key, 0, "CH")
    with pytest.raises(NotKnown):
        adv.sign_with(b.keys.secret, msg)
    secret = adv.corrupt(b, "CorruptBState")["backend_sig_secret"]
    assert ck.verify(b.keys.public, msg, adv.sign_with(secret, msg))


def test_atoms_flatten():
    assert atoms({"a": [b"x", (b"y", 1)], "s": "text", "n": None}) == [b"x", b"y", (1).to_bytes(8, "big")]
    kb = Knowledge()
    kb.learn({"k": b"z" * 16}, "test")
    assert kb.knows(b"z" * 16) and kb.provenance(b"z" * 16) == "test"
