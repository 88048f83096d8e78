import pytest

from enslab.cwa import (
    CwaBackend,
    CwaConfig,
    CwaPhone,
    Efgs,
    EfgsConfig,
    TestResult,
    TestSite,
    VerificationServer,
)
from enslab.errors import (
    DuplicateKeyDay,
    GuidAlreadyUsed,
    InvalidTan,
    NotPositive,
    TanAlreadyIssued,
    TanReused,
    TooManyKeys,
)
from enslab.gaen import Tek
from enslab.worldmodel import EventKind, World


def setup(config: CwaConfig | None = None):
    w = World(21)
    vs = VerificationServer(w, "DE", config)
    b = CwaBackend(w, "DE", vs)
    site = TestSite(w, "DE", vs)
    return w, vs, b, site


def positive_phone(w, vs, site, name="P"):
    p = CwaPhone(w, name, "DE")
    guid = site.take_test()
    p.scan_and_register(vs, guid)
    site.report(name, guid, True, (0, w.day()))
    assert p.poll_result(vs) is TestResult.POSITIVE
    p.request_tan(vs)
    return p, guid


def test_fresh_guid_gives_fresh_token_and_only_hashes_are_stored():
    w, vs, b, site = setup()
    g1, g2 = site.take_test(), site.take_test()
    t1, t2 = vs.register(g1), vs.register(g2)
    assert t1 != t2
    assert g1 not in vs.guid_hashes and g2 not in vs.guid_hashes
    assert all(len(x) == 32 for x in vs.guid_hashes)


def test_guid_reregistration_depends_on_mitigation():
    w, vs, b, site = setup(CwaConfig(one_tan_per_token=True))
    g = site.take_test()
    vs.register(g)
    with pytest.raises(GuidAlreadyUsed):
        vs.register(g)
    w2, vs2, _, site2 = setup(CwaConfig(one_tan_per_token=False))
    g2 = site2.take_test()
    assert vs2.register(g2) != vs2.register(g2)


def test_poll_states():
    w, vs, b, site = setup()
    g = site.take_test()
    token = vs.register(g)
    assert vs.poll(token) is TestResult.PENDING
    vs.lab_result(g, TestResult.POSITIVE)
    assert vs.poll(token) is TestResult.POSITIVE


def test_tan_issuance_and_mitigation():
    w, vs, b, site = setup()
    p, _ = positive_phone(w, vs, site)
    with pytest.raises(TanAlreadyIssued):
        p.request_tan(vs)
    w2, vs2, _, site2 = setup(CwaConfig(one_tan_per_token=False))
    q, _ = positive_phone(w2, vs2, site2)
    tans = {q.request_tan(vs2) for _ in range(5)}
    assert len(tans) == 5


def test_negative_phone_gets_no_tan():
    w, vs, b, site = setup()
    p = CwaPhone(w, "N", "DE")
    g = site.take_test()
    p.scan_and_register(vs, g)
    site.report("N", g, False, (0, 0))
    with pytest.raises(NotPositive):
        p.request_tan(vs)


def test_fabricated_positive_result_marks_phone():
    w, vs, b, site = setup()
    p = CwaPhone(w, "V", "DE")
    p.deliver_result(TestResult.POSITIVE)
    assert w.trace.of_kind(EventKind.MARK_POSITIVE)[0]["phone"] == "V"


def test_upload_release_and_tan_replay():
    w, vs, b, site = setup()
    p = CwaPhone(w, "P", "DE")
    for d in range(14):
        w.goto(d, 1)
        p.new_tek()
    w.goto(14, 0)
    g = site.take_test()
    p.scan_and_register(vs, g)
    site.report("P", g, True, (0, 14))
    p.poll_result(vs)
    p.request_tan(vs)
    teks, tan = p.upload_message()
    assert len(teks) == 14
    b.upload_teks("P", teks, tan)
    w.goto(15, 13)
    assert len(b.fetch()) == 14
    with pytest.raises(TanReused):
        b.upload_teks("P", teks[:1], tan)
    with pytest.raises(InvalidTan):
        b.upload_teks("P", teks[:1], b"\0" * 16)


def test_another_phones_key_is_released():
    w, vs, b, site = setup()
    w.goto(1, 1)
    p, _ = positive_phone(w, vs, site)
    victim = Tek(bytes(range(16)), 0, 0)
    b.upload_teks("P", [victim], p.tan)
    w.goto(2, 0)
    assert [rk.tek for rk in b.fetch()] == [victim.key]


def test_upload_shape_checks():
    w, vs, b, site = setup()
    p, _ = positive_phone(w, vs, site)
    with pytest.raises(TooManyKeys):
        b.upload_teks("P", [Tek(bytes([i]) * 16, i, 0) for i in range(15)], p.tan)
    with pytest.raises(DuplicateKeyDay):
        b.upload_teks("P", [Tek(b"a" * 16, 1, 0), Tek(b"b" * 16, 1, 0)], p.tan)


def _efgs(agreement: bool):
    w = World(3)
    efgs = Efgs(w, EfgsConfig(expiry_agreement=agreement))
    vs_de, vs_fr = VerificationServer(w, "DE"), VerificationServer(w, "FR")
    de = CwaBackend(w, "DE", vs_de, efgs, local_release_delay_s=0)
    fr = CwaBackend(w, "FR", vs_fr, efgs, local_release_delay_s=7200)
    return w, efgs, de, fr, TestSite(w, "DE", vs_de), vs_de


def test_efgs_serves_visited_countries():
    w, efgs, de, fr, site, vs = _efgs(True)
    w.goto(1, 1)
    p, _ = positive_phone(w, vs, site)
    b_it = CwaBackend(w, "IT", VerificationServer(w, "IT"), efgs)
    de.upload_teks("P", [Tek(b"k" * 16, 0, 0)], p.tan, visited={"FR"})
    w.goto(2, 0)
    assert len(de.fetch()) == 1 and len(fr.fetch()) == 1
    assert b_it.fetch() == []


@pytest.mark.parametrize("agreement,gap", [(False, True), (True, False)])
def test_release_gap_without_expiry_agreement(agreement, gap):
    w, efgs, de, fr, site, vs = _efgs(agreement)
    w.goto(1, 1)
    p, _ = positive_phone(w, vs, site)
    de.upload_teks("P", [Tek(b"k" * 16, 0, 0)], p.tan, visited={"FR"})
    w.goto(1, 3)  # day 1, epoch 3: past end of day 0, inside the 2 h delay
    assert (len(de.fetch()) == 1) is gap
    assert fr.fetch() == []
    w.goto(1, 13)
    assert len(de.fetch()) == 1 and len(fr.fetch()) == 1
