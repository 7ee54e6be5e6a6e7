import dataclasses

import pytest

from sdauth import crypto, dnssec, records, zoneforge
from sdauth.dnssec import RRType, ValidationStatus as VS

NOW = 1_767_225_600.0
KEY = records.ServiceKey(42, 1, 2, 3)
PUB = records.publisher_tlsa_name(KEY, 5000)
SVC = records.publisher_service_name(KEY)


@pytest.fixture(params=crypto.PROFILES)
def signed(request):
    oem = dnssec.OemAuthority(request.param)
    zone = oem.delegate("vehicle1.oem.", NOW)
    cert = zoneforge.supplier_issue(PUB, NOW - 10, NOW + 86400, crypto.PROFILE_ED25519).certificate
    zone.add(dnssec.ResourceRecord(PUB, RRType.TLSA, 3600, crypto.build_tlsa(cert)))
    zone.add(dnssec.ResourceRecord(SVC, RRType.SVCB, 3600, records.svcb_for(KEY, "10.0.0.1", 5000)))
    dnssec.sign_zone(zone, NOW)
    return oem, zone


@pytest.fixture
def ed(signed):
    return signed


def statuses(oem, zone, now=NOW):
    return set(dnssec.verify_zone(zone, oem.trust_anchor, now).values())


def test_signed_zone_is_secure(signed):
    oem, zone = signed
    assert statuses(oem, zone) == {VS.SECURE}
    assert not zone.unsigned()


def test_tampered_rdata_is_bogus(signed):
    oem, zone = signed
    rec = zone.rrsets[(PUB, RRType.TLSA)][0]
    data = bytearray(rec.rdata.association_data)
    data[10] ^= 1
    zone.rrsets[(PUB, RRType.TLSA)] = [dataclasses.replace(rec, rdata=dataclasses.replace(rec.rdata, association_data=bytes(data)))]
    assert dnssec.verify_zone(zone, oem.trust_anchor, NOW)[(PUB, RRType.TLSA)] is VS.BOGUS


def test_missing_signature_is_insecure(signed):
    oem, zone = signed
    del zone.signatures[(SVC, RRType.SVCB)]
    assert dnssec.verify_zone(zone, oem.trust_anchor, NOW)[(SVC, RRType.SVCB)] is VS.INSECURE


def test_signature_window(signed):
    oem, zone = signed
    assert statuses(oem, zone, NOW - 1) == {VS.BOGUS}
    assert statuses(oem, zone, NOW + zone.sig_validity + 1) == {VS.BOGUS}


def test_wrong_anchor_is_bogus(signed):
    _, zone = signed
    other = dnssec.OemAuthority(crypto.PROFILE_ED25519)
    assert statuses(other, zone) == {VS.BOGUS}


def test_no_anchor_is_indeterminate(signed):
    _, zone = signed
    rrset = zone.rrsets[(SVC, RRType.SVCB)]
    assert dnssec.validate_rrset(rrset, zone.signatures[(SVC, RRType.SVCB)], None, NOW, zone.keyset()) is VS.INDETERMINATE


def test_signature_moved_to_another_owner_is_bogus(signed):
    oem, zone = signed
    sig = zone.signatures[(SVC, RRType.SVCB)]
    moved = dataclasses.replace(sig, name=PUB)
    rrset = zone.rrsets[(PUB, RRType.TLSA)]
    assert dnssec.validate_rrset(rrset, moved, oem.trust_anchor, NOW, zone.keyset()) is VS.BOGUS


def test_zone_text_round_trip(signed):
    oem, zone = signed
    back = dnssec.zone_from_text(dnssec.zone_to_text(zone))
    assert back.apex == zone.apex
    assert back.rrsets == zone.rrsets
    assert statuses(oem, back) == {VS.SECURE}


def test_zone_text_errors():
    with pytest.raises(dnssec.ZoneFormatError):
        dnssec.zone_from_text("foo. 60 IN A 10.0.0.1\n")
    with pytest.raises(dnssec.ZoneFormatError):
        dnssec.zone_from_text("foo. 60 IN TLSA 3 0 0 zz\n")


def test_key_tags_distinguish_ksk_and_zsk(signed):
    oem, zone = signed
    keys, sig = zone.keyset()
    tags = {k.rdata.key_tag for k in keys}
    assert len(tags) == 2
    assert sig.rdata.key_tag == oem.trust_anchor.key_tag
    assert zone.signatures[(SVC, RRType.SVCB)].rdata.key_tag == dnssec.DnskeyRdata.from_keypair(zone.zsk).key_tag


def test_zsk_never_signs_keyset_and_supplier_keys_never_sign_zones(signed):
    _, zone = signed
    supplier = zoneforge.new_supplier_key(crypto.PROFILE_ED25519)
    with pytest.raises(crypto.KeyUsageError):
        dnssec.sign_rrset(zone.rrsets[(SVC, RRType.SVCB)], supplier, zone.apex, 0, 1)
    with pytest.raises(crypto.KeyUsageError):
        dnssec.OemAuthority(ksk=supplier)


# -- resolver ----------------------------------------------------------------


def resolver_for(oem, zone):
    src = dnssec.ZoneSource(zone)
    return src, dnssec.Resolver(oem.trust_anchor, src)


def test_resolver_answers_secure_and_caches(ed):
    oem, zone = ed
    src, r = resolver_for(oem, zone)
    a = r.resolve(PUB, RRType.TLSA, NOW)
    assert a.status is VS.SECURE and not a.from_cache
    fetched = src.fetches
    b = r.resolve(PUB, RRType.TLSA, NOW + 10)
    assert b.status is VS.SECURE and b.from_cache and src.fetches == fetched
    assert r.proof(PUB, RRType.TLSA) is not None


def test_cache_expires_with_ttl(ed):
    oem, zone = ed
    src, r = resolver_for(oem, zone)
    r.resolve(PUB, RRType.TLSA, NOW)
    assert not r.resolve(PUB, RRType.TLSA, NOW + 3601).from_cache


def test_negative_answers(ed):
    oem, zone = ed
    _, r = resolver_for(oem, zone)
    nx = r.resolve("_someip-client.99.client.vehicle1.oem.", RRType.TLSA, NOW)
    assert nx.rcode is dnssec.Rcode.NXDOMAIN and nx.status is VS.INSECURE and not nx.records
    nodata = r.resolve(SVC, RRType.TLSA, NOW)
    assert nodata.rcode is dnssec.Rcode.NODATA and not nodata.records


def test_bogus_answers_are_not_cached(ed):
    oem, zone = ed
    src, r = resolver_for(oem, zone)
    rec = zone.rrsets[(SVC, RRType.SVCB)][0]
    zone.rrsets[(SVC, RRType.SVCB)] = [dataclasses.replace(rec, rdata=dataclasses.replace(rec.rdata, port=6000))]
    a = r.resolve(SVC, RRType.SVCB, NOW)
    assert a.status is VS.BOGUS and a.rcode is dnssec.Rcode.SERVFAIL and not a.records
    before = src.fetches
    assert not r.resolve(SVC, RRType.SVCB, NOW).from_cache
    assert src.fetches > before


def test_unreachable_source_is_servfail(ed):
    oem, zone = ed
    src, r = resolver_for(oem, zone)
    src.reachable = False
    with pytest.raises(dnssec.ServFail):
        r.resolve(PUB, RRType.TLSA, NOW)


def test_preload_then_offline(ed):
    oem, zone = ed
    src, r = resolver_for(oem, zone)
    report = r.preload(NOW)
    assert report.records == 2 and report.keysets == 1 and not report.rejected
    src.reachable = False
    r.fetch_count = 0
    for name, rtype in src.all_keys():
        a = r.resolve(name, rtype, NOW + 60)
        assert a.status is VS.SECURE and a.from_cache
    assert r.fetch_count == 0


def test_only_strict_policy():
    with pytest.raises(ValueError):
        dnssec.Resolver(None, policy="permissive")


# -- rollover ----------------------------------------------------------------


def test_rollover_coexistence_and_removal(ed):
    oem, zone = ed
    old = zone.rrsets[(PUB, RRType.TLSA)][0]
    cert = zoneforge.supplier_issue(PUB, NOW, NOW + 86400, crypto.PROFILE_ED25519).certificate
    new = dnssec.ResourceRecord(PUB, RRType.TLSA, 3600, crypto.build_tlsa(cert))
    dnssec.rollover_add(zone, PUB, new, NOW + 100)
    assert len(zone.get(PUB, RRType.TLSA)) == 2
    assert statuses(oem, zone, NOW + 200) == {VS.SECURE}
    dnssec.rollover_remove(zone, PUB, old, NOW + 300)
    assert zone.get(PUB, RRType.TLSA) == [new]
    assert statuses(oem, zone, NOW + 400) == {VS.SECURE}
    dnssec.rollover_remove(zone, PUB, new, NOW + 500)
    src, r = resolver_for(oem, zone)
    assert r.resolve(PUB, RRType.TLSA, NOW + 600).rcode is dnssec.Rcode.NODATA


def test_rollover_outside_zone_rejected(ed):
    _, zone = ed
    rec = dnssec.ResourceRecord("x.other.", RRType.TLSA, 60, records.TlsaParams(b"\x00"))
    with pytest.raises(dnssec.UnknownName):
        dnssec.rollover_add(zone, "x.other.", rec, NOW)
