import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

from sdauth import crypto, dnssec, records, wire, zoneforge
from sdauth.dnssec import RRType

NOW = 1_767_225_600.0
DAY = 86400
ED = crypto.PROFILE_ED25519
KEY = records.ServiceKey(42, 1, 2, 3)
PUB = records.publisher_tlsa_name(KEY, 5000)


@pytest.fixture(scope="module")
def supplier():
    return zoneforge.new_supplier_key(ED)


def one_pub_one_sub():
    scope = records.PublisherScope.of(KEY)
    return zoneforge.VehicleZonePlan(
        "vehicle1.oem.",
        [zoneforge.PublisherSpec(KEY, "10.0.0.1", 5000)],
        [zoneforge.SubscriberSpec(records.ClientKey(17, scope=scope), scope)],
    )


def test_issue_subject_is_dns_name(supplier):
    b = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED, supplier)
    assert b.certificate.subject == "_5000._someip.3.2.1.42.service.vehicle1.oem."
    assert b.verify()


def test_zero_length_window_rejected(supplier):
    with pytest.raises(ValueError):
        zoneforge.supplier_issue(PUB, NOW, NOW, ED, supplier)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.integers(1, 0xFFFF))
def test_bundles_verify_for_random_identities(svc, inst, port):
    name = records.publisher_tlsa_name(records.ServiceKey(svc, inst, 1, 0), port)
    assert zoneforge.supplier_issue(name, NOW, NOW + DAY, ED).verify()


def test_bundle_json_round_trip(supplier):
    b = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED, supplier, b"firmware")
    back = zoneforge.SupplierBundle.from_json(b.to_json())
    assert back.verify() and back.keypair.public_der() == b.keypair.public_der()
    public = zoneforge.SupplierBundle.from_json(b.to_json(include_private=False))
    assert public.verify() and "private_key" not in b.to_json(include_private=False)
    with pytest.raises(zoneforge.ForgeError):
        zoneforge.SupplierBundle.from_json("{}")


def test_publish_then_resolve_secure(supplier):
    oem = dnssec.OemAuthority(ED)
    zone = oem.delegate("vehicle1.oem.", NOW)
    b = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED, supplier)
    zoneforge.oem_publish(zone, b, NOW, records.svcb_for(KEY, "10.0.0.1", 5000))
    r = dnssec.Resolver(oem.trust_anchor, dnssec.ZoneSource(zone))
    tlsa = r.resolve(PUB, RRType.TLSA, NOW + 1)
    svcb = r.resolve(records.publisher_service_name(KEY), RRType.SVCB, NOW + 1)
    assert tlsa.status is svcb.status is dnssec.ValidationStatus.SECURE
    assert crypto.match_tlsa(b.certificate, tlsa.records[0])


def test_tampered_bundle_refused_and_zone_unchanged(supplier):
    oem = dnssec.OemAuthority(ED)
    zone = oem.delegate("vehicle1.oem.", NOW)
    before = dnssec.zone_to_text(zone)
    b = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED, supplier)
    bad = dataclasses.replace(b, binary_digest=bytes(32))
    with pytest.raises(zoneforge.BadBundleSignature):
        zoneforge.oem_publish(zone, bad, NOW)
    assert dnssec.zone_to_text(zone) == before


def test_untrusted_supplier_refused(supplier):
    oem = dnssec.OemAuthority(ED)
    zone = oem.delegate("vehicle1.oem.", NOW)
    b = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED)
    with pytest.raises(zoneforge.BadBundleSignature):
        zoneforge.oem_publish(zone, b, NOW, trusted_suppliers={supplier.public_der()})


def test_second_certificate_coexists_and_publish_is_idempotent(supplier):
    oem = dnssec.OemAuthority(ED)
    zone = oem.delegate("vehicle1.oem.", NOW)
    b1 = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED, supplier)
    b2 = zoneforge.supplier_issue(PUB, NOW, NOW + DAY, ED, supplier)
    zoneforge.oem_publish(zone, b1, NOW)
    text = dnssec.zone_to_text(zone)
    zoneforge.oem_publish(zone, b1, NOW + 5)
    assert dnssec.zone_to_text(zone) == text
    zoneforge.oem_publish(zone, b2, NOW + 10)
    assert len(zone.get(PUB, RRType.TLSA)) == 2


def test_minimal_plan_has_three_names():
    plan = one_pub_one_sub()
    bundles = zoneforge.issue_plan_bundles(plan, NOW, NOW + DAY, ED)
    zone = zoneforge.build_vehicle_zone(plan, bundles, dnssec.OemAuthority(ED), NOW)
    assert zone.record_names() - {zone.apex} == set(plan.record_names())
    assert len(plan.record_names()) == 3


def test_missing_bundle_and_duplicates():
    plan = one_pub_one_sub()
    with pytest.raises(zoneforge.MissingBundle):
        zoneforge.build_vehicle_zone(plan, {}, dnssec.OemAuthority(ED), NOW)
    plan.subscribers.append(plan.subscribers[0])
    with pytest.raises(zoneforge.DuplicateName):
        plan.validate()


def test_subscriber_to_unknown_service_rejected():
    plan = one_pub_one_sub()
    scope = records.PublisherScope(43, 1, 1)
    plan.subscribers.append(zoneforge.SubscriberSpec(records.ClientKey(18, scope=scope), scope))
    with pytest.raises(zoneforge.PlanError):
        plan.validate()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 20), st.randoms(use_true_random=False))
def test_record_count_formula(p, s, rng):
    pubs = [zoneforge.PublisherSpec(records.ServiceKey(100 + i, 1, 1, 0), "10.0.0.1", 30000 + i) for i in range(p)]
    subs = []
    for j in range(s):
        scope = records.PublisherScope.of(rng.choice(pubs).key)
        subs.append(zoneforge.SubscriberSpec(records.ClientKey(j, scope=scope), scope))
    plan = zoneforge.VehicleZonePlan("vehicle1.oem.", pubs, subs)
    plan.validate()
    assert len(set(plan.record_names())) == 2 * p + s


def test_plan_text_round_trip():
    plan = one_pub_one_sub()
    plan.subscribers.append(zoneforge.SubscriberSpec(records.ClientKey(18, domain="adas"), records.PublisherScope.of(KEY), "zone1"))
    back = zoneforge.VehicleZonePlan.from_text(plan.to_text())
    assert back == plan
    with pytest.raises(zoneforge.PlanError):
        zoneforge.VehicleZonePlan.from_text("publisher 1 1 1 1 10.0.0.1 5000 udp\n")


def test_audit_over_staggered_windows(supplier):
    oem = dnssec.OemAuthority(ED)
    zone = oem.delegate("vehicle1.oem.", NOW)
    rng = random.Random(3)
    ends = {}
    for i in range(12):
        name = records.client_tlsa_name(records.ClientKey(i))
        days = rng.randint(1, 120)
        ends[name] = days
        zoneforge.oem_publish(zone, zoneforge.supplier_issue(name, NOW - DAY, NOW + days * DAY, ED, supplier), NOW)
    found = {f.name for f in zoneforge.audit(zone, NOW, 45) if f.kind == "certificate"}
    assert found == {n for n, d in ends.items() if d <= 45}
    rrsigs = [f for f in zoneforge.audit(zone, NOW, 45) if f.kind == "rrsig"]
    assert len(rrsigs) == len(zone.signatures)  # 30 day signature lifetime
    assert all(f.expired for f in zoneforge.audit(zone, NOW + 200 * DAY, 0))


def test_supplier_key_cannot_sign_zone_data(supplier):
    oem = dnssec.OemAuthority(ED)
    zone = oem.delegate("vehicle1.oem.", NOW)
    zone.zsk = supplier
    zone.add(dnssec.ResourceRecord(PUB, RRType.TLSA, 60, records.TlsaParams(b"\x01")))
    with pytest.raises((crypto.KeyUsageError, dnssec.MissingKey)):
        dnssec.sign_zone(zone, NOW)
