import copy
import dataclasses
import itertools

import pytest

from sdauth import discovery, dnssec, records, wire, zoneforge
from sdauth.discovery import Cause, Mode
from sdauth.records import ScopeKind
from sdauth.simnet import scenario as sc

KEY = records.ServiceKey(42, 1, 2, 3, domain="adas")
SCOPE = records.PublisherScope.of(KEY)
CLIENTS = {
    ScopeKind.SERVICE: records.ClientKey(17, scope=SCOPE, domain="adas"),
    ScopeKind.DOMAIN: records.ClientKey(17, domain="adas"),
    ScopeKind.VEHICLE: records.ClientKey(17),
}


@pytest.mark.parametrize("kind, accepted", list(itertools.product(ScopeKind, ScopeKind)))
def test_scope_policy_matrix(kind, accepted):
    name = records.client_tlsa_name(CLIENTS[kind])
    d = discovery.authorize_client_name(name, KEY, discovery.AuthorizationPolicy({accepted}))
    assert d.authorized is (kind is accepted)
    assert d.scope is kind


def test_golden_client_is_authorized():
    d = discovery.authorize_client_name(
        "_someip-client.2.1.42.17.client.vehicle1.oem.", records.ServiceKey(42, 1, 2, 3),
        discovery.AuthorizationPolicy(),
    )
    assert d.authorized and d.scope is ScopeKind.SERVICE


@pytest.mark.parametrize("name, reason", [
    ("_someip-client.2.1.43.17.adas.client.vehicle1.oem.", "service scope mismatch"),
    ("_someip-client.2.1.42.17.body.client.vehicle1.oem.", "domain mismatch"),
    ("_someip-client.2.1.42.17.adas.client.vehicle2.oem.", "vehicle mismatch"),
    ("_5000._someip.3.2.1.42.service.vehicle1.oem.", "unparseable"),
])
def test_mismatching_fields_rejected(name, reason):
    policy = discovery.AuthorizationPolicy(set(ScopeKind))
    d = discovery.authorize_client_name(name, KEY, policy)
    assert not d.authorized and reason in d.reason


def test_policy_needs_a_scope():
    with pytest.raises(ValueError):
        discovery.AuthorizationPolicy(frozenset())


# -- handshake through the simulator ----------------------------------------

PKEY = records.ServiceKey(42, 1, 2, 3)
PSCOPE = records.PublisherScope.of(PKEY)


def plan_with(client):
    return zoneforge.VehicleZonePlan(
        "vehicle1.oem.",
        [zoneforge.PublisherSpec(PKEY, "10.0.0.1", 5000, host="hpc_adas", multicast=("239.1.0.0", 31000))],
        [zoneforge.SubscriberSpec(client, PSCOPE, "zone1")],
    )


@pytest.fixture(scope="module")
def pair():
    plan = plan_with(records.ClientKey(17, scope=PSCOPE))
    return plan, sc.build_world(plan, "ed25519")


def run(plan, world, mode=Mode.DNSSEC, **kw):
    sim = sc.Simulation(sc.ScenarioConfig(plan, mode, world=world, profile="ed25519", horizon=3, **kw))
    return sim, sim.run()


def without(world, name, rtype):
    zone = copy.deepcopy(world.zone)
    zone.replace(name, rtype, [])
    return dataclasses.replace(world, zone=zone)


def test_happy_path_ack_carries_security_options(pair):
    plan, world = pair
    sim, m = run(plan, world)
    assert m.established == 1 and m.counts["insecure_acks"] == 0
    sub = sim.subscribers[0].fsm
    pub = sim.publishers[0].fsm
    assert sub.phase is discovery.SubscriberPhase.SUBSCRIBED and sub.verified_publisher
    client = plan.subscribers[0].tlsa_name
    assert pub.subscriptions[client].session_key == sub.session_key
    assert sub.group_key == pub.group_key is not None
    assert crypto_payload_round_trip(pub, sub)


def crypto_payload_round_trip(pub, sub):
    from sdauth import crypto
    return crypto.open_publication(sub.group_key, pub.seal(b"frame")) == b"frame"


def test_missing_client_tlsa_blocks_ack(pair):
    plan, world = pair
    _, m = run(plan, without(world, plan.subscribers[0].tlsa_name, dnssec.RRType.TLSA))
    assert m.established == 0 and m.failures[0][1] == Cause.INSECURE_TLSA.value


def test_insecure_fallback_only_when_policy_allows(pair):
    plan, world = pair
    broken = without(world, plan.subscribers[0].tlsa_name, dnssec.RRType.TLSA)
    sim, m = run(plan, broken, policy=discovery.AuthorizationPolicy(allow_insecure=True))
    assert m.established == 1 and m.counts["insecure_acks"] == 1
    assert sim.subscribers[0].fsm.session_key is None


def test_missing_svcb_blocks_subscribe(pair):
    plan, world = pair
    _, m = run(plan, without(world, plan.publishers[0].svcb_name, dnssec.RRType.SVCB))
    assert m.established == 0 and m.failures[0][1] == Cause.INSECURE_SVCB.value
    assert m.counts["messages_sent"] > 0


def test_vehicle_wide_client_needs_matching_policy():
    plan = plan_with(records.ClientKey(17))
    world = sc.build_world(plan, "ed25519")
    _, m = run(plan, world)
    assert m.failures == [(plan.subscribers[0].tlsa_name, Cause.UNAUTHORIZED.value)]
    _, m = run(plan, world, policy=discovery.AuthorizationPolicy({ScopeKind.VEHICLE}))
    assert m.established == 1


def test_pre_deployed_and_vanilla_variants(pair):
    plan, world = pair
    _, m = run(plan, world, Mode.STATIC)
    assert m.established == 1 and m.counts["dns_queries"] == 0
    _, m = run(plan, world, Mode.NONE)
    assert m.established == 1 and m.counts["dns_queries"] == 0
    assert not any(k in m.samples for k in ("create_signature", "verify_signature", "ka_generate"))


def test_functional_step_leaves_input_untouched(pair):
    plan, world = pair
    ident = world.identity(plan.subscribers[0].tlsa_name)
    fsm = discovery.SubscriberFsm(
        PKEY, discovery.Endpoint("10.0.0.4", 30491), wire.Ipv4EndpointOption("10.0.0.4", wire.PROTO_UDP, 40000),
        Mode.DNSSEC, ident, 5000,
    )
    first, acts = discovery.subscriber_step(fsm, discovery.Start(), 0.0)
    assert fsm.phase is discovery.SubscriberPhase.IDLE
    queries = {(a.name, a.rtype) for a in acts if isinstance(a, discovery.Query)}
    assert queries == {
        (records.publisher_service_name(PKEY), dnssec.RRType.SVCB),
        (records.publisher_tlsa_name(PKEY, 5000), dnssec.RRType.TLSA),
    }
    assert first.phase is discovery.SubscriberPhase.AWAITING


def test_secure_subscriber_requires_identity():
    with pytest.raises(ValueError):
        discovery.SubscriberFsm(PKEY, discovery.Endpoint("10.0.0.4"), wire.Ipv4EndpointOption("10.0.0.4", 17, 1), Mode.DNSSEC)
