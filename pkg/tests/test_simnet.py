import dataclasses

import pytest

from sdauth import crypto, discovery
from sdauth.simnet import adversary, engine, ivn, modelcheck, scenario
from sdauth.simnet.engine import ConfigError

ED = crypto.PROFILE_ED25519


# -- event loop and topology -------------------------------------------------


def test_event_loop_orders_by_time_then_fifo():
    loop = engine.EventLoop()
    seen = []
    for at, tag in ((2.0, "c"), (1.0, "a"), (1.0, "b"), (3.0, "d")):
        loop.schedule(at, seen.append, tag)
    loop.run(until=2.5)
    assert seen == ["a", "b", "c"]
    assert loop.now == 2.5 and loop.pending() == 1
    loop.run()
    assert seen[-1] == "d" and loop.now == 3.0


def test_event_loop_refuses_the_past():
    loop = engine.EventLoop(start=5.0)
    with pytest.raises(ValueError):
        loop.schedule(4.0, lambda: None)


def test_event_loop_stop_predicate():
    loop = engine.EventLoop()
    seen = []
    for i in range(10):
        loop.schedule(float(i), seen.append, i)
    loop.run(stop=lambda: len(seen) == 4)
    assert seen == [0, 1, 2, 3]


def test_ivn_topology():
    topo = ivn.ivn_topology()
    assert topo.connected()
    assert len(topo.hosts) == 13
    assert topo.hops("hpc_adas", "hpc_infotainment") == 2
    assert topo.hops("hpc_adas", "zone1") == 3
    assert topo.hops("zone1", "zone2") == 4
    assert topo.hops("zone1", "lidar1") == 2
    with pytest.raises(ConfigError):
        topo.add_host("hpc_adas", "10.9.9.9")
    with pytest.raises(ConfigError):
        topo.add_host("x", "10.9.9.9", "sw-nowhere")


# -- the generated placement -------------------------------------------------


def test_ivn_plan_matches_published_aggregates(ivn_plan):
    st = ivn.plan_stats(ivn_plan)
    assert (st.publishers, st.subscribers) == (212, 448)
    assert (st.fanout_min, st.fanout_max) == (1, 4)
    assert st.fanout_mean == pytest.approx(448 / 212)
    assert round(st.fanout_mean, 1) == 2.1
    assert (min(st.local_publishers.values()), max(st.local_publishers.values())) == (0, 79)
    assert (min(st.local_subscribers.values()), max(st.local_subscribers.values())) == (0, 131)
    assert max(st.remote_subscribers.values()) == 174
    assert max(st.remote_publishers.values()) == 79
    assert st.cross_host


def test_ivn_plan_is_seeded():
    a, b = ivn.generate_ivn_plan(7), ivn.generate_ivn_plan(7)
    assert a.record_names() == b.record_names()
    assert [s.host for s in a.subscribers] == [s.host for s in b.subscribers]
    c = ivn.generate_ivn_plan(8)
    assert [s.host for s in a.subscribers] != [s.host for s in c.subscribers]


def test_ivn_golden_service(ivn_plan):
    p = ivn_plan.publishers[0]
    assert (p.key.service_id, p.key.instance_id, p.key.major, p.key.minor) == (42, 1, 2, 3)
    assert p.host == "hpc_adas" and p.port == 5000


# -- scenario runs -----------------------------------------------------------


def _cfg(plan, world, variant="dnssec", **kw):
    kw.setdefault("profile", ED)
    return scenario.ScenarioConfig(plan, variant, world=world, **kw)


@pytest.mark.parametrize("bad", [
    {"loss": 1.0}, {"loss": -0.1}, {"horizon": 0}, {"offline": True, "variant": "vanilla"},
    {"variant": "quantum"},
])
def test_config_errors(small_plan, bad):
    with pytest.raises(ConfigError):
        scenario.ScenarioConfig(small_plan, **bad)


def test_same_seed_same_virtual_metrics(small_plan, small_world):
    a = scenario.run_scenario(_cfg(small_plan, small_world, seed=4, subscriber_limit=8))
    b = scenario.run_scenario(_cfg(small_plan, small_world, seed=4, subscriber_limit=8))
    assert a.virtual_csv() == b.virtual_csv()
    assert a.established == 8


def test_conservation_under_loss(small_plan, small_world):
    sim = scenario.Simulation(_cfg(small_plan, small_world, seed=3, loss=0.2, subscriber_limit=10, horizon=300))
    m = sim.run()
    assert sim.counters.conserved()
    assert sim.counters.dropped > 0
    assert m.counts["messages_sent"] == m.counts["messages_delivered"] + m.counts["messages_dropped"]
    # every subscription ends either established or with a recorded cause
    assert m.established + len(m.failures) == 10


def test_vanilla_does_no_dns_and_no_crypto(small_plan, small_world):
    m = scenario.run_scenario(_cfg(small_plan, small_world, "vanilla", subscriber_limit=5))
    assert m.established == 5
    assert m.counts["dns_queries"] == 0
    assert not any(k in m.samples for k in ("create_signature", "verify_signature", "ka_generate"))


def test_pre_deployed_does_no_dns_but_signs(small_plan, small_world):
    m = scenario.run_scenario(_cfg(small_plan, small_world, "pre_deployed", subscriber_limit=5))
    assert m.established == 5
    assert m.counts["dns_queries"] == 0
    assert m.summary("verify_signature")[3] > 0


def test_dnssec_answers_are_all_secure(small_plan, small_world):
    m = scenario.run_scenario(_cfg(small_plan, small_world, subscriber_limit=5))
    assert m.established == 5
    assert m.counts["dns_queries"] > 0
    assert {k.split("/")[0] for k in m.dns_statuses} == {"secure"}


def test_missing_world_identity_is_a_config_error(small_plan, small_world):
    lone = scenario.build_world(scenario.scalability_plan(1), ED)
    with pytest.raises(ConfigError):
        scenario.run_scenario(_cfg(small_plan, lone, subscriber_limit=5))


def test_scalability_single_subscriber_matches_scenario(small_plan):
    res = scenario.run_scalability([1, 3], ["dnssec"], seed=2, profile=ED)
    one = res.series("dnssec")[0]
    assert one.sub_count == 1 and one.established == 1
    m = scenario.run_scenario(scenario.ScenarioConfig(
        scenario.scalability_plan(3), "dnssec", seed=2, profile=ED, subscriber_limit=1,
    ))
    assert one.setup_virtual_mean == pytest.approx(m.summary("subscription_setup_virtual")[1])
    assert "setup_delay_mean" in res.to_csv().splitlines()[0]
    with pytest.raises(ConfigError):
        scenario.run_scalability([1], ["dnssec"], profile=ED, pub_count=2)


# -- adversary ---------------------------------------------------------------


def test_action_validation():
    with pytest.raises(ValueError):
        adversary.AdversaryAction("teleport", "x", at=0.1)
    with pytest.raises(ValueError):
        adversary.AdversaryAction("inject", "x")
    with pytest.raises(ValueError):
        adversary.AdversaryAction("inject", "x", at=0.1)


@pytest.mark.parametrize("variant", ["dnssec", "vanilla"])
def test_stride_differential(attack_world, variant):
    for script in adversary.stride_scripts():
        cfg = adversary.attack_config(variant, 1, profile=ED, world=attack_world)
        report = adversary.run_attack(cfg, script)
        for label, want in script.expect[variant].items():
            assert report.verdict(label) == want, (script.name, label)
        assert report.succeeded == (variant == "vanilla")
        if variant == "dnssec":
            # the legitimate subscription still comes up
            assert all(report.established.values()), script.name


def test_drop_all_offers_prevents_setup(attack_world):
    script = adversary.AdversaryScript(
        "blackhole", (adversary.AdversaryAction("block", "drop_offers", adversary.Match("offer"), limit=10**6),),
    )
    cfg = adversary.attack_config("dnssec", 1, profile=ED, world=attack_world)
    report = adversary.run_attack(cfg, script)
    assert report.verdict("drop_offers").startswith("blocked")
    assert not any(report.established.values())


# -- model checking ----------------------------------------------------------


class NoVerifySub(discovery.SubscriberFsm):
    """Takes any acknowledgment that carries a key share."""

    def _ack(self, ev, entry, now):
        if not self.outstanding:
            return []
        bundle = discovery._security(ev.message, entry)
        if bundle.key_exchange is None:
            return []
        return self._accept_ack(ev, next(reversed(self.outstanding.values())), bundle)


class NoScopePub(discovery.PublisherFsm):
    """Authorizes every client name."""

    def _subscribe(self, ev, entry, now):
        orig = discovery.authorize_client_name
        discovery.authorize_client_name = lambda n, k, p: discovery.Decision(True, "mutant")
        try:
            return super()._subscribe(ev, entry, now)
        finally:
            discovery.authorize_client_name = orig


class NoFreshPub(discovery.PublisherFsm):
    """Forgets which challenges were already answered."""

    def _verify(self, p, certs, now):
        self.answered.clear()
        return super()._verify(p, certs, now)


def test_model_check_shallow_is_clean():
    r = modelcheck.check(depth=8)
    assert r.ok, [str(v) for v in r.violations]
    assert r.established_traces > 0
    assert r.max_depth_reached == 8


@pytest.mark.parametrize("kw, rule", [
    ({"subscriber_cls": NoVerifySub}, "subscriber keyed"),
    ({"publisher_cls": NoScopePub}, "publisher"),
    ({"publisher_cls": NoFreshPub}, "same subscribe twice"),
])
def test_model_check_finds_planted_bugs(kw, rule):
    r = modelcheck.check(depth=6, **kw)
    assert not r.ok
    assert any(rule in v.rule for v in r.violations), [str(v) for v in r.violations]


def test_model_check_vanilla_has_no_security_oracle():
    r = modelcheck.check(depth=5, mode="vanilla")
    assert r.ok and r.states > 1


def test_counting_random_state_roundtrip():
    a = modelcheck.CountingRandom("x")
    a.getrandbits(64)
    b = modelcheck.CountingRandom("y")
    b.setstate(a.getstate())
    assert a.getrandbits(32) == b.getrandbits(32)
