"""Channel adversary and the STRIDE attack scripts.

The adversary sits on the core switch.  It sees every datagram, may block
or rewrite it in flight, replay it later, or inject crafted datagrams with
any source address.  Its only key material is what a script hands it
(e.g. a legitimately provisioned but differently scoped client identity);
it never reads the stores of running endpoints.

Every datagram it emits carries an adversary tag, and the simulation traces
each tag to the decisions the machines took on it, so an attack run yields
one verdict per emitted datagram.
"""

from __future__ import annotations

import dataclasses
import random
import typing

from sdauth import crypto, discovery, records, wire, zoneforge
from sdauth.discovery import Endpoint, Mode
from sdauth.simnet import scenario as sc

ATTACKER_IP = "10.0.0.66"
ATTACKER = Endpoint(ATTACKER_IP, 30490)

KINDS = ("inject", "replay", "modify", "block", "intercept")


def entry_kind(entry: wire.SdEntry) -> str:
    t = entry.entry_type
    if t is wire.EntryType.FIND:
        return "find"
    if t is wire.EntryType.OFFER:
        return "stop_offer" if entry.is_stop else "offer"
    if t is wire.EntryType.SUBSCRIBE:
        return "stop_subscribe" if entry.is_stop else "subscribe"
    return "nack" if entry.ttl == 0 else "ack"


@dataclasses.dataclass(frozen=True)
class Match:
    """Selects datagrams by entry kind, service and direction."""

    kind: str | None = None
    service_id: int | None = None
    unicast: bool | None = None
    src: str | None = None
    dest: str | None = None

    def __call__(self, msg: wire.SdMessage, src: Endpoint, dest: Endpoint | None) -> bool:
        if self.unicast is not None and (dest is not None) != self.unicast:
            return False
        if self.src is not None and src.address != self.src:
            return False
        if self.dest is not None and (dest is None or dest.address != self.dest):
            return False
        return any(
            (self.kind is None or entry_kind(e) == self.kind)
            and (self.service_id is None or e.service_id == self.service_id)
            for e in msg.entries
        )


@dataclasses.dataclass(frozen=True)
class Captured:
    message: wire.SdMessage
    data: bytes
    src: Endpoint
    dest: Endpoint | None
    at: float

    def entry(self, kind: str | None = None) -> wire.SdEntry:
        for e in self.message.entries:
            if kind is None or entry_kind(e) == kind:
                return e
        raise LookupError(kind)

    def security(self, entry: wire.SdEntry) -> wire.SecurityBundle:
        return wire.SecurityBundle.from_options(self.message.options_of(entry)[1])


Forgery = typing.Tuple[wire.SdMessage, Endpoint, typing.Optional[Endpoint]]


@dataclasses.dataclass
class View:
    """What the adversary knows: captured traffic, public zone data and its own keys."""

    plan: zoneforge.VehicleZonePlan
    identities: dict[str, discovery.Identity]
    captured: list[Captured]
    rng: random.Random
    endpoint: Endpoint = ATTACKER

    def latest(self, kind: str, src: Endpoint | None = None) -> Captured | None:
        for cap in reversed(self.captured):
            if src is not None and cap.src != src:
                continue
            if any(entry_kind(e) == kind for e in cap.message.entries):
                return cap
        return None

    def own(self) -> discovery.Identity:
        return next(iter(self.identities.values()))


@dataclasses.dataclass(frozen=True)
class AdversaryAction:
    kind: str
    label: str
    match: Match | None = None
    at: float | None = None  # seconds after start, for untriggered injections
    delay: float = 0.0
    craft: typing.Callable[[View, Captured | None], list[Forgery]] | None = None
    transform: typing.Callable[[wire.SdMessage], wire.SdMessage] | None = None
    limit: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary action {self.kind!r}")
        if self.match is None and not (self.kind == "inject" and self.at is not None):
            raise ValueError(f"{self.label}: only timed injections may omit a match")
        if self.kind == "inject" and self.craft is None:
            raise ValueError(f"{self.label}: injection needs a craft function")
        if self.kind == "modify" and self.transform is None:
            raise ValueError(f"{self.label}: modification needs a transform")


@dataclasses.dataclass(frozen=True)
class AdversaryScript:
    name: str
    actions: tuple[AdversaryAction, ...]
    identities: tuple[str, ...] = ()
    horizon: float = 1.5
    # label -> expected verdict per variant, e.g. {"dnssec": "rejected:BadSignature"}
    expect: dict[str, dict[str, str]] = dataclasses.field(default_factory=dict)
    description: str = ""


@dataclasses.dataclass
class Emission:
    label: str
    kind: str
    tag: tuple
    at: float


class Adversary:
    def __init__(self, script: AdversaryScript, view: View):
        self.script = script
        self.view = view
        self.fired: dict[str, int] = {a.label: 0 for a in script.actions}
        self.emissions: list[Emission] = []
        self.blocked: dict[str, int] = {}
        self.intercepted: dict[str, int] = {}
        self.received: list[Captured] = []
        self.sim: sc.Simulation | None = None
        self._n = 0

    def attach(self, sim: sc.Simulation) -> None:
        self.sim = sim

    def owns(self, ep: Endpoint) -> bool:
        return ep.address == self.view.endpoint.address

    def start(self, t0: float) -> None:
        for action in self.script.actions:
            if action.match is None:
                self.fired[action.label] += 1
                self.sim.loop.schedule(t0 + action.at, self._inject, action, None)

    def _tag(self, label: str) -> tuple:
        self._n += 1
        return ("adversary", label, self._n)

    def _emit(self, action: AdversaryAction, data: bytes, src: Endpoint, dest: Endpoint | None) -> None:
        v = self.sim.loop.now
        tag = self._tag(action.label)
        self.emissions.append(Emission(action.label, action.kind, tag, v))
        self.sim.counters.injected += 1
        self.sim.transmit(data, src, None, dest, v, v, tag)

    def _inject(self, action: AdversaryAction, cap: Captured | None) -> None:
        for msg, src, dest in action.craft(self.view, cap):
            self._emit(action, wire.encode_message(msg), src, dest)

    def _replay(self, action: AdversaryAction, cap: Captured) -> None:
        self._emit(action, cap.data, cap.src, cap.dest)

    def on_transmit(self, data: bytes, msg, src: Endpoint, dest: Endpoint | None, v: float, tag):
        if isinstance(tag, tuple) and tag and tag[0] == "adversary":
            return data, tag
        if msg is None:
            return data, tag
        cap = Captured(msg, data, src, dest, v)
        self.view.captured.append(cap)
        result = (data, tag)
        for action in self.script.actions:
            if action.match is None or self.fired[action.label] >= action.limit:
                continue
            if not action.match(msg, src, dest):
                continue
            self.fired[action.label] += 1
            if action.kind == "intercept":
                self.intercepted[action.label] = self.intercepted.get(action.label, 0) + 1
            elif action.kind == "block":
                self.blocked[action.label] = self.blocked.get(action.label, 0) + 1
                return None
            elif action.kind == "modify":
                new = wire.encode_message(action.transform(msg))
                t = self._tag(action.label)
                self.emissions.append(Emission(action.label, action.kind, t, v))
                result = (new, t)
            elif action.kind == "replay":
                self.sim.loop.schedule(v + action.delay, self._replay, action, cap)
            else:
                self.sim.loop.schedule(v + action.delay, self._inject, action, cap)
        return result

    def receive(self, msg, src: Endpoint, dest: Endpoint, v: float) -> None:
        if msg is not None:
            self.received.append(Captured(msg, b"", src, dest, v))


# -- reports ----------------------------------------------------------------


@dataclasses.dataclass
class Outcome:
    label: str
    kind: str
    verdict: str  # succeeded | rejected | ignored | blocked | captured | not_triggered
    detail: str = ""
    decisions: list[tuple[str, str, str]] = dataclasses.field(default_factory=list)

    def __str__(self) -> str:
        return f"{self.verdict}:{self.detail}" if self.detail else self.verdict


@dataclasses.dataclass
class AttackReport:
    script: str
    variant: str
    outcomes: list[Outcome]
    metrics: sc.RunMetrics
    teardowns: list[tuple[str, str]]
    established: dict[str, bool]

    def verdict(self, label: str) -> str:
        """Strongest verdict over all datagrams emitted for ``label``."""
        mine = [o for o in self.outcomes if o.label == label]
        for v in ("succeeded", "rejected", "blocked", "captured", "ignored"):
            hits = [o for o in mine if o.verdict == v]
            if hits:
                details = sorted({o.detail for o in hits if o.detail})
                return f"{v}:{'|'.join(details)}" if details else v
        return "not_triggered"

    def labels(self) -> list[str]:
        return list(dict.fromkeys(o.label for o in self.outcomes))

    @property
    def succeeded(self) -> bool:
        return any(o.verdict == "succeeded" for o in self.outcomes)

    def lines(self) -> list[str]:
        return [f"{self.script} [{self.variant}] {label}: {self.verdict(label)}" for label in self.labels()]


def run_attack(config: sc.ScenarioConfig, script: AdversaryScript) -> AttackReport:
    """Run ``config`` with the adversary in the core and trace every emission."""
    config = dataclasses.replace(
        config, stop_when_established=False, horizon=script.horizon,
        exclude=frozenset(config.exclude) | frozenset(script.identities),
    )
    sim_world = config.world
    if sim_world is None and config.variant is not Mode.NONE:
        sim_world = sc.build_world(config.plan, config.profile, config.epoch)
        config = dataclasses.replace(config, world=sim_world)
    ids = {}
    if script.identities:
        # the adversary's own provisioned identities; vanilla runs still need keys to craft
        w = sim_world or sc.build_world(config.plan, config.profile, config.epoch)
        ids = {n: w.identity(n) for n in script.identities}
    view = View(config.plan, ids, [], random.Random(f"adversary:{config.seed}"))
    adv = Adversary(script, view)
    sim = sc.Simulation(config, adversary=adv)
    metrics = sim.run()

    outcomes = []
    for em in adv.emissions:
        decisions = sim.trace.get(em.tag, [])
        accepted = [d for d in decisions if d[1] == "accepted"]
        rejected = [d for d in decisions if d[1] == "rejected"]
        if accepted:
            outcomes.append(Outcome(em.label, em.kind, "succeeded", accepted[0][2], decisions))
        elif rejected:
            outcomes.append(Outcome(em.label, em.kind, "rejected", rejected[0][2], decisions))
        else:
            outcomes.append(Outcome(em.label, em.kind, "ignored", "", decisions))
    for label, n in adv.blocked.items():
        outcomes += [Outcome(label, "block", "blocked")] * n
    for label, n in adv.intercepted.items():
        outcomes += [Outcome(label, "intercept", "captured")] * n
    seen = {o.label for o in outcomes}
    for a in script.actions:
        if a.label not in seen:
            outcomes.append(Outcome(a.label, a.kind, "not_triggered"))
    established = {s.name: s.established is not None for s in sim.subscribers}
    return AttackReport(script.name, config.variant.value, outcomes, metrics, list(sim.teardowns), established)


# -- the standard suite -----------------------------------------------------

TARGET = records.ServiceKey(42, 1, 2, 3, sc.ivn.VEHICLE)
OTHER = records.ServiceKey(43, 1, 1, 0, sc.ivn.VEHICLE)
INSIDER_ID = 999


def attack_plan() -> zoneforge.VehicleZonePlan:
    """Two services, three honest clients and one insider scoped to the second service."""
    ip = sc.ivn.host_ip
    t, o = records.PublisherScope.of(TARGET), records.PublisherScope.of(OTHER)
    pubs = [
        zoneforge.PublisherSpec(TARGET, ip(0), 5000, wire.PROTO_UDP, "hpc_adas", ("239.1.0.0", 31000)),
        zoneforge.PublisherSpec(OTHER, ip(3), 30501, wire.PROTO_UDP, "zone1", ("239.1.0.1", 31001)),
    ]
    v = sc.ivn.VEHICLE
    subs = [
        zoneforge.SubscriberSpec(records.ClientKey(17, v, t), t, "zone2"),
        zoneforge.SubscriberSpec(records.ClientKey(18, v, t), t, "hpc_infotainment"),
        zoneforge.SubscriberSpec(records.ClientKey(19, v, o), o, "zone3"),
        zoneforge.SubscriberSpec(records.ClientKey(INSIDER_ID, v, o), o, "zone4"),
    ]
    return zoneforge.VehicleZonePlan(v, pubs, subs)


def insider_name() -> str:
    return records.client_tlsa_name(records.ClientKey(INSIDER_ID, sc.ivn.VEHICLE, records.PublisherScope.of(OTHER)))


def victim_name() -> str:
    return records.client_tlsa_name(records.ClientKey(17, sc.ivn.VEHICLE, records.PublisherScope.of(TARGET)))


def _subscribe_entry(service: records.ServiceKey, ttl: int = 3) -> wire.SdEntry:
    return wire.SdEntry(wire.EntryType.SUBSCRIBE, service.service_id, service.instance_id, service.major, ttl, 1)


def _signed_subscribe(view: View, cap: Captured, claimed: str, signer: discovery.Identity) -> list[Forgery]:
    offer = cap.entry("offer")
    chal = cap.security(offer).challenge
    nonce = chal.nonce if chal is not None else 0  # vanilla offers carry no challenge
    entry = _subscribe_entry(TARGET)
    chal = wire.Challenge(crypto.new_nonce(view.rng))
    _, share = crypto.ka_generate(crypto.DEFAULT_GROUP, view.rng)
    digest = wire.entry_digest(entry, chal.encode(), share.encode())
    sig = crypto.sign_nonce(signer.keypair, nonce, claimed, digest)
    bundle = wire.SecurityBundle(chal, wire.Response(sig), share, None, claimed)
    data = wire.Ipv4EndpointOption(view.endpoint.address, wire.PROTO_UDP, 40999)
    msg = wire.SdMessage.build([(entry, [data], [bundle.to_option()])])
    return [(msg, view.endpoint, cap.src)]


def _spoofed_offer(view: View, cap: Captured | None) -> list[Forgery]:
    entry = wire.SdEntry(wire.EntryType.OFFER, TARGET.service_id, TARGET.instance_id, TARGET.major, 3, TARGET.minor)
    ep = wire.Ipv4EndpointOption(view.endpoint.address, wire.PROTO_UDP, 5000)
    bundle = wire.SecurityBundle(challenge=wire.Challenge(crypto.new_nonce(view.rng)))
    return [(wire.SdMessage.build([(entry, [ep], [bundle.to_option()])]), view.endpoint, None)]


def _spoofed_subscribe(view: View, cap: Captured | None) -> list[Forgery]:
    # claims a legitimate client's name but can only sign with its own key
    return _signed_subscribe(view, cap, victim_name(), view.own())


def _unauthorized_subscribe(view: View, cap: Captured | None) -> list[Forgery]:
    # a valid signature by a real client whose name is scoped to another service
    me = view.own()
    return _signed_subscribe(view, cap, me.name, me)


def _forged_ack(view: View, cap: Captured | None) -> list[Forgery]:
    """Ack keyed with the attacker's own share, so its group key unwraps.

    Only the response signature, made with the attacker's key, can give it away.
    """
    sub = cap.entry("subscribe")
    sub_bundle = cap.security(sub)
    chal = sub_bundle.challenge
    client_nonce = chal.nonce if chal is not None else 0
    pub_name = records.publisher_tlsa_name(TARGET, 5000)
    ack = wire.SdEntry(
        wire.EntryType.SUBSCRIBE_ACK, sub.service_id, sub.instance_id, sub.major_version, sub.ttl,
        sub.minor_version_or_eventgroup,
    )
    ka, share = crypto.ka_generate(crypto.DEFAULT_GROUP, view.rng)
    if sub_bundle.key_exchange is not None and sub_bundle.identity:
        offer = view.latest("offer")
        offer_chal = offer.security(offer.entry("offer")).challenge if offer is not None else None
        transcript = crypto.Transcript(
            pub_name, records.normalize_name(sub_bundle.identity),
            offer_chal.nonce if offer_chal is not None else 0, client_nonce,
        )
        session = crypto.derive_session_key(crypto.ka_shared(ka, sub_bundle.key_exchange), transcript)
        skey = wire.SessionKey(crypto.wrap_group_key(session, crypto.new_group_key(0, view.rng), view.rng))
    else:
        skey = wire.SessionKey(view.rng.randbytes(60))
    sig = crypto.sign_nonce(view.own().keypair, client_nonce, pub_name, wire.entry_digest(ack, share.encode(), skey.ciphertext))
    bundle = wire.SecurityBundle(response=wire.Response(sig), key_exchange=share, session_key=skey)
    return [(wire.SdMessage.build([(ack, [], [bundle.to_option()])]), cap.dest, cap.src)]


def _forged_stop_offer(view: View, cap: Captured | None) -> list[Forgery]:
    entry = wire.SdEntry(wire.EntryType.OFFER, TARGET.service_id, TARGET.instance_id, TARGET.major, 0, TARGET.minor)
    ep = wire.Ipv4EndpointOption(sc.ivn.host_ip(0), wire.PROTO_UDP, 5000)
    pub_name = records.publisher_tlsa_name(TARGET, 5000)
    sig = crypto.sign_nonce(view.own().keypair, crypto.new_nonce(view.rng), pub_name, wire.entry_digest(entry))
    bundle = wire.SecurityBundle(response=wire.Response(sig))
    return [(wire.SdMessage.build([(entry, [ep], [bundle.to_option()])]), cap.src, cap.dest)]


def _forged_stop_subscribe(view: View, cap: Captured | None) -> list[Forgery]:
    sub_cap = view.latest("subscribe", src=cap.dest)
    if sub_cap is None:
        return []
    sub = sub_cap.entry("subscribe")
    name = sub_cap.security(sub).identity or victim_name()
    entry = dataclasses.replace(sub, ttl=0)
    run1 = list(sub_cap.message.options_of(sub)[0])
    sig = crypto.sign_nonce(view.own().keypair, crypto.new_nonce(view.rng), name, wire.entry_digest(entry))
    bundle = wire.SecurityBundle(response=wire.Response(sig), identity=name)
    return [(wire.SdMessage.build([(entry, run1, [bundle.to_option()])]), cap.dest, cap.src)]


def stride_scripts() -> list[AdversaryScript]:
    """The six standard attacks against service 42, with expected verdicts."""
    svc = TARGET.service_id
    me = (insider_name(),)
    offer = Match("offer", svc, unicast=False)
    subscribe = Match("subscribe", svc, unicast=True)
    ack = Match("ack", svc, unicast=True)
    return [
        AdversaryScript(
            "spoofed_offer",
            (AdversaryAction("inject", "spoofed_offer", at=0.005, craft=_spoofed_offer),),
            expect={"dnssec": {"spoofed_offer": "rejected:SvcbMismatch"},
                    "vanilla": {"spoofed_offer": "succeeded:subscribe_sent"}},
            description="offer for the service pointing at the attacker's endpoint",
        ),
        AdversaryScript(
            "spoofed_subscribe",
            (AdversaryAction("inject", "spoofed_subscribe", offer, delay=0.001, craft=_spoofed_subscribe),),
            identities=me,
            expect={"dnssec": {"spoofed_subscribe": "rejected:BadSignature"},
                    "vanilla": {"spoofed_subscribe": "succeeded:acked"}},
            description="subscribe claiming a legitimate client's name",
        ),
        AdversaryScript(
            "forged_ack",
            (AdversaryAction("inject", "forged_ack", subscribe, craft=_forged_ack),),
            identities=me,
            expect={"dnssec": {"forged_ack": "rejected:BadSignature"},
                    "vanilla": {"forged_ack": "succeeded:subscribed"}},
            description="acknowledgment racing the publisher's own",
        ),
        AdversaryScript(
            "forged_stop",
            (
                AdversaryAction("inject", "forged_stop_offer", ack, delay=0.01, craft=_forged_stop_offer),
                AdversaryAction("inject", "forged_stop_subscribe", ack, delay=0.01, craft=_forged_stop_subscribe),
            ),
            identities=me,
            expect={"dnssec": {"forged_stop_offer": "rejected:BadSignature",
                               "forged_stop_subscribe": "rejected:BadSignature"},
                    "vanilla": {"forged_stop_offer": "succeeded:teardown",
                                "forged_stop_subscribe": "succeeded:teardown"}},
            description="stop offer and stop subscribe without valid signatures",
        ),
        AdversaryScript(
            "replayed_response",
            (AdversaryAction("replay", "replayed_subscribe", subscribe, delay=0.005),),
            expect={"dnssec": {"replayed_subscribe": "rejected:StaleNonce"},
                    "vanilla": {"replayed_subscribe": "succeeded:acked"}},
            description="a captured subscribe sent again",
        ),
        AdversaryScript(
            "unauthorized_scope",
            (AdversaryAction("inject", "unauthorized_subscribe", offer, delay=0.001, craft=_unauthorized_subscribe),),
            identities=me,
            expect={"dnssec": {"unauthorized_subscribe": "rejected:Unauthorized"},
                    "vanilla": {"unauthorized_subscribe": "succeeded:acked"}},
            description="correctly signed subscribe from a client scoped to another service",
        ),
    ]


def attack_config(variant: str | Mode = Mode.DNSSEC, seed: int = 1, **kw) -> sc.ScenarioConfig:
    kw.setdefault("exclude", frozenset({insider_name()}))
    return sc.ScenarioConfig(attack_plan(), variant, seed=seed, **kw)


def run_suite(variant: str | Mode = Mode.DNSSEC, seed: int = 1, profile: str = crypto.DEFAULT_PROFILE) -> list[AttackReport]:
    world = sc.build_world(attack_plan(), profile)
    return [
        run_attack(attack_config(variant, seed, profile=profile, world=world), script)
        for script in stride_scripts()
    ]
