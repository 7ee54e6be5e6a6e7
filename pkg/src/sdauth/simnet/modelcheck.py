"""Bounded exhaustive exploration of one publisher, one subscriber and an attacker.

A state holds both machines, the datagrams in flight, the attacker's
observations and its remaining injection budget.  From each state every
enabled transition is explored:

* an armed timer fires (offers and finds are bounded per trace, which
  bounds the number of challenge rounds);
* an in-flight datagram is delivered (datagrams that are never delivered
  model loss and blocking);
* the attacker delivers one datagram of its choice: a replay of anything it
  has observed, or a forgery built from observed traffic with its own key
  or a legitimate identity scoped to another service.

DNS is answered synchronously from a validating resolver over the real
signed zone.  The clock stands still (nonces never expire inside the bound);
timers may fire in any order.  States are deduplicated by a key over the machine
state; the machines' random generators are left out of it, so states that
differ only in future nonce values are treated as one.

The oracle checks every transition:

* the subscriber reports Established only for an acknowledgment that the
  honest publisher emitted, after the publisher verified the subscriber;
* the publisher reports Established or emits a wrapped group key only for
  the honest subscriber, after a subscribe the subscriber really sent;
* the subscriber only ever holds a session key the publisher derived for it;
* the publisher never accepts the same subscribe datagram twice.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import random
import time
import typing

from sdauth import crypto, discovery, dnssec, records, wire
from sdauth.discovery import Endpoint, Mode
from sdauth.simnet import adversary as adv
from sdauth.simnet import scenario as sc

PUB_SD = Endpoint(sc.ivn.host_ip(0), 30491)
SUB_SD = Endpoint(sc.ivn.host_ip(4), 30491)

class CountingRandom(random.Random):
    """Random source whose whole state is (seed, draws): cheap to copy.

    Nonces then depend only on how many draws a machine has made, so two
    interleavings that feed a machine the same events give it the same
    nonces and their states merge.
    """

    def seed(self, a=None, version=2):
        self._seed, self._n = a, 0

    def getstate(self):
        return self._seed, self._n

    def setstate(self, state):
        self._seed, self._n = state

    def getrandbits(self, k: int) -> int:
        self._n += 1
        n = (k + 7) // 8
        h = hashlib.shake_128(f"{self._seed}:{self._n}".encode()).digest(n)
        return int.from_bytes(h, "big") >> (8 * n - k)

    def random(self) -> float:
        return self.getrandbits(53) / (1 << 53)

    def __reduce__(self):
        return self.__class__, (self._seed,), (self._seed, self._n)


def _sub_key(s: discovery.SubscriberFsm) -> tuple:
    # resolver answers are fixed per name, so presence stands for content
    return (
        s.phase, s.svcb is None, s.svcb_failed, tuple(sorted(s.tlsa)), tuple(sorted(s.tlsa_failed)),
        tuple(sorted(s.queries)), None if s.offer is None else (s.offer[1], s.offer[2]),
        s.publisher, s.publisher_name, s.publisher_nonce, s.answered_nonce,
        tuple((k, v.publisher_nonce, v.publisher_name) for k, v in s.outstanding.items()),
        tuple(s.acked_nonces), s.session_key, s.group_key, s.finds_sent, s.verified_publisher,
    )


def _pub_key(p: discovery.PublisherFsm) -> tuple:
    return (
        p.started, p.stopped, p.offers_sent, p.current_nonce, tuple(p.issued), tuple(p.retired),
        frozenset(p.answered), tuple((v.client_name, v.bundle.challenge) for v in p.pending.values()),
        tuple(sorted(
            (k, v.sd_endpoint, v.session_key, v.client_nonce, v.phase) for k, v in p.subscriptions.items()
        )),
        frozenset(p.verified_clients), p.group_key,
    )


@contextlib.contextmanager
def _memo_signatures():
    """Signing and verification are pure; branches repeat them constantly."""
    sign, verify = crypto.sign_nonce, crypto.verify_nonce
    signed: dict = {}
    verified: dict = {}

    def memo_sign(kp, nonce, sender, digest):
        k = (id(kp), nonce, sender, digest)
        if k not in signed:
            signed[k] = sign(kp, nonce, sender, digest)
        return signed[k]

    def memo_verify(cert, nonce, sender, digest, sig):
        k = (cert.der, nonce, sender, digest, sig)
        if k not in verified:
            verified[k] = verify(cert, nonce, sender, digest, sig)
        return verified[k]

    crypto.sign_nonce, crypto.verify_nonce = memo_sign, memo_verify
    try:
        yield
    finally:
        crypto.sign_nonce, crypto.verify_nonce = sign, verify


@dataclasses.dataclass(frozen=True)
class Datagram:
    data: bytes
    src: Endpoint
    dest: Endpoint | None
    origin: str  # "pub", "sub" or "adv"


@dataclasses.dataclass
class State:
    pub: discovery.PublisherFsm
    sub: discovery.SubscriberFsm
    observed: dict[Datagram, None]
    timers: set[tuple[str, str]]
    budget: int
    fires: dict[str, int] = dataclasses.field(default_factory=dict)
    pub_keys: frozenset = frozenset()
    acked: frozenset = frozenset()
    step: int = 0
    trace: tuple[str, ...] = ()

    def key(self) -> tuple:
        """Everything but the budget, the step count and the trace."""
        return (
            _pub_key(self.pub), _sub_key(self.sub), frozenset(self.observed), frozenset(self.timers),
            tuple(sorted(self.fires.items())), self.pub_keys, self.acked,
        )


@dataclasses.dataclass
class Violation:
    rule: str
    trace: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.rule}: " + " -> ".join(self.trace)


@dataclasses.dataclass
class CheckResult:
    depth: int
    states: int
    transitions: int
    max_depth_reached: int
    violations: list[Violation]
    established_traces: int
    seconds: float

    @property
    def ok(self) -> bool:
        return not self.violations


class ModelChecker:
    def __init__(
        self,
        depth: int = 12,
        injections: int = 2,
        mode: Mode = Mode.DNSSEC,
        seed: int = 0,
        subscriber_cls: type = discovery.SubscriberFsm,
        publisher_cls: type = discovery.PublisherFsm,
        max_states: int | None = None,
        max_fires: typing.Mapping[str, int] | None = None,
    ):
        self.depth = depth
        self.injections = injections
        self.mode = sc.variant(mode)
        self.seed = seed
        self.max_states = max_states
        # bounded sessions: each timer may fire this often per trace
        self.max_fires = dict(max_fires or {"pub.offer": 2, "sub.find": 1})
        self.plan = adv.attack_plan()
        self.world = sc.build_world(self.plan, crypto.PROFILE_ED25519)
        self.epoch = self.world.epoch
        self.resolver = dnssec.Resolver(self.world.oem.trust_anchor, dnssec.ZoneSource(self.world.zone))
        self._answers: dict[tuple[str, dnssec.RRType], dnssec.Answer | None] = {}
        self._forged: dict[tuple, list] = {}
        self._decoded: dict[bytes, wire.SdMessage | None] = {}
        self.subscriber_cls = subscriber_cls
        self.publisher_cls = publisher_cls
        self.pub_spec = self.plan.publishers[0]
        self.sub_spec = self.plan.subscribers[0]
        self.insider = self.world.identity(adv.insider_name())

    # .. setup

    def _answer(self, name: str, rtype: dnssec.RRType) -> dnssec.Answer | None:
        key = (name, rtype)
        if key not in self._answers:
            try:
                self._answers[key] = self.resolver.resolve(name, rtype, self.epoch)
            except dnssec.ServFail:
                self._answers[key] = None
        return self._answers[key]

    def initial(self) -> State:
        p, s = self.pub_spec, self.sub_spec
        static_pub = static_sub = {}
        if self.mode is Mode.STATIC:
            static_pub = {s.tlsa_name: self.world.certificate(s.tlsa_name)}
            static_sub = {p.tlsa_name: self.world.certificate(p.tlsa_name)}
        ident = self.mode is not Mode.NONE
        pub = self.publisher_cls(
            p.key, PUB_SD, wire.Ipv4EndpointOption(p.address, p.protocol, p.port), self.mode,
            self.world.identity(p.tlsa_name) if ident else None, discovery.AuthorizationPolicy(), static_pub,
            wire.Ipv4MulticastOption(p.multicast[0], wire.PROTO_UDP, p.multicast[1]),
            rng=CountingRandom(f"mc-pub:{self.seed}"),
        )
        sub = self.subscriber_cls(
            p.key, SUB_SD, wire.Ipv4EndpointOption(SUB_SD.address, wire.PROTO_UDP, 40000), self.mode,
            self.world.identity(s.tlsa_name) if ident else None, p.port, static_sub,
            rng=CountingRandom(f"mc-sub:{self.seed}"),
        )
        st = State(pub, sub, {}, set(), self.injections)
        self._apply(st, "pub", discovery.Start(), None, [])
        self._apply(st, "sub", discovery.Start(), None, [])
        return st

    # .. transitions

    def _now(self, st: State) -> float:
        # time is abstracted away: timers fire in any order, and a fixed clock
        # keeps timestamps from splitting otherwise equal states
        return self.epoch

    def _apply(self, st: State, who: str, event, delivered: Datagram | None, violations: list[Violation]) -> None:
        fsm = st.pub if who == "pub" else st.sub
        now = self._now(st)
        before = st.sub.session_key
        queue = [event]
        while queue:
            ev = queue.pop(0)
            for a in fsm.step(ev, now):
                if isinstance(a, discovery.Send):
                    d = Datagram(wire.encode_message(a.message), fsm.sd_endpoint, a.dest, who)
                    st.observed[d] = None
                    if who == "pub":
                        self._check_ack_emission(st, a.message, delivered, violations)
                elif isinstance(a, discovery.Query):
                    queue.append(discovery.DnsAnswer(a.name, a.rtype, self._answer(a.name, a.rtype)))
                elif isinstance(a, discovery.Arm):
                    st.timers.add((who, a.timer))
                elif isinstance(a, discovery.Established):
                    self._check_established(st, who, a, delivered, violations)
                elif isinstance(a, discovery.Accepted) and a.effect == "acked" and delivered is not None:
                    if delivered.data in st.acked and self.mode is not Mode.NONE:
                        violations.append(Violation("publisher accepted the same subscribe twice", st.trace))
                    st.acked = st.acked | {delivered.data}
        if self.mode is Mode.NONE:
            return
        if who == "pub":
            for name, sub in st.pub.subscriptions.items():
                if sub.session_key is None:
                    continue
                if name != st.sub.name:
                    violations.append(Violation(f"publisher holds a session for {name}", st.trace))
                st.pub_keys = st.pub_keys | {sub.session_key}
        elif st.sub.session_key is not None and st.sub.session_key != before:
            if not self._genuine(st, delivered, "pub"):
                violations.append(Violation("subscriber keyed on an ack the publisher never sent", st.trace))
            elif st.sub.name not in st.pub.verified_clients:
                violations.append(Violation("subscriber keyed before the publisher verified it", st.trace))
            if st.sub.session_key not in st.pub_keys:
                violations.append(Violation("subscriber key was never derived by the publisher", st.trace))

    def _genuine(self, st: State, d: Datagram | None, origin: str) -> bool:
        return d is not None and d.origin == origin and d in st.observed

    def _check_ack_emission(self, st, msg: wire.SdMessage, delivered, violations) -> None:
        if self.mode is Mode.NONE:
            return
        for e in msg.entries:
            if e.entry_type is not wire.EntryType.SUBSCRIBE_ACK or e.ttl == 0:
                continue
            bundle = wire.SecurityBundle.from_options(msg.options_of(e)[1])
            if bundle.session_key is None:
                continue
            if not self._genuine(st, delivered, "sub"):
                violations.append(Violation("group key sent in answer to a subscribe the subscriber never sent", st.trace))

    def _check_established(self, st: State, who: str, a: discovery.Established, delivered, violations) -> None:
        if self.mode is Mode.NONE or not a.secure:
            return
        if who == "pub":
            if a.peer != st.sub.name:
                violations.append(Violation(f"publisher established with {a.peer}", st.trace))
            elif not self._genuine(st, delivered, "sub"):
                violations.append(Violation("publisher established on a subscribe the subscriber never sent", st.trace))

    def _targets(self, d: Datagram) -> list[str]:
        if d.dest is None:
            return [w for w in ("pub", "sub") if w != d.origin]
        if d.dest == PUB_SD:
            return ["pub"]
        if d.dest == SUB_SD:
            return ["sub"]
        return []

    def _forgeries(self, st: State) -> list[tuple[str, Datagram]]:
        key = tuple(st.observed)
        hit = self._forged.get(key)
        if hit is None:
            hit = self._forged[key] = self._craft(st)
        return hit

    def _craft(self, st: State) -> list[tuple[str, Datagram]]:
        view = adv.View(self.plan, {self.insider.name: self.insider}, [], random.Random(f"mc-adv:{self.seed}"))
        for d in st.observed:
            msg = self._decode(d.data)
            if msg is None:
                continue
            view.captured.append(adv.Captured(msg, d.data, d.src, d.dest, 0.0))
        crafted = [("spoofed_offer", adv._spoofed_offer, None)]
        offer = view.latest("offer")
        if offer is not None:
            crafted += [("spoofed_subscribe", adv._spoofed_subscribe, offer),
                        ("unauthorized_subscribe", adv._unauthorized_subscribe, offer)]
        subscribe = view.latest("subscribe")
        if subscribe is not None:
            crafted.append(("forged_ack", adv._forged_ack, subscribe))
        ack = view.latest("ack")
        if ack is not None:
            crafted += [("forged_stop_offer", adv._forged_stop_offer, ack),
                        ("forged_stop_subscribe", adv._forged_stop_subscribe, ack)]
        out = []
        for label, craft, cap in crafted:
            try:
                forged = craft(view, cap)
            except (LookupError, AttributeError, wire.WireError):
                continue
            for msg, src, dest in forged:
                # forgeries aimed at the attacker's own address are pointless here
                if dest == adv.ATTACKER:
                    dest = PUB_SD if label.endswith("subscribe") else SUB_SD
                out.append((label, Datagram(wire.encode_message(msg), src, dest, "adv")))
        return out

    def successors(self, st: State, violations: list[Violation]) -> typing.Iterator[State]:
        for who, timer in sorted(st.timers):
            name = f"{who}.{timer}"
            if st.fires.get(name, 0) >= self.max_fires.get(name, self.depth):
                continue
            nxt = self._fork(st, name)
            nxt.fires[name] = nxt.fires.get(name, 0) + 1
            nxt.timers.discard((who, timer))
            self._apply(nxt, who, discovery.TimerFired(timer), None, violations)
            yield nxt
        # the network is the attacker: any observed datagram may arrive, any number of times
        for d in list(st.observed):
            for who in self._targets(d):
                nxt = self._fork(st, f"deliver[{d.origin}->{who}:{self._label(d)}]")
                self._deliver(nxt, who, d, violations)
                yield nxt
        if st.budget > 0:
            for label, d in self._forgeries(st):
                for who in self._targets(d):
                    nxt = self._fork(st, f"forge.{label}->{who}")
                    nxt.budget -= 1
                    self._deliver(nxt, who, d, violations)
                    yield nxt

    def _decode(self, data: bytes) -> wire.SdMessage | None:
        if data not in self._decoded:
            try:
                self._decoded[data] = wire.decode_message(data)
            except wire.WireError:
                self._decoded[data] = None
        return self._decoded[data]

    def _deliver(self, st: State, who: str, d: Datagram, violations) -> None:
        msg = self._decode(d.data)
        if msg is None:
            return
        self._apply(st, who, discovery.Received(msg, d.src, d.origin), d, violations)

    def _label(self, d: Datagram) -> str:
        msg = self._decode(d.data)
        if msg is None:
            return "?"
        return ",".join(adv.entry_kind(e) for e in msg.entries)

    def _fork(self, st: State, label: str) -> State:
        return State(
            st.pub.clone(), st.sub.clone(), dict(st.observed), set(st.timers), st.budget, dict(st.fires), st.pub_keys,
            st.acked, st.step + 1, st.trace + (label,),
        )

    # .. search

    def run(self) -> CheckResult:
        """Breadth-first search with subsumption.

        Levels are expanded in order, so every state is first met at its
        smallest depth.  A state is skipped when one with the same machines,
        knowledge and timers was already met with at least as much injection
        budget: everything it can do, the earlier one could too.
        """
        with _memo_signatures():
            return self._search()

    def _search(self) -> CheckResult:
        t0 = time.perf_counter()
        violations: list[Violation] = []
        root = self.initial()
        best: dict[tuple, int] = {root.key(): root.budget}
        level = [root]
        states = 1
        transitions = 0
        deepest = 0
        established = 0
        while level:
            nxt_level = []
            for st in level:
                deepest = max(deepest, st.step)
                if st.sub.session_key is not None:
                    established += 1
                if st.step >= self.depth:
                    continue
                for nxt in self.successors(st, violations):
                    transitions += 1
                    k = nxt.key()
                    if best.get(k, -1) >= nxt.budget:
                        continue
                    best[k] = nxt.budget
                    states += 1
                    nxt_level.append(nxt)
                if self.max_states is not None and states >= self.max_states:
                    nxt_level = []
                    break
            level = nxt_level
        return CheckResult(
            self.depth, states, transitions, deepest, _dedup(violations), established, time.perf_counter() - t0
        )


def _dedup(violations: list[Violation]) -> list[Violation]:
    by_rule: dict[str, Violation] = {}
    for v in violations:
        if v.rule not in by_rule or len(v.trace) < len(by_rule[v.rule].trace):
            by_rule[v.rule] = v
    return list(by_rule.values())


def check(depth: int = 12, injections: int = 2, mode: Mode | str = Mode.DNSSEC, seed: int = 0, **kw) -> CheckResult:
    return ModelChecker(depth, injections, sc.variant(mode), seed, **kw).run()
