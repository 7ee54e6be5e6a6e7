"""Publisher and subscriber state machines for authenticated service discovery.

The machines are pure event processors: ``step(event, now)`` mutates the
machine and returns a list of action values for the host to carry out
(send a datagram, query the resolver, arm a timer).  No I/O happens here,
so the simulator, the model checker and unit tests drive the same code.

Handshake, in order:

1. the publisher multicasts Offer entries carrying a fresh challenge nonce;
2. the subscriber checks the offered endpoint against its Secure SVCB
   record and answers with Subscribe carrying a response (signature over
   the publisher nonce), its own challenge and a key-agreement share;
3. the publisher authorizes the client name, resolves the client TLSA,
   verifies the response and replies with SubscribeAck carrying its own
   response, its share and the group key wrapped under the session key;
4. the subscriber verifies the publisher response against the publisher
   TLSA certificate before it accepts the session.
"""

from __future__ import annotations

import collections
import copy
import dataclasses
import enum
import logging
import random
import typing

from sdauth import crypto, dnssec, records, wire

log = logging.getLogger(__name__)

ANY_INSTANCE = 0xFFFF
ANY_MAJOR = 0xFF
ANY_MINOR = 0xFFFFFFFF


class Mode(enum.Enum):
    NONE = "vanilla"
    STATIC = "pre_deployed"
    DNSSEC = "dnssec"


class Cause(enum.Enum):
    SVCB_MISMATCH = "SvcbMismatch"
    INSECURE_SVCB = "InsecureSvcb"
    INSECURE_TLSA = "InsecureTlsa"
    UNAUTHORIZED = "Unauthorized"
    BAD_SIGNATURE = "BadSignature"
    STALE_NONCE = "StaleNonce"
    MALFORMED = "Malformed"
    UNKNOWN_PEER = "UnknownPeer"
    UNSOLICITED = "Unsolicited"
    EVICTED = "Evicted"


class SubscriberPhase(enum.Enum):
    IDLE = "Idle"
    AWAITING = "AwaitingOfferAndDns"
    VALIDATED = "OfferValidated"
    PENDING = "SubscribePending"
    SUBSCRIBED = "Subscribed"


class ClientPhase(enum.Enum):
    OFFERING = "Offering"
    AWAITING_TLSA = "AwaitingClientTlsa"
    ACKED = "Acked"


@dataclasses.dataclass(frozen=True)
class Endpoint:
    """An SD socket address."""

    address: str
    port: int = 30490

    def __str__(self) -> str:
        return f"{self.address}:{self.port}"


@dataclasses.dataclass(frozen=True)
class Timing:
    initial_delay: tuple[float, float] = (0.010, 0.100)
    repetitions: int = 3
    repetition_base: float = 0.200
    cyclic_offer: float = 2.0
    nonce_lifetime: float = 2.0
    ttl: int = 3


@dataclasses.dataclass(frozen=True)
class Identity:
    """Long-term credentials of one endpoint; ``name`` is the TLSA owner name."""

    name: str
    keypair: crypto.KeyPair
    certificate: crypto.Certificate


@dataclasses.dataclass(frozen=True)
class AuthorizationPolicy:
    accepted: frozenset = frozenset({records.ScopeKind.SERVICE})
    allow_insecure: bool = False

    def __post_init__(self):
        object.__setattr__(self, "accepted", frozenset(self.accepted))
        if not self.accepted:
            raise ValueError("an authorization policy must accept at least one scope")


@dataclasses.dataclass(frozen=True)
class Decision:
    authorized: bool
    scope: records.ScopeKind | None = None
    reason: str = ""


def authorize_client_name(name: str, publisher: records.ServiceKey, policy: AuthorizationPolicy) -> Decision:
    """Name-based authorization of a client against a publisher's scope policy."""
    try:
        client = records.parse_client_tlsa_name(name)
    except (records.BadName, records.BadLabel) as exc:
        return Decision(False, None, f"unparseable client name: {exc}")
    kind = client.scope_kind
    if kind not in policy.accepted:
        return Decision(False, kind, f"{kind.value} scope not accepted")
    if client.vehicle != publisher.vehicle:
        return Decision(False, kind, "vehicle mismatch")
    if client.domain is not None and client.domain != publisher.domain:
        return Decision(False, kind, "domain mismatch")
    if client.scope is not None and client.scope != records.PublisherScope.of(publisher):
        return Decision(False, kind, "service scope mismatch")
    return Decision(True, kind)


# -- events -----------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Start:
    pass


@dataclasses.dataclass(frozen=True)
class Shutdown:
    """The application stops offering / subscribing."""


@dataclasses.dataclass(frozen=True)
class Received:
    message: wire.SdMessage
    source: Endpoint
    tag: typing.Any = None


@dataclasses.dataclass(frozen=True)
class DnsAnswer:
    name: str
    rtype: dnssec.RRType
    # None stands for SERVFAIL
    answer: dnssec.Answer | None


@dataclasses.dataclass(frozen=True)
class TimerFired:
    name: str


@dataclasses.dataclass(frozen=True)
class Rekey:
    pass


Event = typing.Union[Start, Shutdown, Received, DnsAnswer, TimerFired, Rekey]


# -- actions ----------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Send:
    message: wire.SdMessage
    # None: the SD multicast group
    dest: Endpoint | None


@dataclasses.dataclass(frozen=True)
class Query:
    name: str
    rtype: dnssec.RRType


@dataclasses.dataclass(frozen=True)
class Arm:
    timer: str
    at: float


@dataclasses.dataclass(frozen=True)
class Established:
    peer: str
    session_key: crypto.SessionKey | None
    group_key: crypto.GroupKey | None
    secure: bool = True


@dataclasses.dataclass(frozen=True)
class Teardown:
    peer: str
    reason: str


@dataclasses.dataclass(frozen=True)
class Accepted:
    """A received message changed state; ``effect`` says how."""

    tag: typing.Any
    effect: str


@dataclasses.dataclass(frozen=True)
class Rejected:
    cause: Cause
    tag: typing.Any
    detail: str = ""


Action = typing.Union[Send, Query, Arm, Established, Teardown, Accepted, Rejected]


def _security(msg: wire.SdMessage, entry: wire.SdEntry) -> wire.SecurityBundle:
    run1, run2 = msg.options_of(entry)
    return wire.SecurityBundle.from_options(run1 + run2)


def _endpoint_option(msg: wire.SdMessage, entry: wire.SdEntry, multicast: bool = False):
    run1, run2 = msg.options_of(entry)
    for opt in run1 + run2:
        if isinstance(opt, wire.Ipv4MulticastOption) == multicast and isinstance(opt, wire.Ipv4EndpointOption):
            return opt
    return None


def _b(opt) -> bytes:
    return b"" if opt is None else opt.encode()


def _static_cert(
    store: typing.Mapping[str, crypto.Certificate], name: str, now: float | None = None
) -> list[crypto.Certificate]:
    cert = store.get(records.normalize_name(name))
    if cert is None or (now is not None and not cert.valid_at(now)):
        return []
    return [cert]


def _tlsa_certs(tlsa: typing.Iterable[records.TlsaParams], now: float | None = None) -> list[crypto.Certificate]:
    """Pinned certificates of full-certificate records, optionally only those valid at ``now``."""
    out = []
    for t in tlsa:
        cert = crypto.certificate_from_tlsa(t)
        if cert is None:
            continue
        try:
            if now is not None and not cert.valid_at(now):
                continue
        except crypto.MalformedCertificate:
            continue
        out.append(cert)
    return out


def _insecure(answer: dnssec.Answer | None) -> bool:
    return (
        answer is None
        or answer.status is not dnssec.ValidationStatus.SECURE
        or answer.rcode is not dnssec.Rcode.NOERROR
        or not answer.records
    )


# -- subscriber -------------------------------------------------------------


@dataclasses.dataclass
class _OutstandingSubscribe:
    client_nonce: int
    publisher_nonce: int
    ka: crypto.KaPrivate | None
    publisher_name: str
    sent_at: float


class SubscriberFsm:
    """Client side: find, validate offer, subscribe, verify acknowledgment."""

    MAX_OUTSTANDING = 4

    def __init__(
        self,
        service: records.ServiceKey,
        sd_endpoint: Endpoint,
        data_endpoint: wire.Ipv4EndpointOption,
        mode: Mode = Mode.DNSSEC,
        identity: Identity | None = None,
        expected_port: int | None = None,
        static_certs: typing.Mapping[str, crypto.Certificate] | None = None,
        timing: Timing = Timing(),
        rng: random.Random | None = None,
        group: int = crypto.DEFAULT_GROUP,
        eventgroup: int = 1,
        allow_insecure: bool = False,
    ):
        if mode is not Mode.NONE and identity is None:
            raise ValueError("secure subscribers need an identity")
        self.service = service
        self.sd_endpoint = sd_endpoint
        self.data_endpoint = data_endpoint
        self.mode = mode
        self.identity = identity
        self.expected_port = expected_port
        self.static_certs = dict(static_certs or {})
        self.timing = timing
        self.rng = rng or random.Random()
        self.group = group
        self.eventgroup = eventgroup
        self.allow_insecure = allow_insecure

        self.phase = SubscriberPhase.IDLE
        self.svcb: list[records.SvcbParams] | None = None
        self.svcb_failed = False
        self.tlsa: dict[int, list[records.TlsaParams]] = {}
        self.tlsa_failed: set[int] = set()
        self.queries: set[tuple[str, dnssec.RRType]] = set()
        self.offer: tuple[wire.SdMessage, wire.SdEntry, Endpoint, typing.Any] | None = None
        self.publisher: Endpoint | None = None
        self.publisher_name: str | None = None
        self.publisher_nonce: int | None = None
        self.answered_nonce: int | None = None
        self.outstanding: collections.OrderedDict[int, _OutstandingSubscribe] = collections.OrderedDict()
        self.acked_nonces: collections.deque[int] = collections.deque(maxlen=2)
        self.session_key: crypto.SessionKey | None = None
        self.group_key: crypto.GroupKey | None = None
        self.finds_sent = 0
        self.verified_publisher = False

    @property
    def name(self) -> str | None:
        return self.identity.name if self.identity else None

    def clone(self) -> SubscriberFsm:
        """Independent copy sharing only immutable parts (used by exhaustive search)."""
        new = copy.copy(self)
        new.rng = copy.copy(self.rng)
        new.svcb = None if self.svcb is None else list(self.svcb)
        new.tlsa = {k: list(v) for k, v in self.tlsa.items()}
        new.tlsa_failed = set(self.tlsa_failed)
        new.queries = set(self.queries)
        new.outstanding = collections.OrderedDict(self.outstanding)
        new.acked_nonces = collections.deque(self.acked_nonces, maxlen=self.acked_nonces.maxlen)
        return new

    # .. dispatch

    def step(self, event: Event, now: float) -> list[Action]:
        if isinstance(event, Start):
            return self._start(now)
        if isinstance(event, TimerFired):
            return self._timer(event.name, now)
        if isinstance(event, DnsAnswer):
            return self._dns(event, now)
        if isinstance(event, Received):
            return self._received(event, now)
        if isinstance(event, Shutdown):
            return self._shutdown(now)
        return []

    def _start(self, now: float) -> list[Action]:
        if self.phase is not SubscriberPhase.IDLE:
            return []
        self.phase = SubscriberPhase.AWAITING
        lo, hi = self.timing.initial_delay
        out: list[Action] = [Arm("find", now + self.rng.uniform(lo, hi))]
        if self.mode is Mode.DNSSEC:
            out += self._query(records.publisher_service_name(self.service), dnssec.RRType.SVCB)
            if self.expected_port is not None:
                out += self._query(records.publisher_tlsa_name(self.service, self.expected_port), dnssec.RRType.TLSA)
        return out

    def _query(self, name: str, rtype: dnssec.RRType) -> list[Action]:
        if (name, rtype) in self.queries:
            return []
        self.queries.add((name, rtype))
        return [Query(name, rtype)]

    def _timer(self, name: str, now: float) -> list[Action]:
        if name != "find" or self.phase not in (SubscriberPhase.AWAITING, SubscriberPhase.VALIDATED):
            return []
        if self.finds_sent > self.timing.repetitions:
            return []
        entry = wire.SdEntry(
            wire.EntryType.FIND, self.service.service_id, self.service.instance_id,
            self.service.major, self.timing.ttl, ANY_MINOR,
        )
        out: list[Action] = [Send(wire.SdMessage.build([(entry, [], [])], flags=wire.FLAG_UNICAST), None)]
        self.finds_sent += 1
        if self.finds_sent <= self.timing.repetitions:
            delay = self.timing.repetition_base * (2 ** (self.finds_sent - 1))
            out.append(Arm("find", now + delay))
        return out

    def _dns(self, ev: DnsAnswer, now: float) -> list[Action]:
        self.queries.discard((ev.name, ev.rtype))
        out: list[Action] = []
        if ev.rtype == dnssec.RRType.SVCB:
            if _insecure(ev.answer):
                self.svcb, self.svcb_failed = None, True
                out.append(Rejected(Cause.INSECURE_SVCB, None, f"{ev.name}: {_answer_text(ev.answer)}"))
            else:
                self.svcb, self.svcb_failed = list(ev.answer.records), False
                if self.expected_port is None:
                    for port in sorted({r.port for r in self.svcb}):
                        out += self._query(records.publisher_tlsa_name(self.service, port), dnssec.RRType.TLSA)
        elif ev.rtype == dnssec.RRType.TLSA:
            try:
                _, port = records.parse_publisher_tlsa_name(ev.name)
            except (records.BadName, records.BadLabel):
                return out
            if _insecure(ev.answer):
                self.tlsa.pop(port, None)
                self.tlsa_failed.add(port)
                out.append(Rejected(Cause.INSECURE_TLSA, None, f"{ev.name}: {_answer_text(ev.answer)}"))
            else:
                self.tlsa[port] = list(ev.answer.records)
                self.tlsa_failed.discard(port)
        if self.offer is not None:
            out += self._try_offer(now)
        return out

    def _received(self, ev: Received, now: float) -> list[Action]:
        out: list[Action] = []
        for entry in ev.message.entries:
            if entry.service_id != self.service.service_id:
                continue
            if entry.instance_id not in (self.service.instance_id, ANY_INSTANCE):
                continue
            if entry.major_version not in (self.service.major, ANY_MAJOR):
                continue
            if entry.entry_type is wire.EntryType.OFFER:
                if entry.is_stop:
                    out += self._stop_offer(ev, entry, now)
                else:
                    out += self._offer(ev, entry, now)
            elif entry.entry_type is wire.EntryType.SUBSCRIBE_ACK:
                out += self._ack(ev, entry, now)
        return out

    # .. offers

    def _offer(self, ev: Received, entry: wire.SdEntry, now: float) -> list[Action]:
        if self.phase is SubscriberPhase.IDLE:
            return []
        if entry.minor_version_or_eventgroup != self.service.minor and self.service.minor != ANY_MINOR:
            return [Rejected(Cause.SVCB_MISMATCH, ev.tag, "minor version mismatch")]
        self.offer = (ev.message, entry, ev.source, ev.tag)
        if self.mode is Mode.DNSSEC:
            # failed lookups are retried on the next offer
            out: list[Action] = []
            if self.svcb_failed:
                out += self._query(records.publisher_service_name(self.service), dnssec.RRType.SVCB)
            for port in list(self.tlsa_failed):
                out += self._query(records.publisher_tlsa_name(self.service, port), dnssec.RRType.TLSA)
            return out + self._try_offer(now)
        return self._try_offer(now)

    def _try_offer(self, now: float) -> list[Action]:
        msg, entry, source, tag = self.offer
        endpoint = _endpoint_option(msg, entry)
        if endpoint is None:
            self.offer = None
            return [Rejected(Cause.MALFORMED, tag, "offer without endpoint option")]
        if self.mode is Mode.NONE:
            self.offer = None
            return self._subscribe(entry, endpoint, source, tag, None, None, now)
        try:
            bundle = _security(msg, entry)
        except wire.WireError as exc:
            self.offer = None
            return [Rejected(Cause.MALFORMED, tag, str(exc))]
        if bundle.challenge is None:
            self.offer = None
            return [Rejected(Cause.MALFORMED, tag, "offer without challenge")]
        pub_name = records.publisher_tlsa_name(self.service, endpoint.port)
        if self.mode is Mode.DNSSEC:
            if self.svcb is None:
                if self.svcb_failed:
                    self.offer = None
                    return [Rejected(Cause.INSECURE_SVCB, tag, "no Secure SVCB for the service")]
                return []  # wait for the lookup
            if records.match_offer_against_svcb(entry, endpoint, self.svcb) is None:
                self.offer = None
                return [Rejected(Cause.SVCB_MISMATCH, tag, f"offered {endpoint.address}:{endpoint.port}")]
            if endpoint.port not in self.tlsa:
                if endpoint.port in self.tlsa_failed:
                    self.offer = None
                    return [Rejected(Cause.INSECURE_TLSA, tag, f"no Secure TLSA at {pub_name}")]
                if self.expected_port != endpoint.port:
                    return self._query(pub_name, dnssec.RRType.TLSA)
                return []
            if not _tlsa_certs(self.tlsa[endpoint.port], now):
                self.offer = None
                return [Rejected(Cause.INSECURE_TLSA, tag, "no full-certificate TLSA to verify against")]
        elif not _static_cert(self.static_certs, pub_name, now):
            self.offer = None
            return [Rejected(Cause.UNKNOWN_PEER, tag, f"no pre-deployed certificate for {pub_name}")]
        self.offer = None
        if bundle.challenge.nonce == self.answered_nonce and source == self.publisher:
            return []  # the same challenge seen again (unicast and multicast copy)
        if self.phase in (SubscriberPhase.AWAITING, SubscriberPhase.IDLE):
            self.phase = SubscriberPhase.VALIDATED
        return self._subscribe(entry, endpoint, source, tag, bundle.challenge.nonce, pub_name, now)

    def _subscribe(self, offer, endpoint, source, tag, publisher_nonce, pub_name, now) -> list[Action]:
        entry = wire.SdEntry(
            wire.EntryType.SUBSCRIBE, self.service.service_id, self.service.instance_id,
            self.service.major, self.timing.ttl, self.eventgroup,
        )
        self.publisher = source
        if self.phase is not SubscriberPhase.SUBSCRIBED:
            self.phase = SubscriberPhase.PENDING
        if self.mode is Mode.NONE:
            msg = wire.SdMessage.build([(entry, [self.data_endpoint], [])])
            return [Send(msg, source), Accepted(tag, "subscribe_sent")]
        client_nonce = crypto.new_nonce(self.rng)
        ka, share = crypto.ka_generate(self.group, self.rng)
        chal = wire.Challenge(client_nonce)
        digest = wire.entry_digest(entry, chal.encode(), share.encode())
        sig = crypto.sign_nonce(self.identity.keypair, publisher_nonce, self.identity.name, digest)
        bundle = wire.SecurityBundle(chal, wire.Response(sig), share, None, self.identity.name)
        msg = wire.SdMessage.build([(entry, [self.data_endpoint], [bundle.to_option()])])
        self.outstanding[client_nonce] = _OutstandingSubscribe(client_nonce, publisher_nonce, ka, pub_name, now)
        while len(self.outstanding) > self.MAX_OUTSTANDING:
            self.outstanding.popitem(last=False)
        self.publisher_name = pub_name
        self.publisher_nonce = publisher_nonce
        self.answered_nonce = publisher_nonce
        return [Send(msg, source), Accepted(tag, "subscribe_sent")]

    def _publisher_certs(self, pub_name: str, now: float) -> list[crypto.Certificate]:
        if self.mode is Mode.STATIC:
            return _static_cert(self.static_certs, pub_name, now)
        _, port = records.parse_publisher_tlsa_name(pub_name)
        return _tlsa_certs(self.tlsa.get(port, []), now)

    # .. acknowledgments

    def _ack(self, ev: Received, entry: wire.SdEntry, now: float) -> list[Action]:
        if entry.ttl == 0:
            return [Rejected(Cause.UNSOLICITED, ev.tag, "negative acknowledgment")]
        if self.mode is Mode.NONE:
            if self.phase is not SubscriberPhase.PENDING and self.phase is not SubscriberPhase.SUBSCRIBED:
                return [Rejected(Cause.UNSOLICITED, ev.tag, "no subscription pending")]
            first = self.phase is not SubscriberPhase.SUBSCRIBED
            self.phase = SubscriberPhase.SUBSCRIBED
            out: list[Action] = [Accepted(ev.tag, "subscribed")]
            if first:
                out.insert(0, Established(str(ev.source), None, None, secure=False))
            return out
        if not self.outstanding:
            return [Rejected(Cause.UNSOLICITED, ev.tag, "no subscription pending")]
        try:
            bundle = _security(ev.message, entry)
        except wire.WireError as exc:
            return [Rejected(Cause.MALFORMED, ev.tag, str(exc))]
        if bundle.is_empty() and self.allow_insecure:
            return self._accept_insecure_ack(ev)
        if bundle.response is None or bundle.key_exchange is None:
            return [Rejected(Cause.MALFORMED, ev.tag, "ack lacks response or key share")]
        digest = wire.entry_digest(entry, bundle.key_exchange.encode(), _b(bundle.session_key))
        for nonce in reversed(list(self.outstanding)):
            pending = self.outstanding[nonce]
            certs = self._publisher_certs(pending.publisher_name, now)
            if any(
                crypto.verify_nonce(c, nonce, pending.publisher_name, digest, bundle.response.signature)
                for c in certs
            ):
                return self._accept_ack(ev, pending, bundle)
        return [Rejected(Cause.BAD_SIGNATURE, ev.tag, "ack response does not verify")]

    def _accept_ack(self, ev: Received, pending: _OutstandingSubscribe, bundle: wire.SecurityBundle) -> list[Action]:
        try:
            shared = crypto.ka_shared(pending.ka, bundle.key_exchange)
        except crypto.GroupMismatch as exc:
            return [Rejected(Cause.MALFORMED, ev.tag, str(exc))]
        transcript = crypto.Transcript(
            pending.publisher_name, self.identity.name, pending.publisher_nonce, pending.client_nonce
        )
        session = crypto.derive_session_key(shared, transcript)
        group = None
        if bundle.session_key is not None:
            try:
                group = crypto.unwrap_group_key(session, bundle.session_key.ciphertext)
            except crypto.AuthFailure as exc:
                return [Rejected(Cause.BAD_SIGNATURE, ev.tag, str(exc))]
        # this and every older outstanding subscribe is settled
        for n in list(self.outstanding):
            del self.outstanding[n]
            if n == pending.client_nonce:
                break
        self.acked_nonces.append(pending.client_nonce)
        self.verified_publisher = True
        first = self.phase is not SubscriberPhase.SUBSCRIBED
        rekeyed = group is not None and self.group_key is not None and group.epoch != self.group_key.epoch
        self.phase = SubscriberPhase.SUBSCRIBED
        self.session_key, self.group_key = session, group
        self.publisher = ev.source
        out: list[Action] = []
        if first or rekeyed:
            out.append(Established(pending.publisher_name, session, group))
        out.append(Accepted(ev.tag, "subscribed"))
        return out

    def _accept_insecure_ack(self, ev: Received) -> list[Action]:
        """Publisher had no secure TLSA for us and its policy lets it ack anyway."""
        pending = next(reversed(self.outstanding.values()))
        self.outstanding.clear()
        first = self.phase is not SubscriberPhase.SUBSCRIBED
        self.phase = SubscriberPhase.SUBSCRIBED
        self.session_key = self.group_key = None
        self.publisher = ev.source
        out: list[Action] = [Accepted(ev.tag, "subscribed")]
        if first:
            out.insert(0, Established(pending.publisher_name, None, None, secure=False))
        return out

    # .. teardown

    def _stop_offer(self, ev: Received, entry: wire.SdEntry, now: float) -> list[Action]:
        if self.phase not in (SubscriberPhase.PENDING, SubscriberPhase.SUBSCRIBED):
            return []
        if self.mode is not Mode.NONE:
            try:
                bundle = _security(ev.message, entry)
            except wire.WireError as exc:
                return [Rejected(Cause.MALFORMED, ev.tag, str(exc))]
            if bundle.response is None or self.publisher_name is None:
                return [Rejected(Cause.BAD_SIGNATURE, ev.tag, "unauthenticated stop offer")]
            digest = wire.entry_digest(entry)
            certs = self._publisher_certs(self.publisher_name, now)
            nonces = list(self.acked_nonces) + list(self.outstanding)
            if not any(
                crypto.verify_nonce(c, n, self.publisher_name, digest, bundle.response.signature)
                for c in certs for n in nonces
            ):
                return [Rejected(Cause.BAD_SIGNATURE, ev.tag, "stop offer response does not verify")]
        peer = self.publisher_name or str(ev.source)
        self._reset()
        return [Teardown(peer, "StopOffer"), Accepted(ev.tag, "teardown")]

    def _reset(self) -> None:
        self.phase = SubscriberPhase.AWAITING
        self.outstanding.clear()
        self.acked_nonces.clear()
        self.session_key = self.group_key = None
        self.answered_nonce = None
        self.verified_publisher = False

    def _shutdown(self, now: float) -> list[Action]:
        if self.phase not in (SubscriberPhase.PENDING, SubscriberPhase.SUBSCRIBED) or self.publisher is None:
            self.phase = SubscriberPhase.IDLE
            return []
        entry = wire.SdEntry(
            wire.EntryType.SUBSCRIBE, self.service.service_id, self.service.instance_id,
            self.service.major, 0, self.eventgroup,
        )
        run2 = []
        if self.mode is not Mode.NONE and self.publisher_nonce is not None:
            sig = crypto.sign_nonce(
                self.identity.keypair, self.publisher_nonce, self.identity.name, wire.entry_digest(entry)
            )
            run2 = [wire.SecurityBundle(response=wire.Response(sig), identity=self.identity.name).to_option()]
        msg = wire.SdMessage.build([(entry, [self.data_endpoint], run2)])
        dest = self.publisher
        peer = self.publisher_name or str(dest)
        self._reset()
        self.phase = SubscriberPhase.IDLE
        return [Send(msg, dest), Teardown(peer, "StopSubscribe")]


def _answer_text(answer: dnssec.Answer | None) -> str:
    if answer is None:
        return "SERVFAIL"
    return f"{answer.rcode.value}/{answer.status.value}"


# -- publisher --------------------------------------------------------------


@dataclasses.dataclass
class _PendingSubscribe:
    client_name: str
    entry: wire.SdEntry
    bundle: wire.SecurityBundle
    source: Endpoint
    data_endpoint: wire.Ipv4EndpointOption | None
    tag: typing.Any
    received_at: float


@dataclasses.dataclass
class Subscription:
    client_name: str
    sd_endpoint: Endpoint
    data_endpoint: wire.Ipv4EndpointOption | None
    session_key: crypto.SessionKey | None
    client_nonce: int | None
    certificate: crypto.Certificate | None
    phase: ClientPhase = ClientPhase.ACKED


class PublisherFsm:
    """Server side: cyclic offers with challenges, subscription handling."""

    def __init__(
        self,
        service: records.ServiceKey,
        sd_endpoint: Endpoint,
        service_endpoint: wire.Ipv4EndpointOption,
        mode: Mode = Mode.DNSSEC,
        identity: Identity | None = None,
        policy: AuthorizationPolicy = AuthorizationPolicy(),
        static_certs: typing.Mapping[str, crypto.Certificate] | None = None,
        multicast: wire.Ipv4MulticastOption | None = None,
        timing: Timing = Timing(),
        rng: random.Random | None = None,
        group: int = crypto.DEFAULT_GROUP,
        max_challenges: int = 64,
        max_pending: int = 256,
    ):
        if mode is not Mode.NONE and identity is None:
            raise ValueError("secure publishers need an identity")
        self.service = service
        self.sd_endpoint = sd_endpoint
        self.service_endpoint = service_endpoint
        self.mode = mode
        self.identity = identity
        self.policy = policy
        self.static_certs = dict(static_certs or {})
        self.multicast = multicast
        self.timing = timing
        self.rng = rng or random.Random()
        self.group = group
        self.max_challenges = max_challenges
        self.max_pending = max_pending

        self.started = False
        self.stopped = False
        self.offers_sent = 0
        self.first_offer_at: float | None = None
        self.current_nonce: int | None = None
        self.issued: collections.OrderedDict[int, float] = collections.OrderedDict()
        self.retired: collections.deque[int] = collections.deque(maxlen=max_challenges)
        self.answered: set[tuple[int, str]] = set()
        self.pending: collections.OrderedDict[int, _PendingSubscribe] = collections.OrderedDict()
        self._pending_seq = 0
        self.subscriptions: dict[str, Subscription] = {}
        self.group_key: crypto.GroupKey | None = (
            crypto.new_group_key(0, self.rng) if mode is not Mode.NONE and multicast is not None else None
        )
        # names whose response verified, for the safety checker
        self.verified_clients: set[str] = set()

    def clone(self) -> PublisherFsm:
        new = copy.copy(self)
        new.rng = copy.copy(self.rng)
        new.issued = collections.OrderedDict(self.issued)
        new.retired = collections.deque(self.retired, maxlen=self.retired.maxlen)
        new.answered = set(self.answered)
        new.pending = collections.OrderedDict(self.pending)
        new.subscriptions = {k: dataclasses.replace(v) for k, v in self.subscriptions.items()}
        new.verified_clients = set(self.verified_clients)
        return new

    def step(self, event: Event, now: float) -> list[Action]:
        if isinstance(event, Start):
            if self.started:
                return []
            self.started = True
            lo, hi = self.timing.initial_delay
            return [Arm("offer", now + self.rng.uniform(lo, hi))]
        if isinstance(event, TimerFired):
            return self._timer(event.name, now)
        if isinstance(event, Received):
            return self._received(event, now)
        if isinstance(event, DnsAnswer):
            return self._dns(event, now)
        if isinstance(event, Shutdown):
            return self._shutdown(now)
        if isinstance(event, Rekey):
            if self.group_key is not None:
                self.group_key = crypto.rekey(self.group_key, self.rng)
            return []
        return []

    # .. offers and challenges

    def _expire(self, now: float) -> None:
        while self.issued:
            nonce, at = next(iter(self.issued.items()))
            if now - at <= self.timing.nonce_lifetime and len(self.issued) <= self.max_challenges:
                break
            del self.issued[nonce]
            self.retired.append(nonce)
        live = set(self.issued)
        self.answered = {a for a in self.answered if a[0] in live}

    def _offer_message(self, stop: bool = False, nonce: int | None = None, client_nonce: int | None = None) -> wire.SdMessage:
        entry = wire.SdEntry(
            wire.EntryType.OFFER, self.service.service_id, self.service.instance_id,
            self.service.major, 0 if stop else self.timing.ttl, self.service.minor,
        )
        run2 = []
        if self.mode is not Mode.NONE:
            if stop:
                if client_nonce is not None:
                    sig = crypto.sign_nonce(
                        self.identity.keypair, client_nonce, self.identity.name, wire.entry_digest(entry)
                    )
                    run2 = [wire.SecurityBundle(response=wire.Response(sig)).to_option()]
            else:
                run2 = [wire.SecurityBundle(challenge=wire.Challenge(nonce)).to_option()]
        return wire.SdMessage.build([(entry, [self.service_endpoint], run2)])

    def _timer(self, name: str, now: float) -> list[Action]:
        if name != "offer" or self.stopped:
            return []
        self._expire(now)
        if self.mode is not Mode.NONE:
            self.current_nonce = crypto.new_nonce(self.rng)
            self.issued[self.current_nonce] = now
            self._expire(now)
        if self.first_offer_at is None:
            self.first_offer_at = now
        self.offers_sent += 1
        if self.offers_sent <= self.timing.repetitions:
            delay = self.timing.repetition_base * (2 ** (self.offers_sent - 1))
        else:
            delay = self.timing.cyclic_offer
        return [Send(self._offer_message(nonce=self.current_nonce), None), Arm("offer", now + delay)]

    def _received(self, ev: Received, now: float) -> list[Action]:
        out: list[Action] = []
        for entry in ev.message.entries:
            if entry.service_id != self.service.service_id:
                continue
            if entry.entry_type is wire.EntryType.FIND:
                if entry.instance_id not in (self.service.instance_id, ANY_INSTANCE):
                    continue
                if entry.major_version not in (self.service.major, ANY_MAJOR):
                    continue
                if self.offers_sent and not self.stopped:
                    self._expire(now)
                    if self.mode is not Mode.NONE and self.current_nonce not in self.issued:
                        self.current_nonce = crypto.new_nonce(self.rng)
                        self.issued[self.current_nonce] = now
                    out.append(Send(self._offer_message(nonce=self.current_nonce), ev.source))
            elif entry.entry_type is wire.EntryType.SUBSCRIBE:
                if entry.instance_id != self.service.instance_id or entry.major_version != self.service.major:
                    continue
                if self.stopped or not self.offers_sent:
                    out.append(Rejected(Cause.UNSOLICITED, ev.tag, "service not offered"))
                elif entry.is_stop:
                    out += self._stop_subscribe(ev, entry, now)
                else:
                    out += self._subscribe(ev, entry, now)
        return out

    # .. subscribe handling

    def _subscribe(self, ev: Received, entry: wire.SdEntry, now: float) -> list[Action]:
        data_ep = _endpoint_option(ev.message, entry)
        if self.mode is Mode.NONE:
            key = str(data_ep) if data_ep is not None else str(ev.source)
            return self._ack(key, entry, ev.source, data_ep, None, None, None, None, ev.tag)
        try:
            bundle = _security(ev.message, entry)
        except wire.WireError as exc:
            return [Rejected(Cause.MALFORMED, ev.tag, str(exc))]
        if None in (bundle.response, bundle.challenge, bundle.key_exchange) or not bundle.identity:
            return [Rejected(Cause.MALFORMED, ev.tag, "subscribe lacks security options")]
        name = bundle.identity
        decision = authorize_client_name(name, self.service, self.policy)
        if not decision.authorized:
            return [Rejected(Cause.UNAUTHORIZED, ev.tag, f"{name}: {decision.reason}")]
        name = records.normalize_name(name)
        pending = _PendingSubscribe(name, entry, bundle, ev.source, data_ep, ev.tag, now)
        if self.mode is Mode.STATIC:
            certs = _static_cert(self.static_certs, name, now)
            if not certs:
                return [Rejected(Cause.UNKNOWN_PEER, ev.tag, f"no pre-deployed certificate for {name}")]
            return self._verify(pending, certs, now)
        out: list[Action] = []
        self._pending_seq += 1
        self.pending[self._pending_seq] = pending
        while len(self.pending) > self.max_pending:
            _, old = self.pending.popitem(last=False)
            out.append(Rejected(Cause.EVICTED, old.tag, f"pending subscribe from {old.client_name} evicted"))
        # an existing subscription stays Acked until a re-subscribe verifies
        out.append(Query(name, dnssec.RRType.TLSA))
        return out

    def _dns(self, ev: DnsAnswer, now: float) -> list[Action]:
        if ev.rtype != dnssec.RRType.TLSA:
            return []
        name = records.normalize_name(ev.name)
        waiting = [k for k, p in self.pending.items() if p.client_name == name]
        out: list[Action] = []
        for k in waiting:
            pending = self.pending.pop(k)
            if _insecure(ev.answer):
                if self.policy.allow_insecure:
                    out += self._ack(
                        name, pending.entry, pending.source, pending.data_endpoint, None, None, None, None,
                        pending.tag, secure=False,
                    )
                else:
                    out.append(Rejected(Cause.INSECURE_TLSA, pending.tag, f"{name}: {_answer_text(ev.answer)}"))
                continue
            certs = _tlsa_certs(ev.answer.records, now)
            if not certs:
                out.append(Rejected(Cause.INSECURE_TLSA, pending.tag, f"{name}: no full-certificate TLSA"))
                continue
            out += self._verify(pending, certs, now)
        return out

    def _verify(self, p: _PendingSubscribe, certs: list[crypto.Certificate], now: float) -> list[Action]:
        self._expire(now)
        digest = wire.entry_digest(p.entry, p.bundle.challenge.encode(), p.bundle.key_exchange.encode())
        sig = p.bundle.response.signature

        def verifies(nonce: int) -> crypto.Certificate | None:
            for cert in certs:
                if crypto.verify_nonce(cert, nonce, p.client_name, digest, sig):
                    return cert
            return None

        for nonce in reversed(list(self.issued)):
            cert = verifies(nonce)
            if cert is None:
                continue
            if (nonce, p.client_name) in self.answered:
                return [Rejected(Cause.STALE_NONCE, p.tag, f"challenge {nonce:#010x} already answered")]
            self.answered.add((nonce, p.client_name))
            self.verified_clients.add(p.client_name)
            return self._ack(
                p.client_name, p.entry, p.source, p.data_endpoint, p.bundle, nonce, cert, p.bundle.challenge.nonce,
                p.tag,
            )
        if any(verifies(n) for n in self.retired):
            return [Rejected(Cause.STALE_NONCE, p.tag, "response to an expired challenge")]
        return [Rejected(Cause.BAD_SIGNATURE, p.tag, f"response from {p.client_name} does not verify")]

    def _ack(
        self, key, entry, source, data_ep, bundle, publisher_nonce, cert, client_nonce, tag, secure=True
    ) -> list[Action]:
        ack = wire.SdEntry(
            wire.EntryType.SUBSCRIBE_ACK, self.service.service_id, self.service.instance_id,
            self.service.major, entry.ttl, entry.minor_version_or_eventgroup,
        )
        run1 = [self.multicast] if self.multicast is not None else []
        run2 = []
        session = None
        if bundle is not None:
            ka, share = crypto.ka_generate(self.group, self.rng)
            try:
                shared = crypto.ka_shared(ka, bundle.key_exchange)
            except crypto.GroupMismatch as exc:
                return [Rejected(Cause.MALFORMED, tag, str(exc))]
            transcript = crypto.Transcript(self.identity.name, key, publisher_nonce, client_nonce)
            session = crypto.derive_session_key(shared, transcript)
            skey = None
            if self.group_key is not None:
                skey = wire.SessionKey(crypto.wrap_group_key(session, self.group_key, self.rng))
            digest = wire.entry_digest(ack, share.encode(), _b(skey))
            sig = crypto.sign_nonce(self.identity.keypair, client_nonce, self.identity.name, digest)
            run2 = [wire.SecurityBundle(response=wire.Response(sig), key_exchange=share, session_key=skey).to_option()]
        first = key not in self.subscriptions or self.subscriptions[key].phase is not ClientPhase.ACKED
        self.subscriptions[key] = Subscription(key, source, data_ep, session, client_nonce, cert)
        out: list[Action] = [Send(wire.SdMessage.build([(ack, run1, run2)]), source)]
        if first:
            out.append(Established(key, session, self.group_key, secure=bundle is not None))
        out.append(Accepted(tag, "acked"))
        return out

    def _stop_subscribe(self, ev: Received, entry: wire.SdEntry, now: float) -> list[Action]:
        if self.mode is Mode.NONE:
            data_ep = _endpoint_option(ev.message, entry)
            key = str(data_ep) if data_ep is not None else str(ev.source)
            if self.subscriptions.pop(key, None) is None:
                return []
            return [Teardown(key, "StopSubscribe"), Accepted(ev.tag, "teardown")]
        try:
            bundle = _security(ev.message, entry)
        except wire.WireError as exc:
            return [Rejected(Cause.MALFORMED, ev.tag, str(exc))]
        name = records.normalize_name(bundle.identity) if bundle.identity else None
        sub = self.subscriptions.get(name) if name else None
        if sub is None:
            return [Rejected(Cause.UNSOLICITED, ev.tag, "stop for unknown subscription")]
        if bundle.response is None or sub.certificate is None:
            return [Rejected(Cause.BAD_SIGNATURE, ev.tag, "unauthenticated stop subscribe")]
        self._expire(now)
        digest = wire.entry_digest(entry)
        for nonce in reversed(list(self.issued)):
            if crypto.verify_nonce(sub.certificate, nonce, name, digest, bundle.response.signature):
                if (nonce, "stop:" + name) in self.answered:
                    return [Rejected(Cause.STALE_NONCE, ev.tag, "stop subscribe replayed")]
                self.answered.add((nonce, "stop:" + name))
                del self.subscriptions[name]
                return [Teardown(name, "StopSubscribe"), Accepted(ev.tag, "teardown")]
        return [Rejected(Cause.BAD_SIGNATURE, ev.tag, "stop subscribe response does not verify")]

    def _shutdown(self, now: float) -> list[Action]:
        if self.stopped:
            return []
        self.stopped = True
        out: list[Action] = []
        if self.mode is Mode.NONE:
            out.append(Send(self._offer_message(stop=True), None))
        for sub in self.subscriptions.values():
            if self.mode is not Mode.NONE:
                out.append(Send(self._offer_message(stop=True, client_nonce=sub.client_nonce), sub.sd_endpoint))
            out.append(Teardown(sub.client_name, "StopOffer"))
        self.subscriptions.clear()
        return out

    def seal(self, payload: bytes) -> bytes:
        if self.group_key is None:
            raise crypto.CryptoError("no group key for this service")
        return crypto.seal_publication(self.group_key, payload, self.rng)


def subscriber_step(fsm: SubscriberFsm, event: Event, now: float) -> tuple[SubscriberFsm, list[Action]]:
    """Functional form of :meth:`SubscriberFsm.step`; ``fsm`` is left untouched."""
    nxt = fsm.clone()
    return nxt, nxt.step(event, now)


def publisher_step(fsm: PublisherFsm, event: Event, now: float) -> tuple[PublisherFsm, list[Action]]:
    nxt = fsm.clone()
    return nxt, nxt.step(event, now)
