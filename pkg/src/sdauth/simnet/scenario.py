"""Scenario worlds, the simulation host for the discovery machines, and metrics.

Two clocks run side by side.  The virtual clock orders events and is fully
determined by the configuration and seed.  The measured timeline adds real
compute along causal chains: every event carries the measured time of the
step that caused it, and handling it adds the wall time of the handler.
Independent events do not queue behind each other unless ``contention`` is
set, which turns every endpoint and the resolver into a single server.
Setup times are reported on both clocks; only virtual rows take part in
determinism checks.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import random
import statistics
import time
import typing

from sdauth import crypto, discovery, dnssec, records, wire, zoneforge
from sdauth.discovery import Endpoint, Mode
from sdauth.simnet import ivn
from sdauth.simnet.engine import ConfigError, Counters, EventLoop, Topology

# 2026-01-01T00:00:00Z; virtual time is absolute so certificates and RRSIGs
# are checked against realistic dates
DEFAULT_EPOCH = 1_767_225_600.0
SD_PORT_BASE = 30490
DATA_PORT_BASE = 40000
RESOLVER_DELAY = 1e-4

VARIANTS = {m.value: m for m in Mode}


def variant(value: str | Mode) -> Mode:
    if isinstance(value, Mode):
        return value
    try:
        return VARIANTS[value]
    except KeyError:
        raise ConfigError(f"unknown variant {value!r}; expected one of {sorted(VARIANTS)}") from None


# -- credentials ------------------------------------------------------------


@dataclasses.dataclass
class World:
    """Credentials and the signed vehicle zone for one plan."""

    plan: zoneforge.VehicleZonePlan
    profile: str
    epoch: float
    oem: dnssec.OemAuthority
    zone: dnssec.Zone
    bundles: dict[str, zoneforge.SupplierBundle]

    def _bundle(self, name: str) -> zoneforge.SupplierBundle:
        try:
            return self.bundles[name]
        except KeyError:
            raise ConfigError(f"no credentials for {name} in this world") from None

    def identity(self, name: str) -> discovery.Identity:
        b = self._bundle(name)
        return discovery.Identity(b.identity, b.keypair, b.certificate)

    def certificate(self, name: str) -> crypto.Certificate:
        return self._bundle(name).certificate


_WORLDS: dict[tuple, World] = {}


def build_world(
    plan: zoneforge.VehicleZonePlan,
    profile: str = crypto.DEFAULT_PROFILE,
    epoch: float = DEFAULT_EPOCH,
    cache: bool = True,
    ttl: int = dnssec.DEFAULT_TTL,
) -> World:
    """Issue one bundle per identity and build the signed zone.

    Key generation dominates (about 80 ms per RSA identity), so worlds are
    memoized per (plan, profile, epoch, ttl) unless ``cache`` is false.
    """
    key = (plan.to_text(), profile, epoch, ttl)
    if cache and key in _WORLDS:
        return _WORLDS[key]
    bundles = zoneforge.issue_plan_bundles(plan, epoch - 86400, epoch + 365 * 86400, profile)
    oem = dnssec.OemAuthority(profile)
    zone = zoneforge.build_vehicle_zone(plan, bundles, oem, epoch - 3600, ttl=ttl)
    world = World(plan, profile, epoch, oem, zone, bundles)
    if cache:
        _WORLDS[key] = world
    return world


# -- configuration ----------------------------------------------------------


@dataclasses.dataclass
class ScenarioConfig:
    plan: zoneforge.VehicleZonePlan
    variant: Mode = Mode.DNSSEC
    seed: int = 1
    timing: discovery.Timing = discovery.Timing()
    loss: float = 0.0
    link_latency: float = 10e-6
    resolver_delay: float = RESOLVER_DELAY
    resolver_host: str | None = None
    horizon: float = 30.0
    profile: str = crypto.DEFAULT_PROFILE
    offline: bool = False
    policy: discovery.AuthorizationPolicy = discovery.AuthorizationPolicy()
    epoch: float = DEFAULT_EPOCH
    topology: Topology | None = None
    world: World | None = None
    subscriber_limit: int | None = None
    exclude: frozenset = frozenset()
    stop_when_established: bool = True
    contention: bool = False

    def __post_init__(self):
        self.variant = variant(self.variant)
        if not 0.0 <= self.loss < 1.0:
            raise ConfigError("loss probability must be in [0, 1)")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.offline and self.variant is not Mode.DNSSEC:
            raise ConfigError("offline operation only applies to the dnssec variant")


def topology_for(plan: zoneforge.VehicleZonePlan, link_latency: float) -> Topology:
    """The IVN topology when the plan uses its hosts, else one switch per address."""
    hosts = {p.host for p in plan.publishers} | {s.host for s in plan.subscribers}
    known = {h for h, _, _, _ in ivn.HOSTS}
    if hosts <= known:
        return ivn.ivn_topology(link_latency)
    topo = Topology(link_latency=link_latency)
    for p in plan.publishers:
        name = p.host or p.address
        if name not in topo.hosts:
            topo.add_host(name, p.address)
    n = 200
    for s in plan.subscribers:
        name = s.host or "clients"
        if name not in topo.hosts:
            n += 1
            topo.add_host(name, f"10.0.1.{n % 250 + 1}")
    return topo


# -- metrics ----------------------------------------------------------------


VIRTUAL = "virtual"
WALL = "wall"


@dataclasses.dataclass
class RunMetrics:
    variant: str
    seed: int
    samples: dict[str, tuple[str, list[float]]] = dataclasses.field(default_factory=dict)
    counts: dict[str, int] = dataclasses.field(default_factory=dict)
    failures: list[tuple[str, str]] = dataclasses.field(default_factory=list)
    rejections: dict[str, int] = dataclasses.field(default_factory=dict)
    service_setup: dict[str, tuple[float, float]] = dataclasses.field(default_factory=dict)
    dns_statuses: dict[str, int] = dataclasses.field(default_factory=dict)

    def add(self, metric: str, clock: str, value: float) -> None:
        self.samples.setdefault(metric, (clock, []))[1].append(value)

    def summary(self, metric: str) -> tuple[float, float, float, int]:
        _, v = self.samples.get(metric, (None, []))
        if not v:
            return (float("nan"),) * 3 + (0,)  # type: ignore[return-value]
        return min(v), statistics.fmean(v), max(v), len(v)

    @property
    def established(self) -> int:
        return self.counts.get("subscriptions_established", 0)

    def rows(self) -> list[tuple[str, str, str, str, int, str]]:
        out = []
        for metric in sorted(self.samples):
            clock, v = self.samples[metric]
            if v:
                out.append((metric, f"{min(v):.6f}", f"{statistics.fmean(v):.6f}", f"{max(v):.6f}", len(v), clock))
        for metric in sorted(self.counts):
            c = self.counts[metric]
            out.append((metric, str(c), str(c), str(c), 1, VIRTUAL))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "min", "mean", "max", "count", "clock"))
        w.writerows(self.rows())
        return buf.getvalue()

    def virtual_csv(self) -> str:
        return "\n".join(line for line in self.to_csv().splitlines() if line.endswith("," + VIRTUAL)) + "\n"


# -- the simulation ---------------------------------------------------------


@dataclasses.dataclass(eq=False)
class Node:
    name: str
    kind: str
    host: str
    sd: Endpoint
    fsm: typing.Any
    service: records.ServiceKey
    busy: float = 0.0
    established: tuple[float, float] | None = None
    last_reject: str | None = None
    publisher: "Node | None" = None
    subscribers: list = dataclasses.field(default_factory=list)
    first_offer: tuple[float, float] | None = None
    seq: int = 0


class Simulation:
    def __init__(self, config: ScenarioConfig, adversary=None):
        self.cfg = config
        self.mode = config.variant
        self.world = config.world
        if self.world is None and self.mode is not Mode.NONE:
            self.world = build_world(config.plan, config.profile, config.epoch)
        self.topo = config.topology or topology_for(config.plan, config.link_latency)
        if not self.topo.connected():
            raise ConfigError("topology is not connected")
        self.loop = EventLoop(config.epoch)
        self.counters = Counters()
        self.loss_rng = random.Random(f"loss:{config.seed}")
        self.metrics = RunMetrics(self.mode.value, config.seed)
        self.trace: dict[typing.Any, list[tuple[str, str, str]]] = {}
        self.nodes: list[Node] = []
        self.by_endpoint: dict[Endpoint, Node] = {}
        self.index: dict[str, dict[int, list[Node]]] = {}
        self.subscribers: list[Node] = []
        self.publishers: list[Node] = []
        self.insecure_acks = 0
        self.teardowns: list[tuple[str, str]] = []
        self.remaining = 0
        self.resolver = None
        self.resolver_busy = 0.0
        self.resolver_host = config.resolver_host or (
            ivn.RESOLVER_HOST if ivn.RESOLVER_HOST in self.topo.hosts else next(iter(self.topo.hosts))
        )
        self.adversary = adversary
        self._build()
        if adversary is not None:
            adversary.attach(self)

    # .. construction

    def _host_of(self, host: str | None, address: str) -> str:
        if host and host in self.topo.hosts:
            return host
        h = self.topo.by_ip.get(address)
        if h is None:
            raise ConfigError(f"no host for {host or address}")
        return h.name

    def _build(self) -> None:
        cfg, plan = self.cfg, self.cfg.plan
        master = random.Random(f"fsm:{cfg.seed}")
        if self.mode is Mode.DNSSEC:
            self.source = dnssec.ZoneSource(self.world.zone)
            self.resolver = dnssec.Resolver(self.world.oem.trust_anchor, self.source)
            if cfg.offline:
                report = self.resolver.preload(cfg.epoch, self.source)
                self.preload_report = report
                self.source.reachable = False
                self.resolver.fetch_count = 0
        port_seq: dict[str, int] = {}

        def sd_endpoint(host: str) -> Endpoint:
            port_seq[host] = port_seq.get(host, SD_PORT_BASE) + 1
            return Endpoint(self.topo.hosts[host].ip, port_seq[host])

        by_scope: dict[records.PublisherScope, Node] = {}
        subs_of: dict[records.PublisherScope, list[zoneforge.SubscriberSpec]] = {}
        active_subs = [s for s in plan.subscribers if s.tlsa_name not in cfg.exclude]
        if cfg.subscriber_limit is not None:
            active_subs = active_subs[:cfg.subscriber_limit]
        for s in active_subs:
            subs_of.setdefault(s.target, []).append(s)

        for p in plan.publishers:
            if p.tlsa_name in cfg.exclude:
                continue
            host = self._host_of(p.host, p.address)
            ident = self.world.identity(p.tlsa_name) if self.mode is not Mode.NONE else None
            static = {}
            if self.mode is Mode.STATIC:
                static = {s.tlsa_name: self.world.certificate(s.tlsa_name) for s in subs_of.get(records.PublisherScope.of(p.key), [])}
            mc = wire.Ipv4MulticastOption(p.multicast[0], wire.PROTO_UDP, p.multicast[1]) if p.multicast else None
            sd = sd_endpoint(host)
            fsm = discovery.PublisherFsm(
                p.key, sd, wire.Ipv4EndpointOption(p.address, p.protocol, p.port), self.mode, ident,
                cfg.policy, static, mc, cfg.timing, random.Random(master.getrandbits(64)),
            )
            node = Node(p.tlsa_name, "publisher", host, sd, fsm, p.key)
            self._register(node)
            self.publishers.append(node)
            by_scope[records.PublisherScope.of(p.key)] = node

        for i, s in enumerate(active_subs):
            pub = by_scope.get(s.target)
            spec = plan.publisher_for(s.target)
            if spec is None:
                raise ConfigError(f"{s.tlsa_name} targets a service missing from the plan")
            host = self._host_of(s.host, "")
            ident = self.world.identity(s.tlsa_name) if self.mode is not Mode.NONE else None
            static = {}
            if self.mode is Mode.STATIC:
                static = {spec.tlsa_name: self.world.certificate(spec.tlsa_name)}
            sd = sd_endpoint(host)
            data = wire.Ipv4EndpointOption(self.topo.hosts[host].ip, wire.PROTO_UDP, DATA_PORT_BASE + i)
            fsm = discovery.SubscriberFsm(
                spec.key, sd, data, self.mode, ident, spec.port, static, cfg.timing,
                random.Random(master.getrandbits(64)), allow_insecure=cfg.policy.allow_insecure,
            )
            node = Node(s.tlsa_name, "subscriber", host, sd, fsm, spec.key, publisher=pub)
            self._register(node)
            self.subscribers.append(node)
            if pub is not None:
                pub.subscribers.append(node)
        self.remaining = len(self.subscribers)

    def _register(self, node: Node) -> None:
        self.nodes.append(node)
        self.by_endpoint[node.sd] = node
        self.index.setdefault(node.host, {}).setdefault(node.service.service_id, []).append(node)

    # .. running

    def run(self) -> RunMetrics:
        cfg = self.cfg
        crypto.TIMINGS.reset()
        t0 = cfg.epoch
        for node in self.nodes:
            node.busy = t0
            self.loop.schedule(t0, self._dispatch, node, discovery.Start(), t0)
        if self.adversary is not None:
            self.adversary.start(t0)
        stop = (lambda: self.remaining == 0) if cfg.stop_when_established else None
        wall0 = time.perf_counter()
        self.loop.run(until=t0 + cfg.horizon, stop=stop)
        self.wall_time = time.perf_counter() - wall0
        return self._collect()

    def _dispatch(self, node: Node, event, m: float) -> None:
        v = self.loop.now
        start = max(m, node.busy) if self.cfg.contention else m
        w0 = time.perf_counter()
        actions = node.fsm.step(event, v)
        end = start + (time.perf_counter() - w0)
        node.busy = end
        for a in actions:
            self._act(node, a, v, end)

    def _act(self, node: Node, a, v: float, m: float) -> None:
        if isinstance(a, discovery.Send):
            node.seq += 1
            tag = (node.name, node.seq)
            if node.kind == "publisher" and node.first_offer is None and any(
                e.entry_type is wire.EntryType.OFFER and not e.is_stop for e in a.message.entries
            ):
                node.first_offer = (v, m)
            self.transmit(wire.encode_message(a.message), node.sd, node.host, a.dest, v, m, tag, node)
        elif isinstance(a, discovery.Query):
            self.counters.dns_queries += 1
            lat = self.topo.latency(node.host, self.resolver_host)
            self.loop.schedule(v + lat, self._resolve, node, a, v, m + lat)
        elif isinstance(a, discovery.Arm):
            self.loop.schedule(max(a.at, v), self._fire, node, a.timer, m - v)
        elif isinstance(a, discovery.Established):
            if node.kind == "subscriber":
                if node.established is None:
                    node.established = (v, m)
                    self.remaining -= 1
            elif not a.secure and self.mode is not Mode.NONE:
                self.insecure_acks += 1
        elif isinstance(a, discovery.Teardown):
            self.teardowns.append((node.name, a.reason))
            if node.kind == "subscriber" and node.established is not None:
                node.established = None
                self.remaining += 1
        elif isinstance(a, discovery.Rejected):
            cause = a.cause.value
            self.metrics.rejections[cause] = self.metrics.rejections.get(cause, 0) + 1
            node.last_reject = cause
            if a.tag is not None:
                self.trace.setdefault(a.tag, []).append((node.name, "rejected", cause))
                origin = self._node_named(a.tag)
                if origin is not None and origin is not node:
                    origin.last_reject = cause
        elif isinstance(a, discovery.Accepted):
            if a.tag is not None:
                self.trace.setdefault(a.tag, []).append((node.name, "accepted", a.effect))

    def _node_named(self, tag) -> Node | None:
        if not isinstance(tag, tuple) or not tag or not isinstance(tag[0], str):
            return None
        if not hasattr(self, "_names"):
            self._names = {n.name: n for n in self.nodes}
        return self._names.get(tag[0])

    def _fire(self, node: Node, timer: str, lag: float) -> None:
        self._dispatch(node, discovery.TimerFired(timer), self.loop.now + lag)

    def _resolve(self, node: Node, q: discovery.Query, v_sent: float, m_arrive: float) -> None:
        v = self.loop.now
        start = max(m_arrive, self.resolver_busy) if self.cfg.contention else m_arrive
        w0 = time.perf_counter()
        try:
            answer = self.resolver.resolve(q.name, q.rtype, v) if self.resolver else None
        except dnssec.ServFail:
            answer = None
        wall = time.perf_counter() - w0
        self.resolver_busy = start + wall
        key = "servfail" if answer is None else (
            f"{answer.status.value}{'/cache' if answer.from_cache else ''}"
        )
        self.metrics.dns_statuses[key] = self.metrics.dns_statuses.get(key, 0) + 1
        lat = self.topo.latency(self.resolver_host, node.host)
        v_done = v + self.cfg.resolver_delay + lat
        m_done = start + wall + self.cfg.resolver_delay + lat
        if node.kind == "publisher":
            metric = "resolve_sub_tlsa"
        else:
            metric = "resolve_pub_svcb" if q.rtype == dnssec.RRType.SVCB else "resolve_pub_tlsa"
        v_query = v - self.topo.latency(node.host, self.resolver_host)
        self.metrics.add(metric + "_virtual", VIRTUAL, (v_done - v_query) * 1e3)
        self.metrics.add(metric, WALL, (m_done - (m_arrive - (v - v_query))) * 1e3)
        self.loop.schedule(v_done, self._dispatch, node, discovery.DnsAnswer(q.name, q.rtype, answer), m_done)

    def transmit(self, data: bytes, src: Endpoint, src_host: str | None, dest: Endpoint | None,
                 v: float, m: float, tag, origin: Node | None = None) -> None:
        if dest is None:
            hosts = list(self.topo.hosts)
        else:
            h = self.topo.by_ip.get(dest.address)
            hosts = [h.name] if h is not None else []
        try:
            msg = wire.decode_message(data)
        except wire.WireError:
            msg = None
        if self.adversary is not None:
            verdict = self.adversary.on_transmit(data, msg, src, dest, v, tag)
            if verdict is None:
                n = max(1, len(hosts))
                self.counters.sent += n
                self.counters.blocked += n
                return
            if verdict[0] is not data:
                data, tag = verdict
                try:
                    msg = wire.decode_message(data)
                except wire.WireError:
                    msg = None
            if dest is not None and not hosts and self.adversary.owns(dest):
                self.counters.sent += 1
                self.counters.delivered += 1
                self.adversary.receive(msg, src, dest, v)
                return
        if not hosts:
            self.counters.sent += 1
            self.counters.dropped += 1
            return
        for h in hosts:
            self.counters.sent += 1
            if self.cfg.loss and self.loss_rng.random() < self.cfg.loss:
                self.counters.dropped += 1
                continue
            lat = self.topo.latency(src_host, h) if src_host else self.topo.latency_from_core(h)
            self.loop.schedule(v + lat, self._arrive, h, msg, src, dest, m + lat, tag, origin)

    def _arrive(self, host: str, msg, src: Endpoint, dest: Endpoint | None, m: float, tag, origin) -> None:
        self.counters.delivered += 1
        if msg is None:
            self.counters.malformed += 1
            return
        if dest is not None:
            node = self.by_endpoint.get(dest)
            if node is not None and node.host == host:
                self._dispatch(node, discovery.Received(msg, src, tag), m)
            return
        by_service = self.index.get(host, {})
        seen = set()
        for e in msg.entries:
            for node in by_service.get(e.service_id, ()):
                if node is origin or id(node) in seen:
                    continue
                seen.add(id(node))
                self._dispatch(node, discovery.Received(msg, src, tag), m)

    # .. results

    def _collect(self) -> RunMetrics:
        mt = self.metrics
        t_first_v = t_first_m = None
        t_last_v = t_last_m = None
        for pub in self.publishers:
            if pub.first_offer is None:
                continue
            fv, fm = pub.first_offer
            t_first_v = fv if t_first_v is None else min(t_first_v, fv)
            t_first_m = fm if t_first_m is None else min(t_first_m, fm)
            done = [s.established for s in pub.subscribers]
            for s in done:
                if s is not None:
                    mt.add("subscription_setup_virtual", VIRTUAL, (s[0] - fv) * 1e3)
                    mt.add("subscription_setup", WALL, (s[1] - fm) * 1e3)
            if done and all(s is not None for s in done):
                sv = max(s[0] for s in done) - fv
                sm = max(s[1] for s in done) - fm
                mt.add("service_setup_virtual", VIRTUAL, sv * 1e3)
                mt.add("service_setup", WALL, sm * 1e3)
                mt.service_setup[pub.name] = (sv * 1e3, sm * 1e3)
        for s in self.subscribers:
            if s.established is not None:
                t_last_v = s.established[0] if t_last_v is None else max(t_last_v, s.established[0])
                t_last_m = s.established[1] if t_last_m is None else max(t_last_m, s.established[1])
            else:
                mt.failures.append((s.name, s.last_reject or "Timeout"))
        if t_first_v is not None and t_last_v is not None and not mt.failures:
            mt.add("network_setup_virtual", VIRTUAL, (t_last_v - t_first_v) * 1e3)
            mt.add("network_setup", WALL, (t_last_m - t_first_m) * 1e3)
        for op, values in crypto.TIMINGS.snapshot().items():
            for x in values:
                mt.add(op, WALL, x * 1e3)
        c = self.counters
        mt.counts.update({
            "messages_sent": c.sent,
            "messages_delivered": c.delivered,
            "messages_dropped": c.dropped,
            "messages_blocked": c.blocked,
            "messages_malformed": c.malformed,
            "dns_queries": c.dns_queries,
            "dns_fetches": self.resolver.fetch_count if self.resolver else 0,
            "subscriptions_total": len(self.subscribers),
            "subscriptions_established": sum(1 for s in self.subscribers if s.established is not None),
            "subscriptions_failed": len(mt.failures),
            "insecure_acks": self.insecure_acks,
        })
        return mt


def run_scenario(config: ScenarioConfig) -> RunMetrics:
    """Run one scenario to completion (all subscribed) or to the horizon."""
    return Simulation(config).run()


# -- scalability ------------------------------------------------------------


def scalability_plan(max_subscribers: int = 50) -> zoneforge.VehicleZonePlan:
    """One publisher on the ADAS HPC and subscribers spread over the other hosts."""
    key = records.ServiceKey(42, 1, 2, 3, ivn.VEHICLE)
    hosts = [h for h, _, _, _ in ivn.HOSTS if h != "hpc_adas"]
    pub = zoneforge.PublisherSpec(key, ivn.host_ip(0), 5000, wire.PROTO_UDP, "hpc_adas", ("239.1.0.0", 31000))
    scope = records.PublisherScope.of(key)
    subs = [
        zoneforge.SubscriberSpec(records.ClientKey(17 + i, ivn.VEHICLE, scope), scope, hosts[i % len(hosts)])
        for i in range(max_subscribers)
    ]
    return zoneforge.VehicleZonePlan(ivn.VEHICLE, [pub], subs)


@dataclasses.dataclass
class ScalabilityPoint:
    variant: str
    sub_count: int
    established: int
    setup_mean: float
    setup_min: float
    setup_max: float
    setup_virtual_mean: float
    service_setup: float


@dataclasses.dataclass
class ScalabilityResult:
    points: list[ScalabilityPoint]

    def series(self, variant_name: str) -> list[ScalabilityPoint]:
        return [p for p in self.points if p.variant == variant_name]

    def overhead(self, secure: str = "dnssec", base: str = "vanilla") -> list[float]:
        b = {p.sub_count: p.setup_mean for p in self.series(base)}
        return [p.setup_mean - b[p.sub_count] for p in self.series(secure) if p.sub_count in b]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow((
            "variant", "sub_count", "established", "setup_delay_min", "setup_delay_mean", "setup_delay_max",
            "setup_delay_virtual_mean", "service_setup",
        ))
        for p in self.points:
            w.writerow((
                p.variant, p.sub_count, p.established, f"{p.setup_min:.6f}", f"{p.setup_mean:.6f}",
                f"{p.setup_max:.6f}", f"{p.setup_virtual_mean:.6f}", f"{p.service_setup:.6f}",
            ))
        return buf.getvalue()


def run_scalability(
    sub_counts: typing.Iterable[int] = range(1, 51),
    variants: typing.Iterable[str | Mode] = ("vanilla", "pre_deployed", "dnssec"),
    seed: int = 1,
    profile: str = crypto.DEFAULT_PROFILE,
    pub_count: int = 1,
) -> ScalabilityResult:
    """Mean per-subscription setup time for one publisher and growing subscriber counts."""
    if pub_count != 1:
        raise ConfigError("the scalability study uses exactly one publisher")
    counts = sorted(set(sub_counts))
    plan = scalability_plan(max(counts))
    world = None
    points = []
    for var in variants:
        mode = variant(var)
        if mode is not Mode.NONE and world is None:
            world = build_world(plan, profile)
        # discarded run: first crypto calls pay one-off initialization
        run_scenario(ScenarioConfig(plan, mode, seed=seed, profile=profile, world=world, subscriber_limit=1))
        for n in counts:
            m = run_scenario(ScenarioConfig(
                plan, mode, seed=seed, profile=profile, world=world, subscriber_limit=n,
            ))
            lo, mean, hi, _ = m.summary("subscription_setup")
            _, vmean, _, _ = m.summary("subscription_setup_virtual")
            svc = m.summary("service_setup")[2]
            points.append(ScalabilityPoint(mode.value, n, m.established, mean, lo, hi, vmean, svc))
    return ScalabilityResult(points)
