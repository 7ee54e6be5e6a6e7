"""The in-vehicle network: zone topology and a seeded service placement.

The original placement is not public; only aggregates are.  The generator
fixes per-host publisher and subscriber totals that reproduce the published
extremes and draws everything else from a seeded RNG:

* 212 publishers, 448 subscribers, 1..4 subscribers per publisher;
* per host: 0..79 local publishers, 0..131 local subscribers, at most 174
  remote subscribers for the local publishers and at most 79 distinct
  remote publishers;
* every subscription crosses hosts.
"""

from __future__ import annotations

import dataclasses
import random
import statistics

from sdauth import records, wire, zoneforge
from sdauth.simnet.engine import Topology

VEHICLE = "vehicle1.oem."

# name, switch, local publishers, local subscribers
HOSTS = (
    ("hpc_adas", "sw-core", 79, 131),
    ("hpc_infotainment", "sw-core", 30, 70),
    ("hpc_telematics", "sw-core", 0, 60),
    ("zone1", "sw-zone1", 20, 50),
    ("zone2", "sw-zone2", 12, 50),
    ("zone3", "sw-zone3", 10, 45),
    ("zone4", "sw-zone4", 9, 42),
    ("lidar1", "sw-zone1", 11, 0),
    ("lidar2", "sw-zone2", 11, 0),
    ("lidar3", "sw-zone3", 10, 0),
    ("lidar4", "sw-zone4", 10, 0),
    ("cam1", "sw-zone1", 5, 0),
    ("cam2", "sw-zone2", 5, 0),
)
RESOLVER_HOST = "hpc_telematics"
PUBLISHERS = 212
SUBSCRIBERS = 448
ADAS_REMOTE_SUBSCRIBERS = 174
MAX_REMOTE_PUBLISHERS = 79


def host_ip(index: int) -> str:
    return f"10.0.0.{index + 1}"


def ivn_topology(link_latency: float = 10e-6) -> Topology:
    """Star of one core and four zone switches with the 13 hosts."""
    topo = Topology(link_latency=link_latency)
    for i in range(1, 5):
        topo.add_switch(f"sw-zone{i}")
    for i, (name, switch, _, _) in enumerate(HOSTS):
        topo.add_host(name, host_ip(i), switch)
    return topo


def _fanouts(rng: random.Random, n: int, total: int) -> list[int]:
    """``n`` values in 1..4 summing to ``total``, containing both 1 and 4."""
    if not n <= total <= 4 * n or n < 2:
        raise ValueError(f"cannot spread {total} over {n} publishers")
    vals = [1, 4] + [rng.choice((1, 2, 2, 2, 3, 3)) for _ in range(n - 2)]
    idx = list(range(2, n))
    while sum(vals) != total:
        i = rng.choice(idx)
        if sum(vals) < total and vals[i] < 4:
            vals[i] += 1
        elif sum(vals) > total and vals[i] > 1:
            vals[i] -= 1
    rng.shuffle(vals)
    return vals


def _assign(rng: random.Random, pub_hosts: list[str], fanouts: list[int]) -> list[list[str]] | None:
    """Place every subscriber slot on a host other than its publisher's.

    The busiest subscriber host is filled first so that its subscribers
    target exactly ``MAX_REMOTE_PUBLISHERS`` distinct publishers; the other
    slots are dealt at random and repaired by swapping until no publisher
    lands on its own host or twice on the same host.
    """
    big, _, _, big_subs = max(HOSTS, key=lambda h: h[3])
    placed: list[list[str]] = [[] for _ in fanouts]
    eligible = [i for i, h in enumerate(pub_hosts) if h != big]
    chosen = rng.sample(eligible, MAX_REMOTE_PUBLISHERS)
    mult = {i: 1 for i in chosen}
    extra = big_subs - len(chosen)
    while extra:
        i = rng.choice(chosen)
        if mult[i] < fanouts[i]:
            mult[i] += 1
            extra -= 1
    for i, m in mult.items():
        placed[i] += [big] * m

    slots = [name for name, _, _, subs in HOSTS if name != big for _ in range(subs)]
    rng.shuffle(slots)
    owner = [i for i, f in enumerate(fanouts) for _ in range(f - len(placed[i]))]
    starts: dict[int, int] = {}
    for j, i in enumerate(owner):
        starts.setdefault(i, j)

    def conflict(j: int) -> bool:
        i = owner[j]
        if slots[j] == pub_hosts[i]:
            return True
        s0 = starts[i]
        n = fanouts[i] - len(placed[i])
        return any(slots[k] == slots[j] for k in range(s0, s0 + n) if k != j)

    for _ in range(200_000):
        conflicts = [j for j in range(len(slots)) if conflict(j)]
        if not conflicts:
            break
        j = rng.choice(conflicts)
        k = rng.randrange(len(slots))
        slots[j], slots[k] = slots[k], slots[j]
        if conflict(j) or conflict(k):
            slots[j], slots[k] = slots[k], slots[j]
    else:
        return None
    for i in range(len(fanouts)):
        if i in starts:
            n = fanouts[i] - len(placed[i])
            placed[i] += slots[starts[i]:starts[i] + n]
    return placed


def generate_ivn_plan(seed: int = 2024) -> zoneforge.VehicleZonePlan:
    """Seeded regeneration of the 212-publisher / 448-subscriber placement."""
    rng = random.Random(seed)
    pub_hosts = [name for name, _, pubs, _ in HOSTS for _ in range(pubs)]
    adas = sum(1 for h in pub_hosts if h == "hpc_adas")
    for _ in range(1000):
        fan = _fanouts(rng, adas, ADAS_REMOTE_SUBSCRIBERS) + _fanouts(
            rng, PUBLISHERS - adas, SUBSCRIBERS - ADAS_REMOTE_SUBSCRIBERS
        )
        placed = _assign(rng, pub_hosts, fan)
        if placed is not None:
            break
    else:  # pragma: no cover - the capacities above always admit a placement
        raise RuntimeError("no placement found")

    ips = {name: host_ip(i) for i, (name, _, _, _) in enumerate(HOSTS)}
    port_seq: dict[str, int] = {}
    pubs, subs = [], []
    client_id = 17
    for k, host in enumerate(pub_hosts):
        if k == 0:
            key = records.ServiceKey(42, 1, 2, 3, VEHICLE)
            port = 5000
        else:
            key = records.ServiceKey(0x100 + k, 1 + k % 3, 1 + k % 4, k % 7, VEHICLE)
            port_seq[host] = port_seq.get(host, 30500) + 1
            port = port_seq[host]
        mc = (f"239.1.{k // 256}.{k % 256}", 31000 + k)
        pubs.append(zoneforge.PublisherSpec(key, ips[host], port, wire.PROTO_UDP, host, mc))
        scope = records.PublisherScope.of(key)
        for sub_host in placed[k]:
            subs.append(zoneforge.SubscriberSpec(records.ClientKey(client_id, VEHICLE, scope), scope, sub_host))
            client_id += 1
    plan = zoneforge.VehicleZonePlan(VEHICLE, pubs, subs)
    plan.validate()
    return plan


@dataclasses.dataclass(frozen=True)
class PlanStats:
    publishers: int
    subscribers: int
    fanout_min: int
    fanout_mean: float
    fanout_max: int
    local_publishers: dict[str, int]
    local_subscribers: dict[str, int]
    remote_subscribers: dict[str, int]
    remote_publishers: dict[str, int]
    cross_host: bool

    @staticmethod
    def span(d: dict[str, int]) -> tuple[int, float, int]:
        v = list(d.values())
        return min(v), statistics.fmean(v), max(v)


def plan_stats(plan: zoneforge.VehicleZonePlan, hosts: list[str] | None = None) -> PlanStats:
    hosts = hosts or [h for h, _, _, _ in HOSTS]
    by_scope = {records.PublisherScope.of(p.key): p for p in plan.publishers}
    fan = {records.PublisherScope.of(p.key): 0 for p in plan.publishers}
    local_pub = {h: 0 for h in hosts}
    local_sub = {h: 0 for h in hosts}
    remote_sub = {h: 0 for h in hosts}
    remote_pub: dict[str, set] = {h: set() for h in hosts}
    cross = True
    for p in plan.publishers:
        local_pub[p.host] += 1
    for s in plan.subscribers:
        fan[s.target] += 1
        pub = by_scope[s.target]
        local_sub[s.host] += 1
        remote_sub[pub.host] += 1
        remote_pub[s.host].add(s.target)
        cross &= pub.host != s.host
    values = list(fan.values())
    return PlanStats(
        len(plan.publishers), len(plan.subscribers), min(values), statistics.fmean(values), max(values),
        local_pub, local_sub, remote_sub, {h: len(v) for h, v in remote_pub.items()}, cross,
    )
