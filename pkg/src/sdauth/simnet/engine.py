"""Discrete-event loop, star topology and datagram delivery."""

from __future__ import annotations

import collections
import dataclasses
import heapq
import itertools
import typing


class ConfigError(ValueError):
    pass


class EventLoop:
    """Virtual clock with a timestamp-ordered queue; ties run in scheduling order."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._queue: list[tuple[float, int, typing.Callable, tuple]] = []
        self._seq = itertools.count()
        self.executed = 0

    def schedule(self, at: float, fn: typing.Callable, *args) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} before now {self.now}")
        heapq.heappush(self._queue, (at, next(self._seq), fn, args))

    def pending(self) -> int:
        return len(self._queue)

    def run(self, until: float | None = None, stop: typing.Callable[[], bool] | None = None) -> None:
        while self._queue:
            at, _, fn, args = self._queue[0]
            if until is not None and at > until:
                break
            heapq.heappop(self._queue)
            assert at >= self.now, "virtual clock went backwards"
            self.now = at
            self.executed += 1
            fn(*args)
            if stop is not None and stop():
                break
        if until is not None and (not self._queue or self._queue[0][0] > until) and self.now < until:
            self.now = until


@dataclasses.dataclass(frozen=True)
class Host:
    name: str
    ip: str
    switch: str


@dataclasses.dataclass
class Topology:
    """Hosts hang off switches; switches form a star around ``core``."""

    core: str = "sw-core"
    switches: set[str] = dataclasses.field(default_factory=set)
    hosts: dict[str, Host] = dataclasses.field(default_factory=dict)
    link_latency: float = 10e-6

    def __post_init__(self):
        self.switches.add(self.core)

    def add_switch(self, name: str) -> None:
        self.switches.add(name)

    def add_host(self, name: str, ip: str, switch: str | None = None) -> Host:
        switch = switch or self.core
        if switch not in self.switches:
            raise ConfigError(f"unknown switch {switch}")
        if name in self.hosts:
            raise ConfigError(f"duplicate host {name}")
        host = Host(name, ip, switch)
        self.hosts[name] = host
        self._by_ip = None
        return host

    @property
    def by_ip(self) -> dict[str, Host]:
        if getattr(self, "_by_ip", None) is None:
            self._by_ip = {h.ip: h for h in self.hosts.values()}
        return self._by_ip

    def links(self) -> list[tuple[str, str]]:
        out = [(h.name, h.switch) for h in self.hosts.values()]
        out += [(s, self.core) for s in sorted(self.switches) if s != self.core]
        return out

    def hops(self, a: str, b: str) -> int:
        if a == b:
            return 0
        sa, sb = self.hosts[a].switch, self.hosts[b].switch
        if sa == sb:
            return 2
        return 2 + (sa != self.core) + (sb != self.core)

    def latency(self, a: str, b: str) -> float:
        return self.hops(a, b) * self.link_latency

    def latency_from_core(self, b: str) -> float:
        return (1 + (self.hosts[b].switch != self.core)) * self.link_latency

    def connected(self) -> bool:
        adj = collections.defaultdict(set)
        for x, y in self.links():
            adj[x].add(y)
            adj[y].add(x)
        nodes = set(self.hosts) | self.switches
        seen, todo = {self.core}, [self.core]
        while todo:
            for n in adj[todo.pop()]:
                if n not in seen:
                    seen.add(n)
                    todo.append(n)
        return seen == nodes


@dataclasses.dataclass
class Counters:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    blocked: int = 0
    injected: int = 0
    malformed: int = 0
    dns_queries: int = 0

    def conserved(self) -> bool:
        return self.sent == self.delivered + self.dropped + self.blocked
