"""DNS naming scheme for publishers and clients, and SVCB/TLSA record contents."""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import re
import struct
import typing

from sdauth import wire

SERVICE_LABEL = "service"
CLIENT_LABEL = "client"
PUBLISHER_PREFIX = "_someip"
CLIENT_PREFIX = "_someip-client"

# SVCB parameter keys: RFC 9460 registered keys plus private-use allocations
SVCB_KEY_PORT = 3
SVCB_KEY_IPV4HINT = 4
SVCB_KEY_INSTANCE = 65280
SVCB_KEY_MAJOR = 65281
SVCB_KEY_MINOR = 65282
SVCB_KEY_IP_PROTO = 65283

_SVCB_KEY_NAMES = {
    SVCB_KEY_PORT: "port",
    SVCB_KEY_IPV4HINT: "ipv4hint",
    SVCB_KEY_INSTANCE: "instance",
    SVCB_KEY_MAJOR: "major",
    SVCB_KEY_MINOR: "minor",
    SVCB_KEY_IP_PROTO: "ip_proto",
}
_SVCB_KEY_NUMBERS = {v: k for k, v in _SVCB_KEY_NAMES.items()}

_LABEL_RE = re.compile(r"^[a-z0-9_-]{1,63}$")
_NUMBER_RE = re.compile(r"^(0|[1-9][0-9]*)$")


class BadLabel(ValueError):
    pass


class BadName(ValueError):
    """A name does not follow the publisher/client naming scheme."""


class BadRdata(ValueError):
    pass


def normalize_name(name: str) -> str:
    name = name.strip().lower()
    if not name.endswith("."):
        name += "."
    if name == ".":
        return name
    for label in name[:-1].split("."):
        if not _LABEL_RE.match(label):
            raise BadLabel(f"illegal label {label!r} in {name!r}")
    if len(name_to_wire(name)) > 255:
        raise BadLabel(f"name too long: {name!r}")
    return name


def name_labels(name: str) -> list[str]:
    name = name.rstrip(".")
    return name.split(".") if name else []


def name_to_wire(name: str) -> bytes:
    out = bytearray()
    for label in name_labels(name.lower()):
        raw = label.encode("ascii")
        out.append(len(raw))
        out += raw
    out.append(0)
    return bytes(out)


def name_from_wire(data: bytes, pos: int = 0) -> tuple[str, int]:
    labels = []
    while True:
        if pos >= len(data):
            raise BadRdata("truncated name")
        n = data[pos]
        pos += 1
        if n == 0:
            break
        if n > 63 or pos + n > len(data):
            raise BadRdata("bad label length")
        labels.append(data[pos:pos + n].decode("ascii"))
        pos += n
    return (".".join(labels) + ".") if labels else ".", pos


def is_subdomain(name: str, parent: str) -> bool:
    name, parent = name.lower(), parent.lower()
    return parent == "." or name == parent or name.endswith("." + parent)


def _check_u(value: int, bits: int, what: str) -> None:
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise ValueError(f"{what} must be an unsigned {bits}-bit integer, got {value!r}")


def _check_domain(domain: str | None) -> None:
    if domain is None:
        return
    if not _LABEL_RE.match(domain) or _NUMBER_RE.match(domain) or not domain[0].isalpha():
        raise BadLabel(f"domain label must start with a letter: {domain!r}")
    if domain in (SERVICE_LABEL, CLIENT_LABEL):
        raise BadLabel(f"domain label {domain!r} is reserved")


def _vehicle(vehicle: str) -> str:
    v = normalize_name(vehicle)
    if v == ".":
        raise BadLabel("vehicle name must not be the root")
    return v


@dataclasses.dataclass(frozen=True)
class ServiceKey:
    service_id: int
    instance_id: int
    major: int
    minor: int
    vehicle: str = "vehicle1.oem."
    domain: str | None = None

    def __post_init__(self):
        _check_u(self.service_id, 16, "service_id")
        _check_u(self.instance_id, 16, "instance_id")
        _check_u(self.major, 8, "major")
        _check_u(self.minor, 32, "minor")
        _check_domain(self.domain)
        object.__setattr__(self, "vehicle", _vehicle(self.vehicle))


@dataclasses.dataclass(frozen=True)
class PublisherScope:
    """The publisher fields a service-specific client name is bound to."""

    service_id: int
    instance_id: int
    major: int

    def __post_init__(self):
        _check_u(self.service_id, 16, "service_id")
        _check_u(self.instance_id, 16, "instance_id")
        _check_u(self.major, 8, "major")

    @classmethod
    def of(cls, key: ServiceKey) -> PublisherScope:
        return cls(key.service_id, key.instance_id, key.major)


class ScopeKind(enum.Enum):
    SERVICE = "service"
    DOMAIN = "domain"
    VEHICLE = "vehicle"


@dataclasses.dataclass(frozen=True)
class ClientKey:
    client_id: int
    vehicle: str = "vehicle1.oem."
    scope: PublisherScope | None = None
    domain: str | None = None

    def __post_init__(self):
        _check_u(self.client_id, 16, "client_id")
        _check_domain(self.domain)
        object.__setattr__(self, "vehicle", _vehicle(self.vehicle))

    @property
    def scope_kind(self) -> ScopeKind:
        if self.scope is not None:
            return ScopeKind.SERVICE
        if self.domain is not None:
            return ScopeKind.DOMAIN
        return ScopeKind.VEHICLE


def publisher_service_name(key: ServiceKey) -> str:
    """``_someip.<minor>.<major>.<instance>.<service>.[<domain>.]service.<vehicle>``"""
    labels = [PUBLISHER_PREFIX, str(key.minor), str(key.major), str(key.instance_id), str(key.service_id)]
    if key.domain:
        labels.append(key.domain)
    labels.append(SERVICE_LABEL)
    return normalize_name(".".join(labels) + "." + key.vehicle)


def publisher_tlsa_name(key: ServiceKey, port: int) -> str:
    if not isinstance(port, int) or not 0 < port <= 0xFFFF:
        raise ValueError(f"port must be in 1..65535, got {port!r}")
    return f"_{port}." + publisher_service_name(key)


def client_tlsa_name(key: ClientKey) -> str:
    """``_someip-client.[<major>.<instance>.<service>.]<client>.[<domain>.]client.<vehicle>``"""
    labels = [CLIENT_PREFIX]
    if key.scope is not None:
        labels += [str(key.scope.major), str(key.scope.instance_id), str(key.scope.service_id)]
    labels.append(str(key.client_id))
    if key.domain:
        labels.append(key.domain)
    labels.append(CLIENT_LABEL)
    return normalize_name(".".join(labels) + "." + key.vehicle)


def _num(label: str, name: str) -> int:
    if not _NUMBER_RE.match(label):
        raise BadName(f"expected decimal label, got {label!r} in {name!r}")
    return int(label)


def _split_tail(labels: list[str], marker: str, name: str) -> tuple[list[str], str | None, str]:
    """Split ``numbers... [domain] marker vehicle...`` into its parts."""
    nums = []
    i = 0
    while i < len(labels) and _NUMBER_RE.match(labels[i]):
        nums.append(labels[i])
        i += 1
    domain = None
    if i < len(labels) and labels[i] != marker:
        domain = labels[i]
        i += 1
    if i >= len(labels) or labels[i] != marker:
        raise BadName(f"missing {marker!r} label in {name!r}")
    vehicle = labels[i + 1:]
    if not vehicle:
        raise BadName(f"missing vehicle labels in {name!r}")
    return nums, domain, ".".join(vehicle) + "."


def parse_publisher_service_name(name: str) -> ServiceKey:
    name = normalize_name(name)
    labels = name_labels(name)
    if not labels or labels[0] != PUBLISHER_PREFIX:
        raise BadName(f"not a publisher name: {name!r}")
    nums, domain, vehicle = _split_tail(labels[1:], SERVICE_LABEL, name)
    if len(nums) != 4:
        raise BadName(f"publisher name needs 4 numeric labels: {name!r}")
    minor, major, inst, svc = (_num(x, name) for x in nums)
    try:
        return ServiceKey(svc, inst, major, minor, vehicle, domain)
    except ValueError as exc:
        raise BadName(str(exc)) from None


def parse_publisher_tlsa_name(name: str) -> tuple[ServiceKey, int]:
    name = normalize_name(name)
    first, _, rest = name.partition(".")
    if not first.startswith("_"):
        raise BadName(f"missing port label in {name!r}")
    port = _num(first[1:], name)
    if not 0 < port <= 0xFFFF:
        raise BadName(f"port out of range in {name!r}")
    return parse_publisher_service_name(rest), port


def parse_client_tlsa_name(name: str) -> ClientKey:
    name = normalize_name(name)
    labels = name_labels(name)
    if not labels or labels[0] != CLIENT_PREFIX:
        raise BadName(f"not a client name: {name!r}")
    nums, domain, vehicle = _split_tail(labels[1:], CLIENT_LABEL, name)
    values = [_num(x, name) for x in nums]
    try:
        if len(values) == 4:
            major, inst, svc, client = values
            return ClientKey(client, vehicle, PublisherScope(svc, inst, major), domain)
        if len(values) == 1:
            return ClientKey(values[0], vehicle, None, domain)
    except ValueError as exc:
        raise BadName(str(exc)) from None
    raise BadName(f"client name needs 1 or 4 numeric labels: {name!r}")


# -- record contents --------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SvcbParams:
    ipv4hint: str
    port: int
    instance: int
    major: int
    minor: int
    ip_proto: int = wire.PROTO_UDP
    priority: int = 1
    target: str = "."

    def __post_init__(self):
        _check_u(self.priority, 16, "priority")
        _check_u(self.port, 16, "port")
        _check_u(self.instance, 16, "instance")
        _check_u(self.major, 8, "major")
        _check_u(self.minor, 32, "minor")
        if self.ip_proto not in (wire.PROTO_TCP, wire.PROTO_UDP):
            raise ValueError(f"ip_proto must be 6 or 17, got {self.ip_proto}")
        ipaddress.IPv4Address(self.ipv4hint)
        object.__setattr__(self, "target", normalize_name(self.target))

    def to_text(self) -> str:
        return (
            f"{self.priority} {self.target} ipv4hint={self.ipv4hint} port={self.port} "
            f"instance={self.instance} major={self.major} minor={self.minor} ip_proto={self.ip_proto}"
        )

    @classmethod
    def from_text(cls, text: str) -> SvcbParams:
        parts = text.split()
        if len(parts) < 2:
            raise BadRdata(f"SVCB needs priority and target: {text!r}")
        values: dict[str, str] = {}
        for p in parts[2:]:
            key, sep, value = p.partition("=")
            if not sep:
                raise BadRdata(f"SVCB parameter without value: {p!r}")
            if key.startswith("key") and key[3:].isdigit():
                key = _SVCB_KEY_NAMES.get(int(key[3:]), key)
            if key not in _SVCB_KEY_NUMBERS:
                raise BadRdata(f"unsupported SVCB parameter {key!r}")
            values[key] = value.strip('"')
        missing = set(_SVCB_KEY_NUMBERS) - set(values)
        if missing:
            raise BadRdata(f"SVCB record lacks {sorted(missing)}")
        try:
            return cls(
                ipv4hint=values["ipv4hint"],
                port=int(values["port"]),
                instance=int(values["instance"]),
                major=int(values["major"]),
                minor=int(values["minor"]),
                ip_proto=int(values["ip_proto"]),
                priority=int(parts[0]),
                target=parts[1],
            )
        except ValueError as exc:
            raise BadRdata(str(exc)) from None

    def to_wire(self) -> bytes:
        params = {
            SVCB_KEY_PORT: struct.pack("!H", self.port),
            SVCB_KEY_IPV4HINT: ipaddress.IPv4Address(self.ipv4hint).packed,
            SVCB_KEY_INSTANCE: struct.pack("!H", self.instance),
            SVCB_KEY_MAJOR: struct.pack("!B", self.major),
            SVCB_KEY_MINOR: struct.pack("!I", self.minor),
            SVCB_KEY_IP_PROTO: struct.pack("!B", self.ip_proto),
        }
        out = struct.pack("!H", self.priority) + name_to_wire(self.target)
        for key in sorted(params):
            out += struct.pack("!HH", key, len(params[key])) + params[key]
        return out

    @classmethod
    def from_wire(cls, data: bytes) -> SvcbParams:
        try:
            (priority,) = struct.unpack_from("!H", data)
            target, pos = name_from_wire(data, 2)
            params = {}
            while pos < len(data):
                key, n = struct.unpack_from("!HH", data, pos)
                params[key] = data[pos + 4:pos + 4 + n]
                if len(params[key]) != n:
                    raise BadRdata("truncated SVCB parameter")
                pos += 4 + n
            return cls(
                ipv4hint=str(ipaddress.IPv4Address(params[SVCB_KEY_IPV4HINT])),
                port=struct.unpack("!H", params[SVCB_KEY_PORT])[0],
                instance=struct.unpack("!H", params[SVCB_KEY_INSTANCE])[0],
                major=params[SVCB_KEY_MAJOR][0],
                minor=struct.unpack("!I", params[SVCB_KEY_MINOR])[0],
                ip_proto=params[SVCB_KEY_IP_PROTO][0],
                priority=priority,
                target=target,
            )
        except (struct.error, KeyError, IndexError, ValueError) as exc:
            raise BadRdata(f"malformed SVCB rdata: {exc}") from None


@dataclasses.dataclass(frozen=True)
class TlsaParams:
    association_data: bytes
    usage: int = 3
    selector: int = 0
    matching: int = 0

    def to_text(self) -> str:
        return f"{self.usage} {self.selector} {self.matching} {self.association_data.hex()}"

    @classmethod
    def from_text(cls, text: str) -> TlsaParams:
        parts = text.replace("(", " ").replace(")", " ").split()
        if len(parts) < 4:
            raise BadRdata(f"TLSA needs 4 fields: {text!r}")
        try:
            return cls(bytes.fromhex("".join(parts[3:])), int(parts[0]), int(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise BadRdata(str(exc)) from None

    def to_wire(self) -> bytes:
        return bytes([self.usage, self.selector, self.matching]) + self.association_data

    @classmethod
    def from_wire(cls, data: bytes) -> TlsaParams:
        if len(data) < 3:
            raise BadRdata("truncated TLSA rdata")
        return cls(bytes(data[3:]), data[0], data[1], data[2])


def svcb_for(key: ServiceKey, address: str, port: int, ip_proto: int = wire.PROTO_UDP) -> SvcbParams:
    return SvcbParams(address, port, key.instance_id, key.major, key.minor, ip_proto)


def match_offer_against_svcb(
    offer: wire.SdEntry,
    endpoint: wire.Ipv4EndpointOption,
    records: typing.Iterable[SvcbParams],
) -> SvcbParams | None:
    """First SVCB record describing exactly the offered endpoint, or ``None``."""
    for rec in records:
        if (
            rec.ipv4hint == endpoint.address
            and rec.port == endpoint.port
            and rec.ip_proto == endpoint.protocol
            and rec.instance == offer.instance_id
            and rec.major == offer.major_version
            and rec.minor == offer.minor_version_or_eventgroup
        ):
            return rec
    return None
