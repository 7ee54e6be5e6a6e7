"""Vehicle zone store, RRSIG signing/validation and a validating caching resolver.

The chain of trust has two levels: the OEM key-signing key (the configured
trust anchor) signs the vehicle zone's DNSKEY set, and the per-vehicle
zone-signing key in that set signs every other rrset.  Signatures use the
canonical RRset form of RFC 4034 so the output interoperates with standard
zone tooling.  Times are POSIX seconds; the simulator passes virtual time.
"""

from __future__ import annotations

import base64
import calendar
import dataclasses
import enum
import functools
import logging
import struct
import time
import typing

from cryptography.hazmat.primitives.asymmetric import ec, ed25519, rsa
from cryptography.hazmat.primitives.asymmetric.utils import decode_dss_signature, encode_dss_signature

from sdauth import crypto, records

log = logging.getLogger(__name__)

CLASS_IN = 1
DEFAULT_TTL = 86400
DEFAULT_SIG_VALIDITY = 30 * 86400
NEGATIVE_TTL = 60

FLAG_ZONE = 0x0100
FLAG_SEP = 0x0001

ALG_RSASHA256 = 8
ALG_ECDSAP256SHA256 = 13
ALG_ED25519 = 15
_PROFILE_ALG = {
    crypto.PROFILE_RSA2048: ALG_RSASHA256,
    crypto.PROFILE_P256: ALG_ECDSAP256SHA256,
    crypto.PROFILE_ED25519: ALG_ED25519,
}


class RRType(enum.IntEnum):
    RRSIG = 46
    DNSKEY = 48
    TLSA = 52
    SVCB = 64


class ValidationStatus(enum.Enum):
    SECURE = "secure"
    INSECURE = "insecure"
    BOGUS = "bogus"
    INDETERMINATE = "indeterminate"


class Rcode(enum.Enum):
    NOERROR = "NOERROR"
    NXDOMAIN = "NXDOMAIN"
    NODATA = "NODATA"
    SERVFAIL = "SERVFAIL"


class DnssecError(Exception):
    pass


class MissingKey(DnssecError):
    pass


class UnknownName(DnssecError):
    pass


class ServFail(DnssecError):
    pass


class SourceUnreachable(DnssecError):
    pass


class ZoneFormatError(DnssecError):
    pass


# -- rdata ------------------------------------------------------------------


def _rsa_public_to_rfc3110(key: rsa.RSAPublicKey) -> bytes:
    nums = key.public_numbers()
    e = nums.e.to_bytes((nums.e.bit_length() + 7) // 8, "big")
    n = nums.n.to_bytes((nums.n.bit_length() + 7) // 8, "big")
    head = bytes([len(e)]) if len(e) < 256 else b"\x00" + struct.pack("!H", len(e))
    return head + e + n


@dataclasses.dataclass(frozen=True)
class DnskeyRdata:
    flags: int
    algorithm: int
    public_key: bytes
    protocol: int = 3

    @classmethod
    def from_keypair(cls, keypair: crypto.KeyPair, sep: bool = False) -> DnskeyRdata:
        pub = keypair.public_key
        if isinstance(pub, rsa.RSAPublicKey):
            raw = _rsa_public_to_rfc3110(pub)
        elif isinstance(pub, ec.EllipticCurvePublicKey):
            nums = pub.public_numbers()
            raw = nums.x.to_bytes(32, "big") + nums.y.to_bytes(32, "big")
        else:
            from cryptography.hazmat.primitives import serialization

            raw = pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        flags = FLAG_ZONE | (FLAG_SEP if sep else 0)
        return cls(flags, _PROFILE_ALG[keypair.profile], raw)

    def to_wire(self) -> bytes:
        return struct.pack("!HBB", self.flags, self.protocol, self.algorithm) + self.public_key

    def to_text(self) -> str:
        return f"{self.flags} {self.protocol} {self.algorithm} {base64.b64encode(self.public_key).decode()}"

    @classmethod
    def from_text(cls, text: str) -> DnskeyRdata:
        parts = text.split()
        try:
            return cls(int(parts[0]), int(parts[2]), base64.b64decode("".join(parts[3:])), int(parts[1]))
        except (ValueError, IndexError) as exc:
            raise ZoneFormatError(f"bad DNSKEY {text!r}: {exc}") from None

    @functools.cached_property
    def key_tag(self) -> int:
        data = self.to_wire()
        acc = 0
        for i, b in enumerate(data):
            acc += b if i & 1 else b << 8
        acc += (acc >> 16) & 0xFFFF
        return acc & 0xFFFF

    def to_public_key(self):
        try:
            if self.algorithm == ALG_RSASHA256:
                raw = self.public_key
                if raw[0]:
                    elen, off = raw[0], 1
                else:
                    elen, off = struct.unpack_from("!H", raw, 1)[0], 3
                e = int.from_bytes(raw[off:off + elen], "big")
                n = int.from_bytes(raw[off + elen:], "big")
                return rsa.RSAPublicNumbers(e, n).public_key()
            if self.algorithm == ALG_ECDSAP256SHA256:
                x = int.from_bytes(self.public_key[:32], "big")
                y = int.from_bytes(self.public_key[32:], "big")
                return ec.EllipticCurvePublicNumbers(x, y, ec.SECP256R1()).public_key()
            if self.algorithm == ALG_ED25519:
                return ed25519.Ed25519PublicKey.from_public_bytes(self.public_key)
        except (ValueError, IndexError, struct.error):
            return None
        return None


def _fmt_time(t: int) -> str:
    return time.strftime("%Y%m%d%H%M%S", time.gmtime(t))


def _parse_time(text: str) -> int:
    if len(text) == 14 and text.isdigit():
        return calendar.timegm(time.strptime(text, "%Y%m%d%H%M%S"))
    return int(text)


@dataclasses.dataclass(frozen=True)
class RrsigRdata:
    type_covered: int
    algorithm: int
    labels: int
    original_ttl: int
    expiration: int
    inception: int
    key_tag: int
    signer: str
    signature: bytes = b""

    def signed_prefix(self) -> bytes:
        return struct.pack(
            "!HBBIIIH", self.type_covered, self.algorithm, self.labels, self.original_ttl,
            self.expiration, self.inception, self.key_tag,
        ) + records.name_to_wire(self.signer)

    def to_wire(self) -> bytes:
        return self.signed_prefix() + self.signature

    def to_text(self) -> str:
        try:
            covered = RRType(self.type_covered).name
        except ValueError:
            covered = f"TYPE{self.type_covered}"
        return (
            f"{covered} {self.algorithm} {self.labels} {self.original_ttl} "
            f"{_fmt_time(self.expiration)} {_fmt_time(self.inception)} {self.key_tag} {self.signer} "
            f"{base64.b64encode(self.signature).decode()}"
        )

    @classmethod
    def from_text(cls, text: str) -> RrsigRdata:
        p = text.split()
        try:
            covered = RRType[p[0]] if p[0] in RRType.__members__ else int(p[0].removeprefix("TYPE"))
            return cls(
                int(covered), int(p[1]), int(p[2]), int(p[3]), _parse_time(p[4]), _parse_time(p[5]),
                int(p[6]), records.normalize_name(p[7]), base64.b64decode("".join(p[8:])),
            )
        except (ValueError, IndexError) as exc:
            raise ZoneFormatError(f"bad RRSIG {text!r}: {exc}") from None


Rdata = typing.Union[records.SvcbParams, records.TlsaParams, DnskeyRdata, RrsigRdata]

_RDATA_CLASSES: dict[RRType, typing.Any] = {
    RRType.SVCB: records.SvcbParams,
    RRType.TLSA: records.TlsaParams,
    RRType.DNSKEY: DnskeyRdata,
    RRType.RRSIG: RrsigRdata,
}


@dataclasses.dataclass(frozen=True)
class ResourceRecord:
    name: str
    rtype: RRType
    ttl: int
    rdata: typing.Any

    def __post_init__(self):
        object.__setattr__(self, "name", records.normalize_name(self.name))
        object.__setattr__(self, "rtype", RRType(self.rtype))

    def to_text(self) -> str:
        return f"{self.name} {self.ttl} IN {self.rtype.name} {self.rdata.to_text()}"

    @classmethod
    def from_text(cls, line: str) -> ResourceRecord:
        parts = line.split(None, 4)
        if len(parts) < 5 or parts[2].upper() != "IN":
            raise ZoneFormatError(f"expected 'name ttl IN TYPE rdata': {line!r}")
        name, ttl, _, rtype, rdata = parts
        try:
            rt = RRType[rtype.upper()]
        except KeyError:
            raise ZoneFormatError(f"unsupported record type {rtype!r}") from None
        try:
            return cls(name, rt, int(ttl), _RDATA_CLASSES[rt].from_text(rdata))
        except (ValueError, records.BadRdata) as exc:
            raise ZoneFormatError(f"bad {rtype} record {line!r}: {exc}") from None


RRset = typing.Sequence[ResourceRecord]


def _canonical_rrset(rrset: RRset, original_ttl: int) -> bytes:
    first = rrset[0]
    owner = records.name_to_wire(first.name)
    rdatas = sorted({r.rdata.to_wire() for r in rrset})
    out = bytearray()
    for rd in rdatas:
        out += owner + struct.pack("!HHIH", int(first.rtype), CLASS_IN, original_ttl, len(rd)) + rd
    return bytes(out)


def _sig_to_dns(keypair: crypto.KeyPair, sig: bytes) -> bytes:
    if keypair.profile == crypto.PROFILE_P256:
        r, s = decode_dss_signature(sig)
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")
    return sig


def _sig_from_dns(algorithm: int, sig: bytes) -> bytes:
    if algorithm == ALG_ECDSAP256SHA256:
        if len(sig) != 64:
            return b""
        return encode_dss_signature(int.from_bytes(sig[:32], "big"), int.from_bytes(sig[32:], "big"))
    return sig


def sign_rrset(
    rrset: RRset,
    keypair: crypto.KeyPair,
    signer: str,
    inception: int,
    expiration: int,
    dnskey: DnskeyRdata | None = None,
) -> ResourceRecord:
    """``dnskey`` is the published form of ``keypair`` (its flags feed the key tag)."""
    if not rrset:
        raise ValueError("cannot sign an empty rrset")
    dnskey = dnskey or DnskeyRdata.from_keypair(keypair)
    first = rrset[0]
    ttl = first.ttl
    prefix = RrsigRdata(
        int(first.rtype), dnskey.algorithm, len(records.name_labels(first.name)), ttl,
        int(expiration), int(inception), dnskey.key_tag, records.normalize_name(signer),
    )
    data = prefix.signed_prefix() + _canonical_rrset(rrset, ttl)
    sig = _sig_to_dns(keypair, keypair.sign(data, crypto.KeyUsage.ZONE))
    return ResourceRecord(first.name, RRType.RRSIG, ttl, dataclasses.replace(prefix, signature=sig))


@functools.lru_cache(maxsize=256)
def _public_key(dnskey: DnskeyRdata):
    return dnskey.to_public_key()


def _verify_with(dnskey: DnskeyRdata, rrset: RRset, sig: RrsigRdata) -> bool:
    pub = _public_key(dnskey)
    if pub is None or dnskey.algorithm != sig.algorithm:
        return False
    data = sig.signed_prefix() + _canonical_rrset(rrset, sig.original_ttl)
    return crypto.verify_signature(pub, data, _sig_from_dns(sig.algorithm, sig.signature))


def _signature_ok(rrset: RRset, rrsig: ResourceRecord, keys: typing.Iterable[DnskeyRdata], now: float) -> bool:
    sig: RrsigRdata = rrsig.rdata
    first = rrset[0]
    if any(r.name != first.name or r.rtype != first.rtype for r in rrset):
        return False
    if rrsig.name != first.name or sig.type_covered != int(first.rtype):
        return False
    if not records.is_subdomain(first.name, sig.signer):
        return False
    if sig.labels != len(records.name_labels(first.name)):
        return False
    if not sig.inception <= now <= sig.expiration:
        return False
    for key in keys:
        if key.key_tag == sig.key_tag and key.flags & FLAG_ZONE and _verify_with(key, rrset, sig):
            return True
    return False


def validate_rrset(
    rrset: RRset,
    rrsig: ResourceRecord | None,
    trust_anchor: DnskeyRdata | None,
    now: float,
    keyset: tuple[RRset, ResourceRecord | None] | None = None,
    keyset_trusted: bool = False,
) -> ValidationStatus:
    """Check ``rrset`` against the chain anchor -> DNSKEY set -> rrset.

    ``keyset`` is the zone's DNSKEY rrset with its RRSIG; it may be omitted
    when ``rrset`` is itself the DNSKEY set.  ``keyset_trusted`` skips the
    anchor check for a keyset the caller has already validated.
    """
    if trust_anchor is None:
        return ValidationStatus.INDETERMINATE
    if not rrset:
        return ValidationStatus.INDETERMINATE
    if rrsig is None:
        return ValidationStatus.INSECURE
    if rrset[0].rtype == RRType.DNSKEY:
        if not any(r.rdata == trust_anchor for r in rrset):
            return ValidationStatus.BOGUS
        ok = _signature_ok(rrset, rrsig, [trust_anchor], now)
        return ValidationStatus.SECURE if ok else ValidationStatus.BOGUS
    if keyset is None:
        return ValidationStatus.INDETERMINATE
    keys, keys_sig = keyset
    if not keyset_trusted and validate_rrset(keys, keys_sig, trust_anchor, now) is not ValidationStatus.SECURE:
        return ValidationStatus.BOGUS
    if rrsig.rdata.signer != keys[0].name:
        return ValidationStatus.BOGUS
    ok = _signature_ok(rrset, rrsig, [k.rdata for k in keys], now)
    return ValidationStatus.SECURE if ok else ValidationStatus.BOGUS


# -- zones ------------------------------------------------------------------


Key = typing.Tuple[str, RRType]


@dataclasses.dataclass
class Zone:
    apex: str
    rrsets: dict[Key, list[ResourceRecord]] = dataclasses.field(default_factory=dict)
    signatures: dict[Key, ResourceRecord] = dataclasses.field(default_factory=dict)
    zsk: crypto.KeyPair | None = None
    default_ttl: int = DEFAULT_TTL
    sig_validity: int = DEFAULT_SIG_VALIDITY
    # owner names that exist in the tree; kept when their last rrset is withdrawn
    nodes: set[str] = dataclasses.field(default_factory=set)

    def __post_init__(self):
        self.apex = records.normalize_name(self.apex)

    @property
    def keyset_key(self) -> Key:
        return (self.apex, RRType.DNSKEY)

    @property
    def ksk_signature_over_zsk(self) -> ResourceRecord | None:
        return self.signatures.get(self.keyset_key)

    def keyset(self) -> tuple[list[ResourceRecord], ResourceRecord | None]:
        return self.rrsets.get(self.keyset_key, []), self.signatures.get(self.keyset_key)

    def get(self, name: str, rtype: RRType) -> list[ResourceRecord]:
        return list(self.rrsets.get((records.normalize_name(name), RRType(rtype)), []))

    def data_keys(self) -> list[Key]:
        return [k for k in self.rrsets if k[1] != RRType.DNSKEY]

    def record_names(self) -> set[str]:
        return {name for name, _ in self.data_keys()}

    def has_name(self, name: str) -> bool:
        name = records.normalize_name(name)
        if name in self.nodes:
            return True
        return any(records.is_subdomain(n, name) for n in self.nodes)

    def add(self, record: ResourceRecord) -> bool:
        """Add a record; returns False if an identical rdata was already present."""
        if not records.is_subdomain(record.name, self.apex):
            raise UnknownName(f"{record.name} is outside zone {self.apex}")
        key = (record.name, record.rtype)
        rrset = self.rrsets.setdefault(key, [])
        if any(r.rdata == record.rdata for r in rrset):
            return False
        if rrset:
            # an rrset shares one TTL
            record = dataclasses.replace(record, ttl=rrset[0].ttl)
        rrset.append(record)
        self.nodes.add(record.name)
        self.signatures.pop(key, None)
        return True

    def replace(self, name: str, rtype: RRType, new: list[ResourceRecord]) -> None:
        key = (records.normalize_name(name), RRType(rtype))
        if new:
            self.rrsets[key] = list(new)
            self.nodes.add(key[0])
        else:
            self.rrsets.pop(key, None)
        self.signatures.pop(key, None)

    def remove(self, record: ResourceRecord) -> None:
        key = (record.name, record.rtype)
        rrset = self.rrsets.get(key)
        if not rrset or not any(r.rdata == record.rdata for r in rrset):
            raise UnknownName(f"{record.name} {record.rtype.name} record not in zone")
        remaining = [r for r in rrset if r.rdata != record.rdata]
        self.replace(record.name, record.rtype, remaining)

    def unsigned(self) -> list[Key]:
        return [k for k in self.rrsets if k not in self.signatures]


class OemAuthority:
    """Holder of the OEM key-signing key, the trust anchor for vehicle zones."""

    def __init__(self, profile: str = crypto.DEFAULT_PROFILE, ksk: crypto.KeyPair | None = None):
        self.ksk = ksk or crypto.generate_keypair(crypto.KeyUsage.ZONE, profile)
        if self.ksk.usage is not crypto.KeyUsage.ZONE:
            raise crypto.KeyUsageError("KSK must be a zone key")
        self.profile = self.ksk.profile
        self.trust_anchor = DnskeyRdata.from_keypair(self.ksk, sep=True)

    def delegate(
        self,
        apex: str,
        now: float,
        zsk: crypto.KeyPair | None = None,
        default_ttl: int = DEFAULT_TTL,
        sig_validity: int = DEFAULT_SIG_VALIDITY,
    ) -> Zone:
        """Create a vehicle zone with a fresh ZSK whose key set is signed by the KSK."""
        zsk = zsk or crypto.generate_keypair(crypto.KeyUsage.ZONE, self.profile)
        zone = Zone(apex, zsk=zsk, default_ttl=default_ttl, sig_validity=sig_validity)
        zone.replace(zone.apex, RRType.DNSKEY, [
            ResourceRecord(zone.apex, RRType.DNSKEY, default_ttl, DnskeyRdata.from_keypair(zsk)),
            ResourceRecord(zone.apex, RRType.DNSKEY, default_ttl, self.trust_anchor),
        ])
        self.sign_keyset(zone, now)
        return zone

    def sign_keyset(self, zone: Zone, now: float) -> None:
        keys, _ = zone.keyset()
        zone.signatures[zone.keyset_key] = sign_rrset(
            keys, self.ksk, zone.apex, int(now), int(now) + zone.sig_validity, self.trust_anchor
        )


def sign_zone(zone: Zone, now: float, only: typing.Iterable[Key] | None = None) -> Zone:
    """Sign every data rrset (or just ``only``) with the zone's ZSK, in place."""
    if zone.zsk is None:
        raise MissingKey(f"zone {zone.apex} has no zone-signing key")
    keys, keys_sig = zone.keyset()
    zsk_rdata = DnskeyRdata.from_keypair(zone.zsk)
    if not any(k.rdata == zsk_rdata for k in keys) or keys_sig is None:
        raise MissingKey(f"zone {zone.apex} DNSKEY set is not signed by the KSK")
    targets = zone.data_keys() if only is None else list(only)
    inception, expiration = int(now), int(now) + zone.sig_validity
    for key in targets:
        rrset = zone.rrsets.get(key)
        if rrset:
            zone.signatures[key] = sign_rrset(rrset, zone.zsk, zone.apex, inception, expiration)
    return zone


def rollover_add(zone: Zone, name: str, new_record: ResourceRecord, now: float) -> Zone:
    """Publish ``new_record`` next to any existing records at ``name`` and re-sign."""
    name = records.normalize_name(name)
    if new_record.name != name:
        raise ValueError(f"record owner {new_record.name} differs from {name}")
    if not records.is_subdomain(name, zone.apex):
        raise UnknownName(f"{name} is outside zone {zone.apex}")
    zone.add(new_record)
    return sign_zone(zone, now, only=[(name, new_record.rtype)])


def rollover_remove(zone: Zone, name: str, old_record: ResourceRecord, now: float) -> Zone:
    name = records.normalize_name(name)
    if name not in zone.nodes:
        raise UnknownName(f"{name} not in zone {zone.apex}")
    zone.remove(dataclasses.replace(old_record, name=name))
    return sign_zone(zone, now, only=[(name, old_record.rtype)])


def verify_zone(zone: Zone, trust_anchor: DnskeyRdata, now: float) -> dict[Key, ValidationStatus]:
    keyset = zone.keyset()
    out = {zone.keyset_key: validate_rrset(keyset[0], keyset[1], trust_anchor, now)}
    for key in zone.data_keys():
        out[key] = validate_rrset(zone.rrsets[key], zone.signatures.get(key), trust_anchor, now, keyset)
    return out


def zone_to_text(zone: Zone) -> str:
    lines = [f"; zone {zone.apex}"]

    def emit(key: Key) -> None:
        for r in zone.rrsets.get(key, []):
            lines.append(r.to_text())
        if key in zone.signatures:
            lines.append(zone.signatures[key].to_text())

    emit(zone.keyset_key)
    for key in sorted(zone.data_keys(), key=lambda k: (list(reversed(records.name_labels(k[0]))), k[1])):
        emit(key)
    return "\n".join(lines) + "\n"


def zone_from_text(text: str, apex: str | None = None) -> Zone:
    parsed = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        try:
            parsed.append(ResourceRecord.from_text(line))
        except ZoneFormatError as exc:
            raise ZoneFormatError(f"line {lineno}: {exc}") from None
    if apex is None:
        dnskeys = [r for r in parsed if r.rtype == RRType.DNSKEY]
        if dnskeys:
            apex = dnskeys[0].name
        elif parsed:
            apex = min((r.name for r in parsed), key=lambda n: len(records.name_labels(n)))
        else:
            raise ZoneFormatError("empty zone file and no apex given")
    zone = Zone(apex)
    for r in parsed:
        if r.rtype == RRType.RRSIG:
            continue
        key = (r.name, r.rtype)
        zone.rrsets.setdefault(key, []).append(r)
        zone.nodes.add(r.name)
    for r in parsed:
        if r.rtype == RRType.RRSIG:
            zone.signatures[(r.name, RRType(r.rdata.type_covered))] = r
    return zone


# -- zone source and resolver -----------------------------------------------


@dataclasses.dataclass(frozen=True)
class Fetched:
    rcode: Rcode
    rrset: tuple[ResourceRecord, ...] = ()
    rrsig: ResourceRecord | None = None
    apex: str | None = None


class ZoneSource:
    """Authoritative side the resolver fetches from; can be disconnected."""

    def __init__(self, *zones: Zone):
        self.zones = {z.apex: z for z in zones}
        self.reachable = True
        self.fetches = 0

    def zone_for(self, name: str) -> Zone | None:
        best = None
        for apex, zone in self.zones.items():
            if records.is_subdomain(name, apex) and (
                best is None or len(apex) > len(best.apex)
            ):
                best = zone
        return best

    def fetch(self, name: str, rtype: RRType) -> Fetched:
        if not self.reachable:
            raise SourceUnreachable("zone source is disconnected")
        self.fetches += 1
        zone = self.zone_for(name)
        if zone is None:
            return Fetched(Rcode.NXDOMAIN)
        key = (name, rtype)
        rrset = zone.rrsets.get(key)
        if rrset:
            return Fetched(Rcode.NOERROR, tuple(rrset), zone.signatures.get(key), zone.apex)
        if zone.has_name(name) or name == zone.apex:
            return Fetched(Rcode.NODATA, apex=zone.apex)
        return Fetched(Rcode.NXDOMAIN, apex=zone.apex)

    def all_keys(self) -> list[Key]:
        out = []
        for zone in self.zones.values():
            out.append(zone.keyset_key)
            out.extend(zone.data_keys())
        return out


@dataclasses.dataclass(frozen=True)
class Answer:
    name: str
    rtype: RRType
    records: tuple[typing.Any, ...]
    status: ValidationStatus
    rcode: Rcode
    from_cache: bool = False


@dataclasses.dataclass
class CacheEntry:
    rrset: tuple[ResourceRecord, ...]
    status: ValidationStatus
    inserted_at: float
    ttl: float
    rcode: Rcode
    rrsig: ResourceRecord | None = None

    def fresh(self, now: float) -> bool:
        return self.inserted_at <= now < self.inserted_at + self.ttl


@dataclasses.dataclass
class PreloadReport:
    records: int = 0
    keysets: int = 0
    rejected: list[tuple[str, RRType, ValidationStatus]] = dataclasses.field(default_factory=list)

    @property
    def total(self) -> int:
        return self.records + self.keysets


class Resolver:
    """Validating caching stub for the in-car resolver.

    Only the strict policy is implemented: expired or unverifiable data is
    never served.
    """

    def __init__(
        self,
        trust_anchor: DnskeyRdata | None,
        source: ZoneSource | None = None,
        negative_ttl: float = NEGATIVE_TTL,
        policy: str = "strict",
    ):
        if policy != "strict":
            raise ValueError(f"unsupported resolver policy {policy!r}; only 'strict' is implemented")
        self.trust_anchor = trust_anchor
        self.source = source
        self.negative_ttl = negative_ttl
        self.cache: dict[Key, CacheEntry] = {}
        self.fetch_count = 0
        self.query_count = 0

    def _fetch(self, name: str, rtype: RRType) -> Fetched:
        if self.source is None:
            raise ServFail(f"no zone source for {name} {rtype.name}")
        try:
            fetched = self.source.fetch(name, rtype)
        except SourceUnreachable as exc:
            raise ServFail(f"{name} {rtype.name}: {exc}") from None
        self.fetch_count += 1
        return fetched

    def _keyset(self, apex: str, now: float) -> tuple[tuple[ResourceRecord, ...], ResourceRecord | None] | None:
        key = (apex, RRType.DNSKEY)
        entry = self.cache.get(key)
        if entry is None or not entry.fresh(now):
            self._lookup(apex, RRType.DNSKEY, now)
            entry = self.cache.get(key)
        if entry is None or entry.status is not ValidationStatus.SECURE:
            return None
        return entry.rrset, entry.rrsig

    def _lookup(self, name: str, rtype: RRType, now: float) -> CacheEntry:
        fetched = self._fetch(name, rtype)
        if fetched.rcode in (Rcode.NXDOMAIN, Rcode.NODATA):
            entry = CacheEntry((), ValidationStatus.INSECURE, now, self.negative_ttl, fetched.rcode)
            self.cache[(name, rtype)] = entry
            return entry
        if rtype == RRType.DNSKEY:
            status = validate_rrset(fetched.rrset, fetched.rrsig, self.trust_anchor, now)
        else:
            keyset = self._keyset(fetched.apex, now)
            if keyset is None:
                status = ValidationStatus.BOGUS if self.trust_anchor else ValidationStatus.INDETERMINATE
            else:
                # the cached keyset was validated against the anchor on insertion
                status = validate_rrset(fetched.rrset, fetched.rrsig, self.trust_anchor, now, keyset, True)
        if status is not ValidationStatus.SECURE:
            log.warning("%s %s validated %s", name, rtype.name, status.value)
            return CacheEntry((), status, now, 0, Rcode.SERVFAIL)
        ttl = float(min(r.ttl for r in fetched.rrset))
        ttl = min(ttl, fetched.rrsig.rdata.expiration + 1 - now)
        entry = CacheEntry(fetched.rrset, status, now, ttl, Rcode.NOERROR, fetched.rrsig)
        self.cache[(name, rtype)] = entry
        return entry

    def resolve(self, name: str, rtype: RRType, now: float) -> Answer:
        name = records.normalize_name(name)
        rtype = RRType(rtype)
        self.query_count += 1
        entry = self.cache.get((name, rtype))
        if entry is not None and entry.fresh(now):
            return Answer(name, rtype, tuple(r.rdata for r in entry.rrset), entry.status, entry.rcode, True)
        if entry is not None:
            del self.cache[(name, rtype)]
        entry = self._lookup(name, rtype, now)
        return Answer(name, rtype, tuple(r.rdata for r in entry.rrset), entry.status, entry.rcode, False)

    def proof(self, name: str, rtype: RRType) -> tuple[tuple[ResourceRecord, ...], ResourceRecord | None] | None:
        """Cached rrset and RRSIG, for endpoints that re-validate on their own."""
        entry = self.cache.get((records.normalize_name(name), RRType(rtype)))
        if entry is None or entry.status is not ValidationStatus.SECURE:
            return None
        return entry.rrset, entry.rrsig

    def preload(self, now: float, source: ZoneSource | None = None) -> PreloadReport:
        source = source or self.source
        if source is None or not source.reachable:
            raise ServFail("zone source unreachable for preload")
        saved, self.source = self.source, source
        report = PreloadReport()
        try:
            for name, rtype in source.all_keys():
                entry = self.cache.get((name, rtype))
                if entry is None or not entry.fresh(now):
                    entry = self._lookup(name, rtype, now)
                if entry.status is ValidationStatus.SECURE:
                    if rtype == RRType.DNSKEY:
                        report.keysets += 1
                    else:
                        report.records += 1
                else:
                    report.rejected.append((name, rtype, entry.status))
        finally:
            self.source = saved
        return report

    def fresh_entries(self, now: float) -> int:
        return sum(1 for e in self.cache.values() if e.fresh(now))


def preload_zone(resolver: Resolver, source: ZoneSource, now: float) -> PreloadReport:
    return resolver.preload(now, source)
