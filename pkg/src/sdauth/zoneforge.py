"""Credential lifecycle for one vehicle: supplier issuance, OEM publication, audit.

Suppliers generate an endpoint key, a self-signed certificate named after
the TLSA owner it will be published under, and sign (certificate, binary
digest) with their supplier key.  The OEM checks that signature and then
publishes TLSA (plus SVCB for publishers) into the vehicle zone, signing
only with the zone keys.  Key-usage tags keep the two signing paths apart.

Plan file format, one declaration per line, ``#`` starts a comment::

    vehicle vehicle1.oem.
    publisher <svc> <inst> <major> <minor> <ipv4> <port> <udp|tcp> [host=<h>] [multicast=<ip>:<port>]
    subscriber <client> <svc> <inst> <major> [scope=service|vehicle|domain:<label>] [host=<h>]

A subscriber line names the service it subscribes to; ``scope`` selects
which client name form its TLSA record gets (service-specific by default).
"""

from __future__ import annotations

import base64
import dataclasses
import datetime
import hashlib
import json
import typing

from sdauth import crypto, dnssec, records, wire


class ForgeError(Exception):
    pass


class BadBundleSignature(ForgeError):
    pass


class MissingBundle(ForgeError):
    pass


class DuplicateName(ForgeError):
    pass


class PlanError(ForgeError):
    pass


# -- plan -------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class PublisherSpec:
    key: records.ServiceKey
    address: str
    port: int
    protocol: int = wire.PROTO_UDP
    host: str | None = None
    multicast: tuple[str, int] | None = None

    @property
    def svcb_name(self) -> str:
        return records.publisher_service_name(self.key)

    @property
    def tlsa_name(self) -> str:
        return records.publisher_tlsa_name(self.key, self.port)

    def svcb(self) -> records.SvcbParams:
        return records.svcb_for(self.key, self.address, self.port, self.protocol)


@dataclasses.dataclass(frozen=True)
class SubscriberSpec:
    client: records.ClientKey
    target: records.PublisherScope
    host: str | None = None

    @property
    def tlsa_name(self) -> str:
        return records.client_tlsa_name(self.client)


@dataclasses.dataclass
class VehicleZonePlan:
    vehicle: str
    publishers: list[PublisherSpec] = dataclasses.field(default_factory=list)
    subscribers: list[SubscriberSpec] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        self.vehicle = records.normalize_name(self.vehicle)

    def record_names(self) -> list[str]:
        names = []
        for p in self.publishers:
            names += [p.svcb_name, p.tlsa_name]
        names += [s.tlsa_name for s in self.subscribers]
        return names

    def identities(self) -> list[str]:
        """Names that need a certificate: publisher and subscriber TLSA owners."""
        return [p.tlsa_name for p in self.publishers] + [s.tlsa_name for s in self.subscribers]

    def publisher_for(self, scope: records.PublisherScope) -> PublisherSpec | None:
        for p in self.publishers:
            if records.PublisherScope.of(p.key) == scope:
                return p
        return None

    def validate(self) -> None:
        seen: set[str] = set()
        for name in self.record_names():
            if name in seen:
                raise DuplicateName(f"{name} appears twice in the plan")
            seen.add(name)
        for p in self.publishers:
            if p.key.vehicle != self.vehicle:
                raise PlanError(f"publisher {p.svcb_name} outside vehicle {self.vehicle}")
        for s in self.subscribers:
            if s.client.vehicle != self.vehicle:
                raise PlanError(f"subscriber {s.tlsa_name} outside vehicle {self.vehicle}")
            if self.publisher_for(s.target) is None:
                raise PlanError(f"subscriber {s.tlsa_name} targets unknown service {s.target}")
            if s.client.scope is not None and s.client.scope != s.target:
                raise PlanError(f"subscriber {s.tlsa_name} is scoped to a different service")

    def to_text(self) -> str:
        lines = [f"vehicle {self.vehicle}"]
        for p in self.publishers:
            proto = "udp" if p.protocol == wire.PROTO_UDP else "tcp"
            k = p.key
            line = f"publisher {k.service_id} {k.instance_id} {k.major} {k.minor} {p.address} {p.port} {proto}"
            if p.host:
                line += f" host={p.host}"
            if p.multicast:
                line += f" multicast={p.multicast[0]}:{p.multicast[1]}"
            lines.append(line)
        for s in self.subscribers:
            t = s.target
            kind = s.client.scope_kind
            scope = "service" if kind is records.ScopeKind.SERVICE else (
                f"domain:{s.client.domain}" if kind is records.ScopeKind.DOMAIN else "vehicle"
            )
            line = f"subscriber {s.client.client_id} {t.service_id} {t.instance_id} {t.major} scope={scope}"
            if s.host:
                line += f" host={s.host}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> VehicleZonePlan:
        vehicle = None
        pubs, subs = [], []
        pending_subs = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = line.split()
            opts = dict(w.split("=", 1) for w in words if "=" in w)
            pos = [w for w in words if "=" not in w]
            try:
                if pos[0] == "vehicle" and len(pos) == 2:
                    vehicle = records.normalize_name(pos[1])
                elif pos[0] == "publisher" and len(pos) == 8:
                    if vehicle is None:
                        raise PlanError("'vehicle' must come first")
                    svc, inst, major, minor = (int(x) for x in pos[1:5])
                    proto = {"udp": wire.PROTO_UDP, "tcp": wire.PROTO_TCP}[pos[7].lower()]
                    mc = None
                    if "multicast" in opts:
                        addr, port = opts["multicast"].rsplit(":", 1)
                        mc = (addr, int(port))
                    pubs.append(PublisherSpec(
                        records.ServiceKey(svc, inst, major, minor, vehicle), pos[5], int(pos[6]), proto,
                        opts.get("host"), mc,
                    ))
                elif pos[0] == "subscriber" and len(pos) == 5:
                    if vehicle is None:
                        raise PlanError("'vehicle' must come first")
                    pending_subs.append((lineno, [int(x) for x in pos[1:5]], opts))
                else:
                    raise PlanError(f"unrecognized declaration {line!r}")
            except (ValueError, KeyError, records.BadLabel) as exc:
                raise PlanError(f"line {lineno}: {exc}") from None
            except PlanError as exc:
                raise PlanError(f"line {lineno}: {exc}") from None
        if vehicle is None:
            raise PlanError("plan has no 'vehicle' line")
        for lineno, (cid, svc, inst, major), opts in pending_subs:
            target = records.PublisherScope(svc, inst, major)
            scope = opts.get("scope", "service")
            try:
                if scope == "service":
                    client = records.ClientKey(cid, vehicle, scope=target)
                elif scope == "vehicle":
                    client = records.ClientKey(cid, vehicle)
                elif scope.startswith("domain:"):
                    client = records.ClientKey(cid, vehicle, domain=scope.split(":", 1)[1])
                else:
                    raise PlanError(f"unknown scope {scope!r}")
            except (ValueError, records.BadLabel) as exc:
                raise PlanError(f"line {lineno}: {exc}") from None
            subs.append(SubscriberSpec(client, target, opts.get("host")))
        return cls(vehicle, pubs, subs)


# -- supplier bundles -------------------------------------------------------


def _bundle_payload(cert_der: bytes, binary_digest: bytes) -> bytes:
    return b"sdauth/bundle/v1\x00" + len(cert_der).to_bytes(4, "big") + cert_der + binary_digest


@dataclasses.dataclass(frozen=True)
class SupplierBundle:
    identity: str
    keypair: crypto.KeyPair
    certificate: crypto.Certificate
    binary_digest: bytes
    supplier_public_der: bytes
    supplier_signature: bytes

    def verify(self) -> bool:
        from cryptography.hazmat.primitives import serialization

        try:
            supplier = serialization.load_der_public_key(self.supplier_public_der)
            cert_ok = (
                self.certificate.subject == self.identity
                and self.certificate.self_signature_ok()
                and self.certificate.public_key.public_bytes(
                    serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
                ) == self.keypair.public_der()
            )
        except (ValueError, crypto.MalformedCertificate):
            return False
        payload = _bundle_payload(self.certificate.der, self.binary_digest)
        return cert_ok and crypto.verify_signature(supplier, payload, self.supplier_signature)

    def to_json(self, include_private: bool = True) -> str:
        doc = {
            "identity": self.identity,
            "certificate": self.certificate.der.hex(),
            "binary_digest": self.binary_digest.hex(),
            "supplier_public_key": base64.b64encode(self.supplier_public_der).decode(),
            "supplier_signature": base64.b64encode(self.supplier_signature).decode(),
        }
        if include_private:
            doc["private_key"] = self.keypair.private_pem().decode()
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SupplierBundle:
        try:
            doc = json.loads(text)
            cert = crypto.Certificate(bytes.fromhex(doc["certificate"]))
            if "private_key" in doc:
                kp = crypto.KeyPair.from_pem(doc["private_key"].encode(), crypto.KeyUsage.SERVICE)
            else:
                # publication needs only the public half
                kp = crypto.KeyPair(_PublicOnly(cert.public_key), crypto.profile_of(cert.public_key), crypto.KeyUsage.SERVICE)
            return cls(
                records.normalize_name(doc["identity"]), kp, cert, bytes.fromhex(doc["binary_digest"]),
                base64.b64decode(doc["supplier_public_key"]), base64.b64decode(doc["supplier_signature"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ForgeError(f"unreadable bundle: {exc}") from None


class _PublicOnly:
    def __init__(self, public_key):
        self._pub = public_key

    def public_key(self):
        return self._pub


def new_supplier_key(profile: str = crypto.DEFAULT_PROFILE) -> crypto.KeyPair:
    return crypto.generate_keypair(crypto.KeyUsage.SUPPLIER, profile)


def _utc(t: float | datetime.datetime) -> datetime.datetime:
    if isinstance(t, datetime.datetime):
        return t if t.tzinfo else t.replace(tzinfo=datetime.timezone.utc)
    return datetime.datetime.fromtimestamp(t, datetime.timezone.utc)


def supplier_issue(
    identity: str,
    not_before: float | datetime.datetime,
    not_after: float | datetime.datetime,
    profile: str = crypto.DEFAULT_PROFILE,
    supplier: crypto.KeyPair | None = None,
    binary: bytes = b"",
    keypair: crypto.KeyPair | None = None,
) -> SupplierBundle:
    """Endpoint key, certificate and supplier signature for one DNS identity."""
    name = records.normalize_name(identity)
    records.name_to_wire(name)
    nb, na = _utc(not_before), _utc(not_after)
    if na <= nb:
        raise ValueError("validity window must have positive length")
    supplier = supplier or new_supplier_key(profile)
    if supplier.usage is not crypto.KeyUsage.SUPPLIER:
        raise crypto.KeyUsageError("bundles must be signed with a supplier key")
    keypair = keypair or crypto.generate_keypair(crypto.KeyUsage.SERVICE, profile)
    cert = crypto.make_certificate(keypair, name, nb, na)
    digest = hashlib.sha256(binary).digest()
    sig = supplier.sign(_bundle_payload(cert.der, digest), crypto.KeyUsage.SUPPLIER)
    return SupplierBundle(name, keypair, cert, digest, supplier.public_der(), sig)


# -- OEM side ---------------------------------------------------------------


def oem_publish(
    zone: dnssec.Zone,
    bundle: SupplierBundle,
    now: float,
    svcb: records.SvcbParams | None = None,
    trusted_suppliers: typing.Collection[bytes] | None = None,
    ttl: int | None = None,
) -> dnssec.Zone:
    """Publish a bundle's TLSA (and ``svcb`` for publishers) and re-sign those rrsets."""
    if not bundle.verify():
        raise BadBundleSignature(f"bundle for {bundle.identity} does not verify")
    if trusted_suppliers is not None and bundle.supplier_public_der not in trusted_suppliers:
        raise BadBundleSignature(f"bundle for {bundle.identity} comes from an unknown supplier")
    name = bundle.identity
    if not records.is_subdomain(name, zone.apex):
        raise dnssec.UnknownName(f"{name} is outside zone {zone.apex}")
    ttl = zone.default_ttl if ttl is None else ttl
    touched = []
    tlsa = dnssec.ResourceRecord(name, dnssec.RRType.TLSA, ttl, crypto.build_tlsa(bundle.certificate))
    if zone.add(tlsa):
        touched.append((name, dnssec.RRType.TLSA))
    if svcb is not None:
        key, _ = records.parse_publisher_tlsa_name(name)
        owner = records.publisher_service_name(key)
        if zone.add(dnssec.ResourceRecord(owner, dnssec.RRType.SVCB, ttl, svcb)):
            touched.append((owner, dnssec.RRType.SVCB))
    if touched:
        dnssec.sign_zone(zone, now, only=touched)
    return zone


def issue_plan_bundles(
    plan: VehicleZonePlan,
    not_before: float,
    not_after: float,
    profile: str = crypto.DEFAULT_PROFILE,
    supplier: crypto.KeyPair | None = None,
) -> dict[str, SupplierBundle]:
    supplier = supplier or new_supplier_key(profile)
    return {
        name: supplier_issue(name, not_before, not_after, profile, supplier)
        for name in plan.identities()
    }


def build_vehicle_zone(
    plan: VehicleZonePlan,
    bundles: typing.Mapping[str, SupplierBundle],
    oem: dnssec.OemAuthority,
    now: float,
    ttl: int = dnssec.DEFAULT_TTL,
    sig_validity: int = dnssec.DEFAULT_SIG_VALIDITY,
) -> dnssec.Zone:
    """Signed zone with the ``service`` and ``client`` subtrees for ``plan``."""
    plan.validate()
    zone = oem.delegate(plan.vehicle, now, default_ttl=ttl, sig_validity=sig_validity)
    for p in plan.publishers:
        bundle = bundles.get(p.tlsa_name)
        if bundle is None:
            raise MissingBundle(f"no bundle for publisher {p.tlsa_name}")
        _add_verified(zone, bundle, ttl)
        zone.add(dnssec.ResourceRecord(p.svcb_name, dnssec.RRType.SVCB, ttl, p.svcb()))
    for s in plan.subscribers:
        bundle = bundles.get(s.tlsa_name)
        if bundle is None:
            raise MissingBundle(f"no bundle for subscriber {s.tlsa_name}")
        _add_verified(zone, bundle, ttl)
    return dnssec.sign_zone(zone, now)


def _add_verified(zone: dnssec.Zone, bundle: SupplierBundle, ttl: int) -> None:
    if not bundle.verify():
        raise BadBundleSignature(f"bundle for {bundle.identity} does not verify")
    zone.add(dnssec.ResourceRecord(bundle.identity, dnssec.RRType.TLSA, ttl, crypto.build_tlsa(bundle.certificate)))


@dataclasses.dataclass(frozen=True)
class AuditFinding:
    name: str
    kind: str  # "certificate" or "rrsig"
    expires: datetime.datetime
    days_left: float

    @property
    def expired(self) -> bool:
        return self.days_left < 0

    def __str__(self) -> str:
        state = "EXPIRED" if self.expired else f"{self.days_left:.1f} days left"
        return f"{self.name} {self.kind} expires {self.expires:%Y-%m-%dT%H:%M:%SZ} ({state})"


def audit(zone: dnssec.Zone, now: float, horizon_days: float) -> list[AuditFinding]:
    """Certificates and zone signatures that expire within ``horizon_days``."""
    limit = now + horizon_days * 86400
    found = []
    for (name, rtype), rrset in zone.rrsets.items():
        if rtype == dnssec.RRType.TLSA:
            for rec in rrset:
                cert = crypto.certificate_from_tlsa(rec.rdata)
                if cert is None:
                    continue
                try:
                    end = cert.not_after
                except crypto.MalformedCertificate:
                    continue
                if end.timestamp() <= limit:
                    found.append(AuditFinding(name, "certificate", end, (end.timestamp() - now) / 86400))
    for (name, rtype), sig in zone.signatures.items():
        end = sig.rdata.expiration
        if end <= limit:
            found.append(AuditFinding(
                f"{name} {rtype.name}", "rrsig", _utc(end), (end - now) / 86400
            ))
    return sorted(found, key=lambda f: (f.expires, f.name))
