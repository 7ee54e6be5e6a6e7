"""Keys, certificates, nonce signatures, key agreement and group-key wrapping.

All signing goes through :class:`KeyPair`, which carries a usage tag.  Zone
keys can only sign zone data and supplier/service keys can only sign
certificates, nonces and bundles; mixing them raises :class:`KeyUsageError`.
"""

from __future__ import annotations

import dataclasses
import datetime
import enum
import functools
import hashlib
import random
import secrets
import struct
import time
import typing
from collections import defaultdict

from cryptography import x509
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519, padding, rsa, x25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.x509.oid import NameOID

from sdauth import records, wire

PROFILE_RSA2048 = "rsa2048"
PROFILE_P256 = "p256"
PROFILE_ED25519 = "ed25519"
PROFILES = (PROFILE_RSA2048, PROFILE_P256, PROFILE_ED25519)
DEFAULT_PROFILE = PROFILE_RSA2048

GROUP_X25519 = 1
GROUP_P256 = 2
DEFAULT_GROUP = GROUP_X25519

SESSION_KEY_SIZE = 16  # AES-128-GCM
_NONCE_DOMAIN = b"sdauth/nonce-response/v1\x00"


class CryptoError(Exception):
    pass


class KeyUsageError(CryptoError):
    pass


class MalformedCertificate(CryptoError):
    pass


class UnsupportedTlsaMode(CryptoError):
    pass


class GroupMismatch(CryptoError):
    pass


class AuthFailure(CryptoError):
    pass


class KeyUsage(enum.Enum):
    ZONE = "zone"          # DNSSEC ZSK/KSK, held by the OEM
    SERVICE = "service"    # endpoint key generated by a supplier
    SUPPLIER = "supplier"  # supplier code-signing key


# -- timing -----------------------------------------------------------------


class OpTimings:
    """Wall-clock durations per crypto operation name."""

    def __init__(self):
        self.samples: dict[str, list[float]] = defaultdict(list)
        self.enabled = True

    def record(self, op: str, seconds: float) -> None:
        if self.enabled:
            self.samples[op].append(seconds)

    def reset(self) -> None:
        self.samples.clear()

    def snapshot(self) -> dict[str, list[float]]:
        return {k: list(v) for k, v in self.samples.items()}


TIMINGS = OpTimings()


def _timed(op: str):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                return fn(*args, **kwargs)
            finally:
                TIMINGS.record(op, time.perf_counter() - t0)
        return wrapper
    return deco


# -- keys -------------------------------------------------------------------


@dataclasses.dataclass(eq=False)
class KeyPair:
    private_key: typing.Any
    profile: str
    usage: KeyUsage

    # key material is immutable; copies of endpoint state share it
    def __deepcopy__(self, memo):
        return self

    @property
    def public_key(self):
        return self.private_key.public_key()

    def public_der(self) -> bytes:
        return self.public_key.public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    def sign(self, data: bytes, purpose: KeyUsage) -> bytes:
        if purpose is not self.usage:
            raise KeyUsageError(f"{self.usage.value} key used for {purpose.value} signing")
        return _raw_sign(self.private_key, data)

    def private_pem(self) -> bytes:
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    @classmethod
    def from_pem(cls, pem: bytes, usage: KeyUsage) -> KeyPair:
        key = serialization.load_pem_private_key(pem, password=None)
        return cls(key, profile_of(key), usage)


def profile_of(key) -> str:
    if isinstance(key, (rsa.RSAPrivateKey, rsa.RSAPublicKey)):
        return PROFILE_RSA2048
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)):
        return PROFILE_P256
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return PROFILE_ED25519
    raise CryptoError(f"unsupported key type {type(key).__name__}")


def generate_keypair(usage: KeyUsage, profile: str = DEFAULT_PROFILE) -> KeyPair:
    if profile == PROFILE_RSA2048:
        key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    elif profile == PROFILE_P256:
        key = ec.generate_private_key(ec.SECP256R1())
    elif profile == PROFILE_ED25519:
        key = ed25519.Ed25519PrivateKey.generate()
    else:
        raise ValueError(f"unknown key profile {profile!r}")
    return KeyPair(key, profile, usage)


def _raw_sign(private_key, data: bytes) -> bytes:
    if isinstance(private_key, rsa.RSAPrivateKey):
        return private_key.sign(data, padding.PKCS1v15(), hashes.SHA256())
    if isinstance(private_key, ec.EllipticCurvePrivateKey):
        return private_key.sign(data, ec.ECDSA(hashes.SHA256()))
    return private_key.sign(data)


def verify_signature(public_key, data: bytes, signature: bytes) -> bool:
    try:
        if isinstance(public_key, rsa.RSAPublicKey):
            public_key.verify(signature, data, padding.PKCS1v15(), hashes.SHA256())
        elif isinstance(public_key, ec.EllipticCurvePublicKey):
            public_key.verify(signature, data, ec.ECDSA(hashes.SHA256()))
        elif isinstance(public_key, ed25519.Ed25519PublicKey):
            public_key.verify(signature, data)
        else:
            return False
    except (InvalidSignature, ValueError):
        return False
    return True


# -- certificates -----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Certificate:
    """Self-signed X.509 certificate in DER form."""

    der: bytes

    def __deepcopy__(self, memo):
        return self

    @functools.cached_property
    def parsed(self) -> x509.Certificate:
        try:
            return x509.load_der_x509_certificate(self.der)
        except ValueError as exc:
            raise MalformedCertificate(str(exc)) from None

    @property
    def subject(self) -> str:
        attrs = self.parsed.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
        if not attrs:
            raise MalformedCertificate("certificate without common name")
        return str(attrs[0].value)

    @functools.cached_property
    def public_key(self):
        try:
            return self.parsed.public_key()
        except ValueError as exc:
            raise MalformedCertificate(str(exc)) from None

    @property
    def not_before(self) -> datetime.datetime:
        return self.parsed.not_valid_before_utc

    @property
    def not_after(self) -> datetime.datetime:
        return self.parsed.not_valid_after_utc

    def valid_at(self, t: float) -> bool:
        """Whether POSIX time ``t`` falls inside the validity window."""
        return self.not_before.timestamp() <= t <= self.not_after.timestamp()

    def self_signature_ok(self) -> bool:
        c = self.parsed
        if isinstance(self.public_key, rsa.RSAPublicKey):
            try:
                self.public_key.verify(
                    c.signature, c.tbs_certificate_bytes, padding.PKCS1v15(), c.signature_hash_algorithm
                )
            except InvalidSignature:
                return False
            return True
        if isinstance(self.public_key, ec.EllipticCurvePublicKey):
            try:
                self.public_key.verify(
                    c.signature, c.tbs_certificate_bytes, ec.ECDSA(c.signature_hash_algorithm)
                )
            except InvalidSignature:
                return False
            return True
        return verify_signature(self.public_key, c.tbs_certificate_bytes, c.signature)


def make_certificate(
    keypair: KeyPair,
    subject: str,
    not_before: datetime.datetime,
    not_after: datetime.datetime,
    serial: int | None = None,
) -> Certificate:
    """Issue a self-signed certificate whose subject is the DNS name it is published at."""
    if keypair.usage is not KeyUsage.SERVICE:
        raise KeyUsageError(f"{keypair.usage.value} key cannot issue endpoint certificates")
    if not_after <= not_before:
        raise ValueError("certificate validity window is empty")
    subject = records.normalize_name(subject)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, subject)])
    algo = None if keypair.profile == PROFILE_ED25519 else hashes.SHA256()
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(keypair.public_key)
        .serial_number(serial if serial is not None else x509.random_serial_number())
        .not_valid_before(not_before)
        .not_valid_after(not_after)
        .sign(keypair.private_key, algo)
    )
    return Certificate(cert.public_bytes(serialization.Encoding.DER))


# -- nonce challenge / response ---------------------------------------------


def new_nonce(rng: random.Random | None = None) -> int:
    if rng is not None:
        return rng.getrandbits(32)
    return secrets.randbits(32)


def _nonce_payload(nonce: int, sender: str, digest: bytes) -> bytes:
    sender_b = sender.lower().encode("ascii")
    return (
        _NONCE_DOMAIN + struct.pack("!IH", nonce, len(sender_b)) + sender_b
        + struct.pack("!H", len(digest)) + digest
    )


@_timed("create_signature")
def sign_nonce(keypair: KeyPair, nonce: int, sender: str, digest: bytes) -> bytes:
    """Sign ``nonce`` bound to the sender's DNS name and the carrying entry digest."""
    return keypair.sign(_nonce_payload(nonce, sender, digest), KeyUsage.SERVICE)


@_timed("verify_signature")
def verify_nonce(cert: Certificate, nonce: int, sender: str, digest: bytes, signature: bytes) -> bool:
    return verify_signature(cert.public_key, _nonce_payload(nonce, sender, digest), signature)


# -- TLSA -------------------------------------------------------------------


def build_tlsa(cert: Certificate, matching: int = 0) -> records.TlsaParams:
    if matching == 0:
        return records.TlsaParams(cert.der, 3, 0, 0)
    if matching == 1:
        return records.TlsaParams(hashlib.sha256(cert.der).digest(), 3, 0, 1)
    raise UnsupportedTlsaMode(f"matching type {matching}")


def match_tlsa(cert: Certificate, tlsa: records.TlsaParams) -> bool:
    if tlsa.usage != 3 or tlsa.selector != 0 or tlsa.matching not in (0, 1):
        raise UnsupportedTlsaMode(f"TLSA {tlsa.usage} {tlsa.selector} {tlsa.matching}")
    if tlsa.matching == 0:
        return secrets.compare_digest(cert.der, tlsa.association_data)
    return secrets.compare_digest(hashlib.sha256(cert.der).digest(), tlsa.association_data)


@functools.lru_cache(maxsize=4096)
def certificate_from_tlsa(tlsa: records.TlsaParams) -> Certificate | None:
    """The pinned certificate of a full-certificate record, else ``None``."""
    if tlsa.usage == 3 and tlsa.selector == 0 and tlsa.matching == 0:
        return Certificate(tlsa.association_data)
    return None


# -- key agreement ----------------------------------------------------------


@dataclasses.dataclass(eq=False)
class KaPrivate:
    group: int
    key: typing.Any

    def __deepcopy__(self, memo):
        return self


@_timed("ka_generate")
def ka_generate(group: int = DEFAULT_GROUP, rng: random.Random | None = None) -> tuple[KaPrivate, wire.KeyExchange]:
    if group == GROUP_X25519:
        if rng is not None:
            key = x25519.X25519PrivateKey.from_private_bytes(rng.randbytes(32))
        else:
            key = x25519.X25519PrivateKey.generate()
        share = key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    elif group == GROUP_P256:
        if rng is not None:
            n = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
            key = ec.derive_private_key(rng.randrange(1, n), ec.SECP256R1())
        else:
            key = ec.generate_private_key(ec.SECP256R1())
        share = key.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
        )
    else:
        raise GroupMismatch(f"unknown key agreement group {group}")
    return KaPrivate(group, key), wire.KeyExchange(group, share)


@_timed("ka_shared")
def ka_shared(private: KaPrivate, peer: wire.KeyExchange) -> bytes:
    if peer.group != private.group:
        raise GroupMismatch(f"peer share from group {peer.group}, expected {private.group}")
    try:
        if private.group == GROUP_X25519:
            if len(peer.share) != 32:
                raise GroupMismatch("X25519 share must be 32 bytes")
            return private.key.exchange(x25519.X25519PublicKey.from_public_bytes(peer.share))
        pub = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), peer.share)
        return private.key.exchange(ec.ECDH(), pub)
    except ValueError as exc:
        raise GroupMismatch(f"invalid peer share: {exc}") from None


@dataclasses.dataclass(frozen=True)
class Transcript:
    publisher: str
    client: str
    publisher_nonce: int
    client_nonce: int

    def encode(self) -> bytes:
        p = self.publisher.lower().encode("ascii")
        c = self.client.lower().encode("ascii")
        return (
            b"sdauth/session/v1" + struct.pack("!H", len(p)) + p + struct.pack("!H", len(c)) + c
            + struct.pack("!II", self.publisher_nonce, self.client_nonce)
        )


@dataclasses.dataclass(frozen=True)
class SessionKey:
    key: bytes
    key_id: int
    epoch: int = 0


@dataclasses.dataclass(frozen=True)
class GroupKey:
    key: bytes
    key_id: int
    epoch: int = 0


@_timed("derive_session_key")
def derive_session_key(shared: bytes, transcript: Transcript, key_size: int = SESSION_KEY_SIZE) -> SessionKey:
    okm = HKDF(hashes.SHA256(), key_size + 4, salt=None, info=transcript.encode()).derive(shared)
    return SessionKey(okm[:key_size], struct.unpack("!I", okm[key_size:])[0])


def new_group_key(epoch: int = 0, rng: random.Random | None = None, key_size: int = SESSION_KEY_SIZE) -> GroupKey:
    raw = rng.randbytes(key_size + 4) if rng is not None else secrets.token_bytes(key_size + 4)
    return GroupKey(raw[:key_size], struct.unpack("!I", raw[key_size:])[0], epoch)


def rekey(group_key: GroupKey, rng: random.Random | None = None) -> GroupKey:
    return new_group_key(group_key.epoch + 1, rng, len(group_key.key))


_WRAP_HEADER = struct.Struct("!II")


def _gcm_nonce(rng: random.Random | None) -> bytes:
    return rng.randbytes(12) if rng is not None else secrets.token_bytes(12)


@_timed("wrap_group_key")
def wrap_group_key(session_key: SessionKey, group_key: GroupKey, rng: random.Random | None = None) -> bytes:
    head = _WRAP_HEADER.pack(group_key.epoch, group_key.key_id)
    nonce = _gcm_nonce(rng)
    aad = head + struct.pack("!I", session_key.key_id)
    return head + nonce + AESGCM(session_key.key).encrypt(nonce, group_key.key, aad)


@_timed("unwrap_group_key")
def unwrap_group_key(session_key: SessionKey, ciphertext: bytes) -> GroupKey:
    if len(ciphertext) < _WRAP_HEADER.size + 12 + 16:
        raise AuthFailure("wrapped group key too short")
    head = ciphertext[:_WRAP_HEADER.size]
    nonce = ciphertext[_WRAP_HEADER.size:_WRAP_HEADER.size + 12]
    aad = head + struct.pack("!I", session_key.key_id)
    try:
        key = AESGCM(session_key.key).decrypt(nonce, ciphertext[_WRAP_HEADER.size + 12:], aad)
    except InvalidTag:
        raise AuthFailure("group key does not authenticate under this session key") from None
    epoch, key_id = _WRAP_HEADER.unpack(head)
    return GroupKey(key, key_id, epoch)


def seal_publication(group_key: GroupKey, payload: bytes, rng: random.Random | None = None) -> bytes:
    head = _WRAP_HEADER.pack(group_key.epoch, group_key.key_id)
    nonce = _gcm_nonce(rng)
    return head + nonce + AESGCM(group_key.key).encrypt(nonce, payload, head)


def open_publication(group_key: GroupKey, blob: bytes) -> bytes:
    if len(blob) < _WRAP_HEADER.size + 12 + 16:
        raise AuthFailure("publication too short")
    head = blob[:_WRAP_HEADER.size]
    epoch, key_id = _WRAP_HEADER.unpack(head)
    if (epoch, key_id) != (group_key.epoch, group_key.key_id):
        raise AuthFailure(f"publication for epoch {epoch}, holder has epoch {group_key.epoch}")
    try:
        return AESGCM(group_key.key).decrypt(blob[_WRAP_HEADER.size:_WRAP_HEADER.size + 12],
                                             blob[_WRAP_HEADER.size + 12:], head)
    except InvalidTag:
        raise AuthFailure("publication does not authenticate") from None
