import datetime
import random

import pytest

from sdauth import crypto, records, wire

NAME = "_5000._someip.3.2.1.42.service.vehicle1.oem."
T0 = datetime.datetime(2026, 1, 1, tzinfo=datetime.timezone.utc)
T1 = datetime.datetime(2027, 1, 1, tzinfo=datetime.timezone.utc)


@pytest.fixture(scope="module", params=crypto.PROFILES)
def endpoint(request):
    kp = crypto.generate_keypair(crypto.KeyUsage.SERVICE, request.param)
    return kp, crypto.make_certificate(kp, NAME, T0, T1)


def test_certificate_subject_and_window(endpoint):
    kp, cert = endpoint
    assert cert.subject == NAME
    assert cert.self_signature_ok()
    assert cert.valid_at(T0.timestamp() + 1)
    assert not cert.valid_at(T1.timestamp() + 1)


def test_nonce_signature_binds_nonce_sender_and_digest(endpoint):
    kp, cert = endpoint
    sig = crypto.sign_nonce(kp, 7, NAME, b"d" * 32)
    assert crypto.verify_nonce(cert, 7, NAME, b"d" * 32, sig)
    assert not crypto.verify_nonce(cert, 8, NAME, b"d" * 32, sig)
    assert not crypto.verify_nonce(cert, 7, "_someip-client.17.client.vehicle1.oem.", b"d" * 32, sig)
    assert not crypto.verify_nonce(cert, 7, NAME, b"e" * 32, sig)
    assert not crypto.verify_nonce(cert, 7, NAME, b"d" * 32, bytes(len(sig)))


def test_tlsa_modes(endpoint):
    _, cert = endpoint
    full = crypto.build_tlsa(cert)
    assert full.to_text().startswith("3 0 0 30")
    assert crypto.match_tlsa(cert, full)
    assert crypto.match_tlsa(cert, crypto.build_tlsa(cert, 1))
    assert crypto.certificate_from_tlsa(full) == cert
    with pytest.raises(crypto.UnsupportedTlsaMode):
        crypto.match_tlsa(cert, records.TlsaParams(cert.der, 2, 0, 0))


def test_key_usage_is_enforced():
    zone_key = crypto.generate_keypair(crypto.KeyUsage.ZONE, crypto.PROFILE_ED25519)
    with pytest.raises(crypto.KeyUsageError):
        crypto.sign_nonce(zone_key, 1, NAME, b"")
    with pytest.raises(crypto.KeyUsageError):
        crypto.make_certificate(zone_key, NAME, T0, T1)


def test_empty_validity_window_rejected():
    kp = crypto.generate_keypair(crypto.KeyUsage.SERVICE, crypto.PROFILE_ED25519)
    with pytest.raises(ValueError):
        crypto.make_certificate(kp, NAME, T0, T0)


@pytest.mark.parametrize("group", [crypto.GROUP_X25519, crypto.GROUP_P256])
def test_key_agreement_symmetry(group):
    rng = random.Random(group)
    for _ in range(50):
        a, sa = crypto.ka_generate(group, rng)
        b, sb = crypto.ka_generate(group, rng)
        assert crypto.ka_shared(a, sb) == crypto.ka_shared(b, sa)


def test_key_agreement_group_checks():
    a, _ = crypto.ka_generate(crypto.GROUP_X25519)
    _, p = crypto.ka_generate(crypto.GROUP_P256)
    with pytest.raises(crypto.GroupMismatch):
        crypto.ka_shared(a, p)
    with pytest.raises(crypto.GroupMismatch):
        crypto.ka_shared(a, wire.KeyExchange(crypto.GROUP_X25519, b"short"))
    with pytest.raises(crypto.GroupMismatch):
        crypto.ka_generate(9)


def test_session_key_depends_on_transcript():
    a, sa = crypto.ka_generate()
    b, sb = crypto.ka_generate()
    shared = crypto.ka_shared(a, sb)
    t = crypto.Transcript(NAME, "_someip-client.2.1.42.17.client.vehicle1.oem.", 1, 2)
    k1 = crypto.derive_session_key(shared, t)
    assert k1 == crypto.derive_session_key(crypto.ka_shared(b, sa), t)
    assert k1 != crypto.derive_session_key(shared, crypto.Transcript(t.publisher, t.client, 1, 3))
    assert len(k1.key) == crypto.SESSION_KEY_SIZE


def test_group_key_wrap_round_trip_and_tamper():
    sk = crypto.SessionKey(bytes(16), 5)
    gk = crypto.new_group_key(0, random.Random(1))
    blob = crypto.wrap_group_key(sk, gk)
    assert crypto.unwrap_group_key(sk, blob) == gk
    with pytest.raises(crypto.AuthFailure):
        crypto.unwrap_group_key(crypto.SessionKey(bytes(16), 6), blob)
    with pytest.raises(crypto.AuthFailure):
        crypto.unwrap_group_key(sk, blob[:-1] + bytes([blob[-1] ^ 1]))
    nxt = crypto.rekey(gk)
    assert nxt.epoch == 1 and nxt.key != gk.key


def test_publication_sealing():
    gk = crypto.new_group_key()
    blob = crypto.seal_publication(gk, b"speed=42")
    assert crypto.open_publication(gk, blob) == b"speed=42"
    with pytest.raises(crypto.AuthFailure):
        crypto.open_publication(crypto.rekey(gk), blob)


def test_pem_round_trip():
    kp = crypto.generate_keypair(crypto.KeyUsage.SUPPLIER, crypto.PROFILE_P256)
    back = crypto.KeyPair.from_pem(kp.private_pem(), crypto.KeyUsage.SUPPLIER)
    assert back.public_der() == kp.public_der() and back.profile == crypto.PROFILE_P256


def test_operation_timings_are_recorded():
    crypto.TIMINGS.reset()
    crypto.ka_generate()
    assert len(crypto.TIMINGS.snapshot()["ka_generate"]) == 1
