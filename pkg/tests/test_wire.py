import struct

import pytest
from hypothesis import HealthCheck, assume, given, settings

from sdauth import wire
from strategies import messages, security


def offer(ttl=3, options=()):
    entry = wire.SdEntry(wire.EntryType.OFFER, 42, 1, 2, ttl, 3)
    return wire.SdMessage.build([(entry, list(options), [])])


def encode_or_skip(msg):
    try:
        return wire.encode_message(msg)
    except (wire.OversizeMessage, wire.OversizeOption):
        assume(False)


def test_offer_layout_is_byte_exact():
    data = wire.encode_message(offer(options=[wire.Ipv4EndpointOption("10.0.0.2", wire.PROTO_UDP, 5000)]))
    assert data.hex() == (
        "ffff8100" "00000030" "00000001" "01010200"  # SOME/IP header, length 48
        "00000000" "00000010"  # flags, entries array length
        "01000010" "002a0001" "02000003" "00000003"  # Offer 42.1 major 2 ttl 3 minor 3, 1 option
        "0000000c" "000904" "00" "0a000002" "00" "11" "1388"  # IPv4 endpoint 10.0.0.2:5000/udp
    )
    assert wire.decode_message(data).entries[0].service_id == 42


def test_stop_offer_is_decided_by_ttl_alone():
    assert offer(ttl=0).entries[0].is_stop
    assert not offer(ttl=1).entries[0].is_stop
    assert wire.classify(offer(ttl=0).entries[0]) == "StopOffer"


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(messages())
def test_round_trip(msg):
    data = encode_or_skip(msg)
    back = wire.decode_message(data)
    assert back == msg
    assert wire.encode_message(back) == data


@settings(max_examples=200, deadline=None)
@given(security)
def test_security_bundle_round_trip(bundle):
    msg = offer(options=[bundle.to_option()])
    back = wire.decode_message(encode_or_skip(msg))
    assert wire.SecurityBundle.from_options(back.options) == bundle


def test_config_item_splits_on_first_equals():
    raw = wire.encode_config_items([("name", "a=b=c")])
    assert wire.decode_config_items(raw) == [("name", "a=b=c")]


def test_long_identity_is_chunked():
    name = "x" * 600
    opt = wire.SecurityBundle(identity=name).to_option()
    assert len(opt.items) == 3
    assert all(len(k) + 1 + len(v) <= wire.MAX_CONFIG_ITEM for k, v in opt.items)
    assert wire.SecurityBundle.from_options([opt]).identity == name


def test_foreign_config_items_are_ignored():
    opt = wire.ConfigurationOption((("hostname", "ecu1"), ("chal", "AAAAAQ==")))
    assert wire.SecurityBundle.from_options([opt]) == wire.SecurityBundle(challenge=wire.Challenge(1))


def _valid():
    return bytearray(wire.encode_message(offer(options=[
        wire.Ipv4EndpointOption("10.0.0.2", wire.PROTO_UDP, 5000),
        wire.ConfigurationOption((("k", "v"),)),
    ])))


def _set_length(data):
    struct.pack_into("!I", data, 4, len(data) - 8)
    return data


@pytest.mark.parametrize("mutate, error", [
    (lambda d: d[:10], wire.Truncated),
    (lambda d: d[:12] + b"\x02" + d[13:], wire.BadVersion),
    (lambda d: b"\x12\x34" + d[2:], wire.NotServiceDiscovery),
    (lambda d: _set_length(d[:20] + struct.pack("!I", 15) + d[24:]), wire.BadEntryLength),
    (lambda d: d[:24] + b"\x09" + d[25:], wire.BadEntryType),
    (lambda d: d[:45] + b"\x05" + d[46:], wire.BadOptionLength),
    (lambda d: d[:46] + b"\x77" + d[47:], wire.BadOptionType),
    (lambda d: d[:-2] + b"\xff" + d[-1:], wire.BadConfigItem),
    (lambda d: d[:27] + b"\x31" + d[28:], wire.InconsistentIndex),
    (lambda d: d + b"\x00", wire.BadOptionLength),
])
def test_malformed_input_raises_typed_error(mutate, error):
    data = bytes(mutate(_valid()))
    with pytest.raises(error) as info:
        wire.decode_message(data)
    assert isinstance(info.value, wire.WireError)


def test_bad_config_key_refused_on_encode():
    with pytest.raises(wire.BadConfigItem):
        wire.encode_config_items([("a=b", "c")])


def test_oversize_message_refused():
    big = [(wire.SdEntry(wire.EntryType.FIND, i, 1, 1, 3, 0), [], []) for i in range(100)]
    with pytest.raises(wire.OversizeMessage):
        wire.encode_message(wire.SdMessage.build(big))


def test_entry_digest_ignores_option_placement():
    e = wire.SdEntry(wire.EntryType.SUBSCRIBE, 42, 1, 2, 3, 1)
    moved = wire.SdEntry(wire.EntryType.SUBSCRIBE, 42, 1, 2, 3, 1, option_index_1=4, num_options_1=2)
    assert wire.entry_digest(e, b"x") == wire.entry_digest(moved, b"x")
    assert wire.entry_digest(e, b"x") != wire.entry_digest(e, b"y")
