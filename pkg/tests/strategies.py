"""Hypothesis strategies for SD messages."""

from hypothesis import strategies as st

from sdauth import wire

u8 = st.integers(0, 0xFF)
u16 = st.integers(0, 0xFFFF)
u32 = st.integers(0, 0xFFFFFFFF)

ipv4 = st.tuples(u8, u8, u8, u8).map(lambda t: ".".join(map(str, t)))
endpoint = st.builds(wire.Ipv4EndpointOption, ipv4, st.sampled_from([wire.PROTO_UDP, wire.PROTO_TCP]), u16)
multicast = st.builds(wire.Ipv4MulticastOption, ipv4, st.just(wire.PROTO_UDP), u16)

_key_chars = st.characters(min_codepoint=0x21, max_codepoint=0x7E, blacklist_characters="=")
_val_chars = st.characters(min_codepoint=0x20, max_codepoint=0x7E)
config_item = st.tuples(st.text(_key_chars, min_size=1, max_size=12), st.text(_val_chars, max_size=40))
config = st.builds(wire.ConfigurationOption, st.lists(config_item, max_size=4).map(tuple))

security = st.builds(
    wire.SecurityBundle,
    challenge=st.none() | st.builds(wire.Challenge, u32),
    response=st.none() | st.builds(wire.Response, st.binary(min_size=1, max_size=300)),
    key_exchange=st.none() | st.builds(wire.KeyExchange, u8, st.binary(max_size=65)),
    session_key=st.none() | st.builds(wire.SessionKey, st.binary(max_size=60)),
    identity=st.none() | st.from_regex(r"_someip-client\.[0-9]{1,3}\.client\.vehicle1\.oem\.", fullmatch=True),
)
option = st.one_of(endpoint, multicast, config, security.map(lambda b: b.to_option()))

entry = st.builds(
    wire.SdEntry,
    st.sampled_from(list(wire.EntryType)),
    u16,
    u16,
    u8,
    st.integers(0, wire.MAX_TTL),
    u32,
)
run = st.lists(option, max_size=3)
header = st.builds(wire.SdHeader, client_id=u16, session_id=u16)


@st.composite
def messages(draw):
    runs = draw(st.lists(st.tuples(entry, run, run), max_size=4))
    return wire.SdMessage.build(runs, draw(header), draw(st.sampled_from([0, 0x80, 0x40, 0xC0])))
