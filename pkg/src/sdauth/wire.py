"""Byte-level codec for SOME/IP service-discovery datagrams.

Layout follows the AUTOSAR SOME/IP-SD protocol: a 16 byte SOME/IP header,
the SD flags word, the entries array and the options array.  All multi-byte
integers are big-endian.  Security payloads travel inside configuration
options as ``key=value`` items (see :class:`SecurityBundle`).
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import enum
import hashlib
import ipaddress
import struct
import typing

SD_SERVICE_ID = 0xFFFF
SD_METHOD_ID = 0x8100
SD_MESSAGE_TYPE = 0x02  # NOTIFICATION
PROTOCOL_VERSION = 1
INTERFACE_VERSION = 1

HEADER_SIZE = 16
ENTRY_SIZE = 16
MAX_PAYLOAD = 1400
MAX_CONFIG_ITEM = 255
MAX_TTL = 0xFFFFFF

FLAG_REBOOT = 0x80
FLAG_UNICAST = 0x40

PROTO_TCP = 6
PROTO_UDP = 17

_HEADER = struct.Struct("!HHIHHBBBB")
_ENTRY = struct.Struct("!BBBBHHII")
_ENDPOINT = struct.Struct("!4sBBH")


class WireError(ValueError):
    """Parse or encode failure; ``offset`` names the failing byte position."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class Truncated(WireError):
    pass


class BadVersion(WireError):
    pass


class BadOptionLength(WireError):
    pass


class BadEntryLength(WireError):
    pass


class BadEntryType(WireError):
    pass


class BadOptionType(WireError):
    pass


class BadConfigItem(WireError):
    pass


class NotServiceDiscovery(WireError):
    pass


class InconsistentIndex(WireError):
    pass


class OversizeOption(WireError):
    pass


class OversizeMessage(WireError):
    pass


class EntryType(enum.IntEnum):
    FIND = 0x00
    OFFER = 0x01
    SUBSCRIBE = 0x06
    SUBSCRIBE_ACK = 0x07


class OptionKind(enum.IntEnum):
    CONFIGURATION = 0x01
    IPV4_ENDPOINT = 0x04
    IPV4_MULTICAST = 0x14


@dataclasses.dataclass(frozen=True)
class SdEntry:
    entry_type: EntryType
    service_id: int
    instance_id: int
    major_version: int
    ttl: int
    # minor version for Find/Offer; for eventgroup entries the AUTOSAR
    # layout is reserved(8) | flags+counter(8) | eventgroup id(16)
    minor_version_or_eventgroup: int = 0
    option_index_1: int = 0
    option_index_2: int = 0
    num_options_1: int = 0
    num_options_2: int = 0

    @property
    def is_stop(self) -> bool:
        """StopOffer / StopSubscribe: decided by ``ttl == 0`` alone."""
        return self.ttl == 0 and self.entry_type in (EntryType.OFFER, EntryType.SUBSCRIBE)

    @property
    def eventgroup(self) -> int:
        return self.minor_version_or_eventgroup & 0xFFFF

    def without_options(self) -> SdEntry:
        return dataclasses.replace(
            self, option_index_1=0, option_index_2=0, num_options_1=0, num_options_2=0
        )

    def pack(self) -> bytes:
        return _ENTRY.pack(
            int(self.entry_type),
            self.option_index_1,
            self.option_index_2,
            (self.num_options_1 << 4) | self.num_options_2,
            self.service_id,
            self.instance_id,
            (self.major_version << 24) | self.ttl,
            self.minor_version_or_eventgroup,
        )


def classify(entry: SdEntry) -> str:
    """Human-readable entry kind, including the Stop* variants."""
    if entry.entry_type is EntryType.OFFER:
        return "StopOffer" if entry.is_stop else "Offer"
    if entry.entry_type is EntryType.SUBSCRIBE:
        return "StopSubscribe" if entry.is_stop else "Subscribe"
    if entry.entry_type is EntryType.FIND:
        return "Find"
    return "SubscribeAck"


def entry_digest(entry: SdEntry, *extra: bytes) -> bytes:
    """SHA-256 over an entry with its option references zeroed, plus ``extra``.

    Option indices depend on where the encoder places options, so they are
    excluded; the security payloads that travel with the entry are fed in
    through ``extra`` instead.
    """
    h = hashlib.sha256(entry.without_options().pack())
    for part in extra:
        h.update(struct.pack("!H", len(part)))
        h.update(part)
    return h.digest()


@dataclasses.dataclass(frozen=True)
class Ipv4EndpointOption:
    address: str
    protocol: int
    port: int

    kind: typing.ClassVar[OptionKind] = OptionKind.IPV4_ENDPOINT

    def body(self) -> bytes:
        try:
            packed = ipaddress.IPv4Address(self.address).packed
        except ValueError as exc:
            raise WireError(f"bad IPv4 address {self.address!r}") from exc
        return b"\x00" + _ENDPOINT.pack(packed, 0, self.protocol, self.port)


@dataclasses.dataclass(frozen=True)
class Ipv4MulticastOption(Ipv4EndpointOption):
    kind: typing.ClassVar[OptionKind] = OptionKind.IPV4_MULTICAST


@dataclasses.dataclass(frozen=True)
class ConfigurationOption:
    items: tuple[tuple[str, str], ...] = ()

    kind: typing.ClassVar[OptionKind] = OptionKind.CONFIGURATION

    def body(self) -> bytes:
        return b"\x00" + encode_config_items(list(self.items))

    def get_all(self, key: str) -> list[str]:
        return [v for k, v in self.items if k == key]


SdOption = typing.Union[Ipv4EndpointOption, Ipv4MulticastOption, ConfigurationOption]


@dataclasses.dataclass(frozen=True)
class SdHeader:
    client_id: int = 0
    session_id: int = 1
    service_id: int = SD_SERVICE_ID
    method_id: int = SD_METHOD_ID
    protocol_version: int = PROTOCOL_VERSION
    interface_version: int = INTERFACE_VERSION
    message_type: int = SD_MESSAGE_TYPE
    return_code: int = 0
    # recomputed on encode; not part of message identity
    length: int = dataclasses.field(default=0, compare=False)


@dataclasses.dataclass(frozen=True)
class SdMessage:
    header: SdHeader = SdHeader()
    flags: int = 0
    entries: tuple[SdEntry, ...] = ()
    options: tuple[SdOption, ...] = ()

    @classmethod
    def build(
        cls,
        runs: typing.Iterable[tuple[SdEntry, typing.Sequence[SdOption], typing.Sequence[SdOption]]],
        header: SdHeader | None = None,
        flags: int = 0,
    ) -> SdMessage:
        """Assemble a message from ``(entry, run1, run2)`` triples.

        Options are laid out contiguously per run and shared between entries
        when an identical run already exists.
        """
        options: list[SdOption] = []
        entries = []

        def place(run: typing.Sequence[SdOption]) -> tuple[int, int]:
            run = list(run)
            if not run:
                return 0, 0
            if len(run) > 15:
                raise InconsistentIndex("more than 15 options in one run")
            for start in range(len(options) - len(run) + 1):
                if options[start:start + len(run)] == run:
                    return start, len(run)
            start = len(options)
            options.extend(run)
            return start, len(run)

        for entry, run1, run2 in runs:
            i1, n1 = place(run1)
            i2, n2 = place(run2)
            entries.append(
                dataclasses.replace(
                    entry, option_index_1=i1, num_options_1=n1, option_index_2=i2, num_options_2=n2
                )
            )
        return cls(header or SdHeader(), flags, tuple(entries), tuple(options))

    def options_of(self, entry: SdEntry) -> tuple[list[SdOption], list[SdOption]]:
        run1 = list(self.options[entry.option_index_1:entry.option_index_1 + entry.num_options_1])
        run2 = list(self.options[entry.option_index_2:entry.option_index_2 + entry.num_options_2])
        return run1, run2


def encode_config_items(items: typing.Sequence[tuple[str, str]]) -> bytes:
    out = bytearray()
    for key, value in items:
        if not key or "=" in key:
            raise BadConfigItem(f"invalid configuration key {key!r}")
        try:
            item = f"{key}={value}".encode("ascii")
        except UnicodeEncodeError as exc:
            raise BadConfigItem(f"non-ASCII configuration item {key!r}") from exc
        if len(item) > MAX_CONFIG_ITEM:
            raise OversizeOption(f"configuration item {key!r} is {len(item)} bytes")
        out.append(len(item))
        out += item
    out.append(0)
    return bytes(out)


def decode_config_items(data: bytes, base: int = 0) -> list[tuple[str, str]]:
    items = []
    pos = 0
    while True:
        if pos >= len(data):
            raise Truncated("configuration string lacks terminator", base + pos)
        n = data[pos]
        pos += 1
        if n == 0:
            break
        if pos + n > len(data):
            raise Truncated("configuration item runs past option", base + pos)
        raw = data[pos:pos + n]
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError:
            raise BadConfigItem("non-ASCII configuration item", base + pos) from None
        key, sep, value = text.partition("=")
        if not sep or not key:
            raise BadConfigItem(f"malformed configuration item {text!r}", base + pos)
        items.append((key, value))
        pos += n
    if pos != len(data):
        raise BadOptionLength("bytes after configuration terminator", base + pos)
    return items


def _encode_option(opt: SdOption) -> bytes:
    body = opt.body()
    if len(body) > 0xFFFF:
        raise OversizeOption(f"option body of {len(body)} bytes")
    return struct.pack("!HB", len(body), int(opt.kind)) + body


def encode_message(msg: SdMessage) -> bytes:
    for i, entry in enumerate(msg.entries):
        for idx, num in ((entry.option_index_1, entry.num_options_1),
                         (entry.option_index_2, entry.num_options_2)):
            if num and idx + num > len(msg.options):
                raise InconsistentIndex(
                    f"entry {i} references options {idx}..{idx + num - 1} "
                    f"of {len(msg.options)}",
                    HEADER_SIZE + 8 + i * ENTRY_SIZE,
                )
        if not 0 <= entry.ttl <= MAX_TTL:
            raise WireError(f"entry {i} ttl out of range")
    entries = b"".join(e.pack() for e in msg.entries)
    options = b"".join(_encode_option(o) for o in msg.options)
    payload = (
        struct.pack("!B3xI", msg.flags, len(entries)) + entries + struct.pack("!I", len(options)) + options
    )
    if len(payload) > MAX_PAYLOAD:
        raise OversizeMessage(f"SD payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    h = msg.header
    return _HEADER.pack(
        h.service_id, h.method_id, len(payload) + 8, h.client_id, h.session_id,
        h.protocol_version, h.interface_version, h.message_type, h.return_code,
    ) + payload


def _need(data: bytes, pos: int, n: int, what: str) -> None:
    if pos + n > len(data):
        raise Truncated(f"{what} needs {n} bytes", pos)


def decode_message(data: bytes) -> SdMessage:
    """Parse one SD datagram.  Raises a :class:`WireError` subclass on any defect."""
    data = bytes(data)
    _need(data, 0, HEADER_SIZE, "SOME/IP header")
    sid, mid, length, cid, sess, pv, iv, mt, rc = _HEADER.unpack_from(data)
    if pv != PROTOCOL_VERSION:
        raise BadVersion(f"protocol version {pv}", 12)
    if sid != SD_SERVICE_ID or mid != SD_METHOD_ID:
        raise NotServiceDiscovery(f"service 0x{sid:04x} method 0x{mid:04x}", 0)
    end = 8 + length
    if end > len(data):
        raise Truncated(f"length field announces {length} bytes", len(data))
    if end < len(data):
        raise BadOptionLength(f"{len(data) - end} bytes after message end", end)
    header = SdHeader(cid, sess, sid, mid, pv, iv, mt, rc, length)

    pos = HEADER_SIZE
    _need(data[:end], pos, 8, "SD flags and entries length")
    flags = data[pos]
    (entries_len,) = struct.unpack_from("!I", data, pos + 4)
    pos += 8
    if entries_len % ENTRY_SIZE:
        raise BadEntryLength(f"entries array length {entries_len}", pos - 4)
    _need(data[:end], pos, entries_len, "entries array")
    raw_entries = []
    for off in range(pos, pos + entries_len, ENTRY_SIZE):
        t, i1, i2, nn, svc, inst, maj_ttl, last = _ENTRY.unpack_from(data, off)
        try:
            etype = EntryType(t)
        except ValueError:
            raise BadEntryType(f"entry type 0x{t:02x}", off) from None
        raw_entries.append((off, SdEntry(
            etype, svc, inst, maj_ttl >> 24, maj_ttl & MAX_TTL, last, i1, i2, nn >> 4, nn & 0x0F
        )))
    pos += entries_len

    _need(data[:end], pos, 4, "options length")
    (options_len,) = struct.unpack_from("!I", data, pos)
    pos += 4
    if pos + options_len != end:
        if pos + options_len > end:
            raise Truncated(f"options array announces {options_len} bytes", end)
        raise BadOptionLength(f"options array ends before message end", pos + options_len)
    options: list[SdOption] = []
    while pos < end:
        _need(data[:end], pos, 3, "option header")
        olen, otype = struct.unpack_from("!HB", data, pos)
        body_at = pos + 3
        if olen < 1 or body_at + olen > end:
            raise BadOptionLength(f"option length {olen}", pos)
        body = data[body_at:body_at + olen]
        if otype in (OptionKind.IPV4_ENDPOINT, OptionKind.IPV4_MULTICAST):
            if olen != 9:
                raise BadOptionLength(f"IPv4 option length {olen}, expected 9", pos)
            addr, _, proto, port = _ENDPOINT.unpack_from(body, 1)
            cls = Ipv4EndpointOption if otype == OptionKind.IPV4_ENDPOINT else Ipv4MulticastOption
            options.append(cls(str(ipaddress.IPv4Address(addr)), proto, port))
        elif otype == OptionKind.CONFIGURATION:
            options.append(ConfigurationOption(tuple(decode_config_items(body[1:], body_at + 1))))
        else:
            raise BadOptionType(f"option type 0x{otype:02x}", pos + 2)
        pos = body_at + olen

    for off, entry in raw_entries:
        for idx, num in ((entry.option_index_1, entry.num_options_1),
                         (entry.option_index_2, entry.num_options_2)):
            if num and idx + num > len(options):
                raise InconsistentIndex(f"entry references missing option {idx + num - 1}", off)
    return SdMessage(header, flags, tuple(e for _, e in raw_entries), tuple(options))


# -- security options -------------------------------------------------------

CHALLENGE_KEY = "chal"
RESPONSE_KEY = "resp"
KEY_EXCHANGE_KEY = "kex"
SESSION_KEY_KEY = "skey"
IDENTITY_KEY = "name"
SECURITY_KEYS = (CHALLENGE_KEY, RESPONSE_KEY, KEY_EXCHANGE_KEY, SESSION_KEY_KEY, IDENTITY_KEY)


@dataclasses.dataclass(frozen=True)
class Challenge:
    nonce: int

    def __post_init__(self):
        if not 0 <= self.nonce <= 0xFFFFFFFF:
            raise ValueError("challenge nonce must fit in 32 bits")

    def encode(self) -> bytes:
        return struct.pack("!I", self.nonce)


@dataclasses.dataclass(frozen=True)
class Response:
    signature: bytes

    def encode(self) -> bytes:
        return self.signature


@dataclasses.dataclass(frozen=True)
class KeyExchange:
    group: int
    share: bytes

    def encode(self) -> bytes:
        return bytes([self.group]) + self.share


@dataclasses.dataclass(frozen=True)
class SessionKey:
    ciphertext: bytes

    def encode(self) -> bytes:
        return self.ciphertext


SecurityOption = typing.Union[Challenge, Response, KeyExchange, SessionKey]

_OPTION_KEYS = {
    Challenge: CHALLENGE_KEY,
    Response: RESPONSE_KEY,
    KeyExchange: KEY_EXCHANGE_KEY,
    SessionKey: SESSION_KEY_KEY,
}


@dataclasses.dataclass(frozen=True)
class SecurityBundle:
    """Security options carried by one configuration option."""

    challenge: Challenge | None = None
    response: Response | None = None
    key_exchange: KeyExchange | None = None
    session_key: SessionKey | None = None
    identity: str | None = None

    def is_empty(self) -> bool:
        return self == SecurityBundle()

    def to_option(self) -> ConfigurationOption:
        items: list[tuple[str, str]] = []
        for opt in (self.challenge, self.response, self.key_exchange, self.session_key):
            if opt is not None:
                items.extend(_chunked(_OPTION_KEYS[type(opt)], base64.b64encode(opt.encode()).decode()))
        if self.identity is not None:
            items.extend(_chunked(IDENTITY_KEY, self.identity))
        return ConfigurationOption(tuple(items))

    @classmethod
    def from_options(cls, options: typing.Iterable[SdOption]) -> SecurityBundle:
        """Collect security items from configuration options; other items are ignored.

        Raises :class:`BadConfigItem` on undecodable values.
        """
        values: dict[str, str] = {}
        for opt in options:
            if isinstance(opt, ConfigurationOption):
                for key, value in opt.items:
                    if key in SECURITY_KEYS:
                        values[key] = values.get(key, "") + value
        fields: dict[str, typing.Any] = {}
        try:
            if CHALLENGE_KEY in values:
                raw = _b64(values[CHALLENGE_KEY])
                if len(raw) != 4:
                    raise BadConfigItem("challenge nonce is not 32 bits")
                fields["challenge"] = Challenge(struct.unpack("!I", raw)[0])
            if RESPONSE_KEY in values:
                fields["response"] = Response(_b64(values[RESPONSE_KEY]))
            if KEY_EXCHANGE_KEY in values:
                raw = _b64(values[KEY_EXCHANGE_KEY])
                if not raw:
                    raise BadConfigItem("empty key exchange")
                fields["key_exchange"] = KeyExchange(raw[0], raw[1:])
            if SESSION_KEY_KEY in values:
                fields["session_key"] = SessionKey(_b64(values[SESSION_KEY_KEY]))
        except (binascii.Error, ValueError) as exc:
            if isinstance(exc, BadConfigItem):
                raise
            raise BadConfigItem(f"undecodable security value: {exc}") from None
        if IDENTITY_KEY in values:
            fields["identity"] = values[IDENTITY_KEY]
        return cls(**fields)


def _b64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def _chunked(key: str, value: str) -> list[tuple[str, str]]:
    """Split a long value over repeated items; readers concatenate them in order."""
    room = MAX_CONFIG_ITEM - len(key) - 1
    if not value:
        return [(key, "")]
    return [(key, value[i:i + room]) for i in range(0, len(value), room)]


def describe(msg: SdMessage) -> str:
    """Multi-line dump used by ``wire dump``."""
    h = msg.header
    lines = [
        f"SOME/IP service=0x{h.service_id:04x} method=0x{h.method_id:04x} length={h.length} "
        f"client=0x{h.client_id:04x} session=0x{h.session_id:04x} "
        f"proto={h.protocol_version} iface={h.interface_version} type=0x{h.message_type:02x} "
        f"rc={h.return_code}",
        f"SD flags=0x{msg.flags:02x}"
        + (" reboot" if msg.flags & FLAG_REBOOT else "")
        + (" unicast" if msg.flags & FLAG_UNICAST else ""),
    ]
    for i, e in enumerate(msg.entries):
        lines.append(
            f"entry[{i}] {classify(e)} service={e.service_id} instance={e.instance_id} "
            f"major={e.major_version} ttl={e.ttl} minor/eventgroup={e.minor_version_or_eventgroup} "
            f"run1={e.option_index_1}+{e.num_options_1} run2={e.option_index_2}+{e.num_options_2}"
        )
    for i, o in enumerate(msg.options):
        if isinstance(o, ConfigurationOption):
            body = " ".join(f"{k}={v if len(v) <= 24 else v[:21] + '...'}" for k, v in o.items)
            lines.append(f"option[{i}] configuration {body}")
        else:
            proto = {PROTO_TCP: "tcp", PROTO_UDP: "udp"}.get(o.protocol, str(o.protocol))
            kind = "ipv4-multicast" if isinstance(o, Ipv4MulticastOption) else "ipv4-endpoint"
            lines.append(f"option[{i}] {kind} {o.address}:{o.port}/{proto}")
    return "\n".join(lines)
