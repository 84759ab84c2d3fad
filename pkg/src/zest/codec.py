"""Binary codec for Zest protocol messages.

Wire layout (all multi-byte integers big-endian / network order):

    header   [code: u8][option count: u8][token length: u16]
    token    raw bytes, optional
    options  option count repetitions of [option code: u16][length: u16][value]
    payload  everything after the last option, verbatim

Requests are the codes below 64 (GET=1, POST=2, DELETE=4); everything else
in the code table is a response.  Numeric option values (content_format,
max_age) are fixed 4-byte unsigned integers; string option values are UTF-8
with no terminator.  The codec is lossless: duplicate and unknown options
are preserved as-is, interpretation policy lives above it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum

MAX_TOKEN_LENGTH = 0xFFFF
MAX_OPTION_VALUE_LENGTH = 0xFFFF
MAX_OPTION_COUNT = 0xFF
HEADER = struct.Struct("!BBH")
OPTION_HEADER = struct.Struct("!HH")


class CodecError(ValueError):
    """Base for codec failures."""


class MalformedMessage(CodecError):
    """Inbound bytes do not decode; servers answer these with BAD_REQUEST."""


class MessageEncodingError(CodecError):
    """A Message violates a wire limit; caller bug, never a wire condition."""


class UnsupportedContentFormat(CodecError):
    """Content format value outside the {0, 42, 50} mapping."""


class Code(IntEnum):
    """Request and response codes.  A code is a request iff its value < 64."""

    GET = 1
    POST = 2
    DELETE = 4
    ACK_POST = 65
    ACK_DELETE = 66
    ACK_PAYLOAD = 69
    BAD_REQUEST = 128
    UNAUTHORIZED = 129
    NOT_ACCEPTABLE = 134
    TOO_LARGE = 141
    UNSUPPORTED_FORMAT = 143
    INTERNAL_ERROR = 160
    UNAVAILABLE = 163

    @property
    def is_request(self) -> bool:
        return self.value < 64

    @property
    def is_response(self) -> bool:
        return self.value >= 64

    @property
    def label(self) -> str:
        return CODE_LABELS[self]


CODE_LABELS = {
    Code.GET: "GET",
    Code.POST: "POST",
    Code.DELETE: "DELETE",
    Code.ACK_POST: "Acknowledge (POST)",
    Code.ACK_DELETE: "Acknowledge (DELETE)",
    Code.ACK_PAYLOAD: "Acknowledge with payload (GET/POST)",
    Code.BAD_REQUEST: "Bad request",
    Code.UNAUTHORIZED: "Unauthorised",
    Code.NOT_ACCEPTABLE: "Not acceptable",
    Code.TOO_LARGE: "Request entity too large",
    Code.UNSUPPORTED_FORMAT: "Unsupported content format",
    Code.INTERNAL_ERROR: "Internal server error",
    Code.UNAVAILABLE: "Service unavailable",
}

REQUEST_CODES = frozenset(c for c in Code if c.is_request)
RESPONSE_CODES = frozenset(c for c in Code if c.is_response)
SUCCESS_CODES = frozenset({Code.ACK_POST, Code.ACK_DELETE, Code.ACK_PAYLOAD})


class Option(IntEnum):
    URI_HOST = 3
    OBSERVE = 6
    URI_PATH = 11
    CONTENT_FORMAT = 12
    MAX_AGE = 14
    PUBLIC_KEY = 2048


KNOWN_OPTIONS = frozenset(int(o) for o in Option)

OBSERVE_MODES = ("data", "audit", "notify")


class ContentFormat(IntEnum):
    TEXT = 0
    BINARY = 42
    JSON = 50

    @property
    def format_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_value(cls, value: int) -> "ContentFormat":
        try:
            return cls(value)
        except ValueError:
            raise UnsupportedContentFormat(f"unsupported content format {value}") from None

    @classmethod
    def from_name(cls, name: str) -> "ContentFormat":
        try:
            return cls[name.upper()]
        except KeyError:
            raise UnsupportedContentFormat(f"unsupported content format {name!r}") from None


@dataclass(frozen=True)
class OptionRecord:
    """One TLV-encoded option."""

    code: int
    value: bytes

    def __post_init__(self):
        if not 0 <= self.code <= 0xFFFF:
            raise MessageEncodingError(f"option code {self.code} outside u16 range")
        if len(self.value) > MAX_OPTION_VALUE_LENGTH:
            raise MessageEncodingError(
                f"option value of {len(self.value)} bytes exceeds u16 length field"
            )


def uint_option(code: int, value: int) -> OptionRecord:
    """Build a numeric option (content_format, max_age) as a 4-byte value."""
    if code not in (Option.CONTENT_FORMAT, Option.MAX_AGE):
        raise MessageEncodingError(f"option {code} is not numeric")
    if not 0 <= value < 2**32:
        raise MessageEncodingError(f"numeric option value {value} outside u32 range")
    return OptionRecord(code, value.to_bytes(4, "big"))


def string_option(code: int, value: str) -> OptionRecord:
    return OptionRecord(code, value.encode("utf-8"))


def decode_uint(record: OptionRecord) -> int:
    """Read a 4-byte numeric option value; wrong width is a structural fault."""
    if len(record.value) != 4:
        raise MalformedMessage(
            f"numeric option {record.code} has {len(record.value)} value bytes, expected 4"
        )
    return int.from_bytes(record.value, "big")


@dataclass(frozen=True)
class Message:
    """One Zest protocol unit: code, optional token, options, payload."""

    code: Code
    token: bytes = b""
    options: tuple[OptionRecord, ...] = ()
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))

    def find_option(self, code: int) -> OptionRecord | None:
        """Last occurrence wins; duplicates are allowed on the wire."""
        found = None
        for record in self.options:
            if record.code == code:
                found = record
        return found

    def option_string(self, code: int) -> str | None:
        record = self.find_option(code)
        if record is None:
            return None
        try:
            return record.value.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedMessage(f"option {code} is not valid UTF-8") from None

    @property
    def uri_path(self) -> str | None:
        return self.option_string(Option.URI_PATH)

    @property
    def uri_host(self) -> str | None:
        return self.option_string(Option.URI_HOST)

    @property
    def observe_mode(self) -> str | None:
        mode = self.option_string(Option.OBSERVE)
        if mode is not None and mode not in OBSERVE_MODES:
            raise MalformedMessage(f"observe mode {mode!r} not in {OBSERVE_MODES}")
        return mode

    @property
    def content_format(self) -> ContentFormat | None:
        record = self.find_option(Option.CONTENT_FORMAT)
        if record is None:
            return None
        return ContentFormat.from_value(decode_uint(record))

    @property
    def max_age(self) -> int | None:
        record = self.find_option(Option.MAX_AGE)
        if record is None:
            return None
        return decode_uint(record)


def encode_message(message: Message) -> bytes:
    """Serialize a Message to wire bytes.

    Raises MessageEncodingError when a length field would overflow; those
    are caller bugs, not wire errors.
    """
    if len(message.options) > MAX_OPTION_COUNT:
        raise MessageEncodingError(
            f"{len(message.options)} options exceed the 8-bit option count"
        )
    if len(message.token) > MAX_TOKEN_LENGTH:
        raise MessageEncodingError(
            f"token of {len(message.token)} bytes exceeds the 16-bit length field"
        )
    parts = [HEADER.pack(message.code, len(message.options), len(message.token))]
    parts.append(message.token)
    for record in message.options:
        parts.append(OPTION_HEADER.pack(record.code, len(record.value)))
        parts.append(record.value)
    parts.append(message.payload)
    return b"".join(parts)


def decode_message(data: bytes) -> Message:
    """Parse wire bytes into a Message.

    Inverse of encode_message on its image; trailing bytes after the
    declared options become the payload.  Any structural fault raises
    MalformedMessage, nothing else.
    """
    if len(data) < HEADER.size:
        raise MalformedMessage(f"truncated header: {len(data)} bytes")
    code_value, option_count, token_length = HEADER.unpack_from(data)
    try:
        code = Code(code_value)
    except ValueError:
        raise MalformedMessage(f"unknown code {code_value}") from None
    position = HEADER.size
    if len(data) < position + token_length:
        raise MalformedMessage("truncated token")
    token = data[position:position + token_length]
    position += token_length
    options = []
    for _ in range(option_count):
        if len(data) < position + OPTION_HEADER.size:
            raise MalformedMessage("truncated option header")
        option_code, value_length = OPTION_HEADER.unpack_from(data, position)
        position += OPTION_HEADER.size
        if len(data) < position + value_length:
            raise MalformedMessage(
                f"option {option_code} declares {value_length} value bytes, "
                f"{len(data) - position} present"
            )
        options.append(OptionRecord(option_code, data[position:position + value_length]))
        position += value_length
    return Message(code, token, tuple(options), data[position:])


class MessageKind(Enum):
    """The six columns of the option conformance matrix."""

    GET_REQUEST = ("GET", True)
    GET_RESPONSE = ("GET", False)
    POST_REQUEST = ("POST", True)
    POST_RESPONSE = ("POST", False)
    DELETE_REQUEST = ("DELETE", True)
    DELETE_RESPONSE = ("DELETE", False)

    @property
    def method(self) -> str:
        return self.value[0]

    @property
    def is_request(self) -> bool:
        return self.value[1]

    @classmethod
    def for_request(cls, code: Code) -> "MessageKind":
        return cls((code.name, True))

    @classmethod
    def for_response_to(cls, method: str) -> "MessageKind":
        return cls((method, False))


# Mandatory (x) and optional (+) options per message kind.  Everything else
# present is a violation; a DELETE response allows no options at all.
MANDATORY_OPTIONS: dict[MessageKind, frozenset[Option]] = {
    MessageKind.GET_REQUEST: frozenset({Option.URI_PATH, Option.URI_HOST, Option.CONTENT_FORMAT}),
    MessageKind.GET_RESPONSE: frozenset({Option.CONTENT_FORMAT}),
    MessageKind.POST_REQUEST: frozenset({Option.URI_PATH, Option.URI_HOST, Option.CONTENT_FORMAT}),
    MessageKind.POST_RESPONSE: frozenset(),
    MessageKind.DELETE_REQUEST: frozenset({Option.URI_PATH, Option.URI_HOST, Option.CONTENT_FORMAT}),
    MessageKind.DELETE_RESPONSE: frozenset(),
}

OPTIONAL_OPTIONS: dict[MessageKind, frozenset[Option]] = {
    MessageKind.GET_REQUEST: frozenset({Option.OBSERVE, Option.MAX_AGE}),
    MessageKind.GET_RESPONSE: frozenset({Option.PUBLIC_KEY}),
    MessageKind.POST_REQUEST: frozenset(),
    MessageKind.POST_RESPONSE: frozenset({Option.CONTENT_FORMAT}),
    MessageKind.DELETE_REQUEST: frozenset(),
    MessageKind.DELETE_RESPONSE: frozenset(),
}


def validate_options(message: Message, kind: MessageKind) -> list[str]:
    """Check a message against the option matrix for its kind.

    Returns one violation string per missing mandatory option and per
    present option that the matrix does not allow.  Order-insensitive;
    an empty list means the message conforms.
    """
    mandatory = MANDATORY_OPTIONS[kind]
    allowed = mandatory | OPTIONAL_OPTIONS[kind]
    present = {record.code for record in message.options}
    violations = []
    for option in sorted(mandatory, key=int):
        if option not in present:
            violations.append(f"{option.name.lower()} mandatory for {kind.name}")
    for code in sorted(present):
        if code not in allowed:
            name = Option(code).name.lower() if code in KNOWN_OPTIONS else str(code)
            violations.append(f"{name} not allowed for {kind.name}")
    return violations


def known_options(message: Message) -> Message:
    """Drop unknown option codes; servers ignore them for forward compatibility."""
    kept = tuple(r for r in message.options if r.code in KNOWN_OPTIONS)
    if len(kept) == len(message.options):
        return message
    return Message(message.code, message.token, kept, message.payload)
