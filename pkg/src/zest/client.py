"""Client-side request building and the observe handshake.

A ZestClient stamps every request with the three mandatory options
(uri_path, uri_host, content_format) and decodes the reply.  observe()
performs the full handshake: GET with the observe option, read the
router public key and identity from the response, connect the router
endpoint, then stream meta-protocol lines as they arrive.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

from .codec import (
    Code,
    ContentFormat,
    Message,
    Option,
    decode_message,
    encode_message,
    string_option,
    uint_option,
)
from .tokens import Macaroon, serialize
from .transport import EndpointAddress, mem_address, tcp_address

DEFAULT_TIMEOUT = 5.0


class ClientError(Exception):
    pass


class RequestRejected(ClientError):
    """The node answered with an error code."""

    def __init__(self, code: Code, context: str = ""):
        self.code = code
        suffix = f" ({context})" if context else ""
        super().__init__(f"{int(code)} {code.label}{suffix}")


def _token_bytes(token) -> bytes:
    if token is None:
        return b""
    if isinstance(token, Macaroon):
        return serialize(token)
    if isinstance(token, str):
        return token.encode("utf-8")
    return bytes(token)


def _address(addr) -> EndpointAddress:
    if isinstance(addr, EndpointAddress):
        return addr
    return EndpointAddress.parse(str(addr))


def derive_router_addr(reply_addr: EndpointAddress) -> EndpointAddress:
    """Convention: the router endpoint lives right next to the reply one
    (tcp port + 1; in-memory name suffixed with .router)."""
    if reply_addr.scheme == "tcp":
        return tcp_address(reply_addr.host, reply_addr.port + 1)
    return mem_address(reply_addr.host + ".router")


# --- meta-protocol parsing -------------------------------------------------

@dataclass(frozen=True)
class MetaEvent:
    """One parsed meta-protocol line."""

    timestamp_ms: int
    uri_path: str
    content_format: ContentFormat
    field: str
    line: str

    @property
    def data(self) -> bytes:
        if self.content_format is ContentFormat.BINARY:
            return base64.b64decode(self.field)
        return self.field.encode("utf-8")

    @property
    def text(self) -> str:
        return self.field


def parse_meta_line(line: str) -> MetaEvent:
    parts = line.split(" ", 3)
    if len(parts) < 3:
        raise ClientError(f"meta line has {len(parts)} fields: {line!r}")
    field = parts[3] if len(parts) == 4 else ""
    try:
        timestamp_ms = int(parts[0])
    except ValueError:
        raise ClientError(f"bad meta timestamp: {parts[0]!r}") from None
    return MetaEvent(timestamp_ms, parts[1], ContentFormat.from_name(parts[2]),
                     field, line)


# --- observations ----------------------------------------------------------

class Observation:
    """A live subscription: reads pushed frames off the router endpoint."""

    def __init__(self, receiver, identity: str, mode: str, path: str,
                 server_key_hex: str):
        self._receiver = receiver
        self.identity = identity
        self.mode = mode
        self.path = path
        self.server_key_hex = server_key_hex

    def next_line(self, timeout: float) -> str:
        frame = self._receiver.recv(timeout)
        message = decode_message(frame)
        return message.payload.decode("utf-8")

    def next_event(self, timeout: float) -> MetaEvent:
        return parse_meta_line(self.next_line(timeout))

    def close(self) -> None:
        self._receiver.close()

    def __enter__(self) -> "Observation":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# --- the client ------------------------------------------------------------

class ZestClient:
    def __init__(self, transport, *, host: str = "client",
                 timeout: float = DEFAULT_TIMEOUT, credential=None):
        self.transport = transport
        self.host = host
        self.timeout = timeout
        self.credential = credential

    # low level

    def send(self, addr, message: Message, *, server_key: str | None = None,
             timeout: float | None = None) -> Message:
        frame = encode_message(message)
        reply = self.transport.request(
            _address(addr), frame, timeout if timeout is not None else self.timeout,
            server_key_hex=server_key, credential=self.credential,
        )
        return decode_message(reply)

    def _build(self, code: Code, path: str, token, content_format: ContentFormat,
               host: str | None, payload: bytes = b"",
               extra_options: tuple = ()) -> Message:
        options = (
            string_option(Option.URI_PATH, path),
            string_option(Option.URI_HOST, host if host is not None else self.host),
            uint_option(Option.CONTENT_FORMAT, int(content_format)),
        ) + extra_options
        return Message(code, token=_token_bytes(token), options=options,
                       payload=payload)

    # REST verbs

    def get(self, addr, path: str, *, token=None,
            content_format: ContentFormat = ContentFormat.TEXT,
            host: str | None = None, server_key: str | None = None,
            timeout: float | None = None) -> Message:
        request = self._build(Code.GET, path, token, content_format, host)
        return self.send(addr, request, server_key=server_key, timeout=timeout)

    def post(self, addr, path: str, payload: bytes,
             content_format: ContentFormat, *, token=None,
             host: str | None = None, server_key: str | None = None,
             timeout: float | None = None) -> Message:
        request = self._build(Code.POST, path, token, content_format, host,
                              payload=payload)
        return self.send(addr, request, server_key=server_key, timeout=timeout)

    def delete(self, addr, path: str, *, token=None, payload: bytes = b"",
               content_format: ContentFormat = ContentFormat.TEXT,
               host: str | None = None, server_key: str | None = None,
               timeout: float | None = None) -> Message:
        request = self._build(Code.DELETE, path, token, content_format, host,
                              payload=payload)
        return self.send(addr, request, server_key=server_key, timeout=timeout)

    # observe handshake

    def observe(self, addr, path: str, mode: str, *, token=None,
                max_age: int | None = None,
                content_format: ContentFormat = ContentFormat.TEXT,
                host: str | None = None, server_key: str | None = None,
                router_addr=None, timeout: float | None = None) -> Observation:
        extra = (string_option(Option.OBSERVE, mode),)
        if max_age is not None:
            extra += (uint_option(Option.MAX_AGE, max_age),)
        request = self._build(Code.GET, path, token, content_format, host,
                              extra_options=extra)
        response = self.send(addr, request, server_key=server_key, timeout=timeout)
        if response.code is not Code.ACK_PAYLOAD:
            raise RequestRejected(response.code, f"observe {mode} {path}")
        router_key = response.option_string(Option.PUBLIC_KEY) or ""
        identity = path if mode == "notify" else response.payload.decode("ascii")
        if router_addr is None:
            router_addr = derive_router_addr(_address(addr))
        receiver = self.transport.connect_router(
            _address(router_addr), identity,
            server_key_hex=router_key or None,
        )
        return Observation(receiver, identity, mode, path, router_key)
