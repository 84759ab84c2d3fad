"""Generic node engine.

A Node owns the two endpoints of one protocol participant.  Every frame
arriving on the reply endpoint runs the same pipeline:

    decode -> option matrix -> content format -> size -> token -> dispatch

with each failure mapped to its response code (128 malformed or
nonconforming, 143 unknown content format, 141 oversize, 129 bad token,
134 unroutable path, 160 handler exception, 163 draining).  The reply
endpoint always answers: exactly one response frame per request.

A GET carrying the observe option does not hit the route table; it
registers an ObservationEntry and hands back the router endpoint's public
key plus the identity the client must present there.  Events are pushed
to matching observers as meta-protocol lines wrapped in acknowledgement
frames, and registrations expire by max_age against an injectable clock.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
import uuid
from dataclasses import dataclass, field

from .clock import SystemClock
from .codec import (
    Code,
    ContentFormat,
    MalformedMessage,
    Message,
    MessageKind,
    Option,
    UnsupportedContentFormat,
    decode_message,
    encode_message,
    known_options,
    string_option,
    uint_option,
    validate_options,
)
from .tokens import (
    CaveatContext,
    TokenParseError,
    deserialize,
    match_path,
    missing_caveat_kinds,
    verify,
)
from .transport import Peer

logger = logging.getLogger(__name__)

DEFAULT_MAX_AGE_SECONDS = 60
DEFAULT_MAX_PAYLOAD = 65536
CATALOGUE_PATH = "/cat"

# A client connects to the router only after its observe response arrives,
# so a push can fail for a perfectly healthy registration.  Entries younger
# than this are never evicted on a failed push.
PUSH_FAILURE_GRACE_MS = 5000


# --- responses -------------------------------------------------------------

def bare(code: Code) -> Message:
    return Message(code)


def ack_post() -> Message:
    return Message(Code.ACK_POST)


def ack_delete() -> Message:
    """Header only: a DELETE response carries no options and no payload."""
    return Message(Code.ACK_DELETE)


def ack_payload(payload: bytes, content_format: ContentFormat,
                extra_options: tuple = ()) -> Message:
    options = (uint_option(Option.CONTENT_FORMAT, int(content_format)),) + extra_options
    return Message(Code.ACK_PAYLOAD, options=options, payload=payload)


# --- meta-protocol ---------------------------------------------------------

@dataclass(frozen=True)
class MetaRecord:
    """One observation event, rendered as a space-separated line."""

    timestamp_ms: int
    uri_path: str
    content_format: ContentFormat
    data: bytes


def format_meta_record(record: MetaRecord) -> str:
    """Render ``<timestamp> <uri-path> <content-format> <data>``.

    Binary data is base64-encoded; text and json are embedded verbatim
    and must therefore not contain newlines.
    """
    if record.content_format is ContentFormat.BINARY:
        data = base64.b64encode(record.data).decode("ascii")
    else:
        data = record.data.decode("utf-8")
        if "\n" in data:
            raise ValueError("meta record data must not contain newlines")
    return f"{record.timestamp_ms} {record.uri_path} {record.content_format.format_name} {data}"


@dataclass(frozen=True)
class AuditRecord:
    """Who did what: appended for every handled request, rejected included."""

    timestamp_ms: int
    token_identifier: str
    method: str
    path: str
    outcome: int


# --- observation registry --------------------------------------------------

@dataclass
class ObservationEntry:
    identity: str
    path_pattern: str
    mode: str                      # data | audit | notify
    expires_at_ms: int | None      # None: never expires
    content_format: ContentFormat | None = None
    created_at_ms: int = 0

    def expired(self, now_ms: int) -> bool:
        return self.expires_at_ms is not None and self.expires_at_ms <= now_ms


class IdentityCollision(Exception):
    pass


class ObservationRegistry:
    """Live subscriptions; register, match, expire are atomic."""

    def __init__(self):
        self._entries: dict[str, ObservationEntry] = {}
        self._lock = threading.Lock()

    def register(self, entry: ObservationEntry) -> None:
        with self._lock:
            if entry.identity in self._entries:
                raise IdentityCollision(entry.identity)
            self._entries[entry.identity] = entry

    def remove(self, identity: str) -> None:
        with self._lock:
            self._entries.pop(identity, None)

    def matching(self, path: str, mode: str, now_ms: int) -> list[ObservationEntry]:
        with self._lock:
            return [
                e for e in self._entries.values()
                if e.mode == mode and not e.expired(now_ms)
                and match_path(e.path_pattern, path)
            ]

    def expire(self, now_ms: int) -> int:
        with self._lock:
            dead = [i for i, e in self._entries.items() if e.expired(now_ms)]
            for identity in dead:
                del self._entries[identity]
            return len(dead)

    def entries(self) -> list[ObservationEntry]:
        with self._lock:
            return list(self._entries.values())

    def __contains__(self, identity: str) -> bool:
        with self._lock:
            return identity in self._entries

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# --- token policy ----------------------------------------------------------

@dataclass(frozen=True)
class Authorization:
    valid: bool
    reason: str | None = None
    token_identifier: str = "-"

    def __bool__(self) -> bool:
        return self.valid


class MacaroonPolicy:
    """Standard gate: a presented macaroon must chain-verify against the
    node's root secret, satisfy every caveat for (method, path, node name),
    and carry all three caveat kinds."""

    def __init__(self, node_name: str, root_secret: bytes):
        self.node_name = node_name
        self.root_secret = root_secret

    def authorize(self, message: Message, method: Code, path: str,
                  peer: Peer) -> Authorization:
        if not message.token:
            return Authorization(False, "missing token")
        try:
            macaroon = deserialize(message.token)
        except TokenParseError as exc:
            return Authorization(False, f"token parse error: {exc}")
        missing = missing_caveat_kinds(macaroon)
        if missing:
            return Authorization(False, f"token lacks caveats: {', '.join(missing)}",
                                 macaroon.identifier)
        result = verify(macaroon, self.root_secret,
                        CaveatContext(method, path, self.node_name))
        if not result:
            return Authorization(False, result.reason, macaroon.identifier)
        return Authorization(True, None, macaroon.identifier)


# --- catalogue -------------------------------------------------------------

@dataclass(frozen=True)
class CatalogueItem:
    href: str
    metadata: tuple[tuple[str, str], ...] = ()


def render_catalogue(description: str, items: list[CatalogueItem]) -> bytes:
    document = {
        "catalogue-metadata": [
            {"rel": "urn:X-hypercat:rels:isContentType",
             "val": "application/vnd.hypercat.catalogue+json"},
            {"rel": "urn:X-hypercat:rels:hasDescription:en", "val": description},
        ],
        "items": [
            {"href": item.href,
             "item-metadata": [{"rel": rel, "val": val} for rel, val in item.metadata]}
            for item in items
        ],
    }
    return json.dumps(document).encode("utf-8")


# --- the node --------------------------------------------------------------

@dataclass
class RequestContext:
    """What a route handler gets to see besides the message itself."""

    peer: Peer
    token_identifier: str
    path: str
    content_format: ContentFormat
    message: Message


class Node:
    """One protocol participant: reply endpoint, router endpoint, registry."""

    def __init__(self, name: str, root_secret: bytes, transport,
                 reply_addr, router_addr, *, keys=None, clock=None,
                 max_payload: int = DEFAULT_MAX_PAYLOAD,
                 sweep_interval: float | None = None):
        self.name = name
        self.transport = transport
        self.clock = clock if clock is not None else SystemClock()
        self.max_payload = max_payload
        self.registry = ObservationRegistry()
        self.token_policy = MacaroonPolicy(name, root_secret)
        self.audit_sink = None
        self.catalogue_provider = lambda: []
        self.catalogue_description = name
        self.draining = False
        self._routes: list[tuple[Code, str, object]] = []
        self._reply_addr = reply_addr
        self._router_addr = router_addr
        self._keys = keys
        self._sweep_interval = sweep_interval
        self._sweeper: threading.Thread | None = None
        self._stop = threading.Event()
        self.reply_server = None
        self.router = None
        self.add_route(Code.GET, CATALOGUE_PATH, self._handle_catalogue)

    # --- lifecycle ---

    def start(self) -> "Node":
        self.router = self.transport.serve_router(self._router_addr, keys=self._keys)
        self.reply_server = self.transport.serve_reply(
            self._reply_addr, self.handle_raw, keys=self._keys,
            error_frame=encode_message(bare(Code.INTERNAL_ERROR)),
        )
        if self._sweep_interval is not None:
            self._sweeper = threading.Thread(target=self._sweep_loop, daemon=True,
                                             name=f"zest-sweeper-{self.name}")
            self._sweeper.start()
        logger.info("node %s serving reply=%s router=%s", self.name,
                    self.reply_addr, self.router_addr)
        return self

    @property
    def reply_addr(self):
        return self.reply_server.addr if self.reply_server is not None else self._reply_addr

    @property
    def router_addr(self):
        return self.router.addr if self.router is not None else self._router_addr

    @property
    def router_public_key_hex(self) -> str:
        return self.router.public_key_hex if self.router is not None else ""

    def drain(self) -> None:
        self.draining = True

    def stop(self) -> None:
        self.drain()
        self._stop.set()
        if self._sweeper is not None:
            self._sweeper.join(timeout=2)
        if self.reply_server is not None:
            self.reply_server.close()
        if self.router is not None:
            self.router.close()

    def _sweep_loop(self) -> None:
        while not self._stop.wait(self._sweep_interval):
            self.expire_observations(self.clock.now_ms())

    # --- routing ---

    def add_route(self, method: Code, pattern: str, handler) -> None:
        self._routes.append((method, pattern, handler))

    def _find_route(self, method: Code, path: str):
        for route_method, pattern, handler in self._routes:
            if route_method is method and match_path(pattern, path):
                return handler
        return None

    # --- pipeline ---

    def handle_raw(self, frame: bytes, peer: Peer) -> bytes:
        return encode_message(self.handle_request(frame, peer))

    def handle_request(self, frame: bytes, peer: Peer) -> Message:
        path = "-"
        token_identifier = "-"
        method_name = "-"
        emit_data: tuple[str, ContentFormat, bytes] | None = None
        try:
            message = decode_message(frame)
        except MalformedMessage:
            response = bare(Code.BAD_REQUEST)
        else:
            if not message.code.is_request:
                response = bare(Code.BAD_REQUEST)
            else:
                method_name = message.code.name
                message = known_options(message)
                try:
                    path = message.uri_path or "-"
                except MalformedMessage:
                    path = "-"
                response, token_identifier, emit_data = self._respond(message, peer)
        self._record_audit(path, token_identifier, method_name, int(response.code))
        if emit_data is not None:
            self._emit_post_event(*emit_data)
        return response

    def _respond(self, message: Message, peer: Peer):
        """Run validation, token gate and dispatch; returns the response,
        the presented token identifier and a pending data event, if any."""
        method = message.code
        kind = MessageKind.for_request(method)
        if validate_options(message, kind):
            return bare(Code.BAD_REQUEST), "-", None
        try:
            content_format = message.content_format
            path = message.uri_path
            message.uri_host
            message.max_age
            observe_mode = message.observe_mode
        except UnsupportedContentFormat:
            return bare(Code.UNSUPPORTED_FORMAT), "-", None
        except MalformedMessage:
            return bare(Code.BAD_REQUEST), "-", None
        if len(message.payload) > self.max_payload:
            return bare(Code.TOO_LARGE), "-", None
        authorization = self.token_policy.authorize(message, method, path, peer)
        token_identifier = authorization.token_identifier
        if not authorization:
            logger.info("unauthorised %s %s: %s", method.name, path, authorization.reason)
            return bare(Code.UNAUTHORIZED), token_identifier, None
        if self.draining:
            return bare(Code.UNAVAILABLE), token_identifier, None
        if method is Code.GET and observe_mode is not None:
            return self._handle_observe(message, observe_mode, content_format,
                                        path), token_identifier, None
        handler = self._find_route(method, path)
        if handler is None:
            return bare(Code.NOT_ACCEPTABLE), token_identifier, None
        context = RequestContext(peer, token_identifier, path, content_format, message)
        try:
            response = handler(message, context)
        except Exception:
            logger.exception("handler for %s %s raised", method.name, path)
            return bare(Code.INTERNAL_ERROR), token_identifier, None
        emit_data = None
        if method is Code.POST and response.code in (Code.ACK_POST, Code.ACK_PAYLOAD):
            emit_data = (path, content_format, message.payload)
        return response, token_identifier, emit_data

    # --- observations ---

    def _handle_observe(self, message: Message, mode: str,
                        content_format: ContentFormat, path: str) -> Message:
        max_age = message.max_age
        if max_age is None:
            max_age = DEFAULT_MAX_AGE_SECONDS
        now_ms = self.clock.now_ms()
        if max_age == 0:
            expires_at = None
        else:
            expires_at = now_ms + max_age * 1000
        if mode == "notify":
            # The client derives its router identity from the path itself.
            identity = path
            payload = b""
        else:
            identity = str(uuid.uuid4())
            payload = identity.encode("ascii")
        entry = ObservationEntry(identity, path, mode, expires_at, content_format,
                                 created_at_ms=now_ms)
        try:
            self.registry.register(entry)
        except IdentityCollision:
            return bare(Code.BAD_REQUEST)
        return ack_payload(
            payload, ContentFormat.TEXT,
            extra_options=(string_option(Option.PUBLIC_KEY, self.router_public_key_hex),),
        )

    def emit_event(self, path: str, record: MetaRecord, kind: str) -> int:
        """Push one rendered record to every live observer matching path."""
        try:
            line = format_meta_record(record)
        except (ValueError, UnicodeDecodeError):
            logger.warning("unrenderable %s event for %s dropped", kind, path)
            return 0
        frame = encode_message(Message(Code.ACK_PAYLOAD, payload=line.encode("utf-8")))
        now_ms = self.clock.now_ms()
        delivered = 0
        for entry in self.registry.matching(path, kind, now_ms):
            if self.router is not None and self.router.push(entry.identity, frame):
                delivered += 1
            elif now_ms - entry.created_at_ms > PUSH_FAILURE_GRACE_MS:
                self.registry.remove(entry.identity)
        return delivered

    def expire_observations(self, now_ms: int) -> int:
        return self.registry.expire(now_ms)

    def _emit_post_event(self, path: str, content_format: ContentFormat,
                         payload: bytes) -> None:
        record = MetaRecord(self.clock.now_ms(), path, content_format, payload)
        self.emit_event(path, record, "data")
        self.emit_event(path, record, "notify")

    def _record_audit(self, path: str, token_identifier: str, method_name: str,
                      outcome: int) -> None:
        now = self.clock.now_ms()
        if self.audit_sink is not None:
            try:
                self.audit_sink(AuditRecord(now, token_identifier, method_name,
                                            path, outcome))
            except Exception:
                logger.exception("audit sink raised")
        record = MetaRecord(now, path, ContentFormat.TEXT,
                            f"{token_identifier} {method_name}".encode("utf-8"))
        self.emit_event(path, record, "audit")

    # --- catalogue ---

    def _handle_catalogue(self, message: Message, context: RequestContext) -> Message:
        payload = render_catalogue(self.catalogue_description, self.catalogue_provider())
        return ack_payload(payload, ContentFormat.JSON)
