"""ZeroMQ transport: REQ/REP reply endpoint, ROUTER/DEALER push endpoint.

Encryption is mandatory: every network socket runs CurveZMQ keyed by the
serving node's long-term key pair (one pair per node, both endpoints).
The reply server runs a ZAP authenticator that admits any client key and
surfaces it as the frame's User-Id, so servers can map a client's public
key to a configured name.  Clients without long-term keys of their own
connect with transient key pairs.

Keys are hex strings of the raw 32-byte Curve25519 values at every API
surface; conversion to ZeroMQ's Z85 wire form happens here.
"""

from __future__ import annotations

import logging
import threading
import time

import zmq
import zmq.auth
from zmq.auth.thread import ThreadAuthenticator
from zmq.utils import z85

from . import (
    BindError,
    EndpointAddress,
    KeyPair,
    Peer,
    TransportError,
    TransportTimeout,
)

logger = logging.getLogger(__name__)

# Bounded settle window for pushes racing the client's CURVE handshake.
PUSH_RETRY_INTERVAL = 0.01
PUSH_RETRY_TOTAL = 0.5


def generate_keypair() -> KeyPair:
    public, secret = zmq.curve_keypair()
    return KeyPair(z85.decode(public).hex(), z85.decode(secret).hex())


def _key_bytes(key_hex: str) -> bytes:
    raw = bytes.fromhex(key_hex)
    if len(raw) != 32:
        raise ValueError(f"curve key must be 32 bytes, got {len(raw)}")
    return raw


def public_key_hex(secret_hex: str) -> str:
    """Derive the public half from a secret key."""
    return z85.decode(zmq.curve_public(z85.encode(_key_bytes(secret_hex)))).hex()


def _peer_credential(frame: zmq.Frame) -> str | None:
    try:
        user_id = frame.get("User-Id")
    except Exception:
        return None
    if not user_id:
        return None
    try:
        return z85.decode(user_id.encode("ascii")).hex()
    except Exception:
        return user_id


def _curve_server(socket: zmq.Socket, keys: KeyPair) -> None:
    socket.curve_secretkey = _key_bytes(keys.secret_hex)
    socket.curve_publickey = _key_bytes(keys.public_hex)
    socket.curve_server = True


def _curve_client(socket: zmq.Socket, server_key_hex: str,
                  keys: KeyPair | None) -> None:
    if keys is None:
        public, secret = zmq.curve_keypair()
        socket.curve_publickey = public
        socket.curve_secretkey = secret
    else:
        socket.curve_publickey = _key_bytes(keys.public_hex)
        socket.curve_secretkey = _key_bytes(keys.secret_hex)
    socket.curve_serverkey = _key_bytes(server_key_hex)


def _bind(socket: zmq.Socket, addr: EndpointAddress) -> int:
    try:
        if addr.port == 0:
            return socket.bind_to_random_port(f"tcp://{addr.host}")
        socket.bind(str(addr))
        return addr.port
    except zmq.ZMQError as exc:
        raise BindError(f"cannot bind {addr}: {exc}") from exc


class _ZmqServerBase:
    """Owns a private context plus ZAP authenticator per server."""

    def __init__(self, keys: KeyPair | None):
        self.keys = keys if keys is not None else generate_keypair()
        self.context = zmq.Context()
        self.authenticator = ThreadAuthenticator(self.context)
        self.authenticator.start()
        self.authenticator.configure_curve(domain="*", location=zmq.auth.CURVE_ALLOW_ANY)
        self.public_key_hex = self.keys.public_hex

    def _teardown(self) -> None:
        self.authenticator.stop()
        self.context.term()


class ZmqReplyServer(_ZmqServerBase):
    def __init__(self, addr: EndpointAddress, handler, keys: KeyPair | None,
                 error_frame: bytes):
        super().__init__(keys)
        self._handler = handler
        self._error_frame = error_frame
        self._socket = self.context.socket(zmq.REP)
        _curve_server(self._socket, self.keys)
        try:
            self.port = _bind(self._socket, addr)
        except BindError:
            self._socket.close(0)
            self._teardown()
            raise
        self.addr = EndpointAddress("tcp", addr.host, self.port)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True,
                                        name=f"zest-reply-{self.port}")
        self._thread.start()

    def _serve(self) -> None:
        poller = zmq.Poller()
        poller.register(self._socket, zmq.POLLIN)
        while not self._stop.is_set():
            if not dict(poller.poll(50)):
                continue
            frame = self._socket.recv(copy=False)
            peer = Peer(credential=_peer_credential(frame))
            try:
                reply = self._handler(bytes(frame.buffer), peer)
            except Exception:
                logger.exception("reply handler raised; sending error frame")
                reply = self._error_frame
            self._socket.send(reply)

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self._socket.close(0)
        self._teardown()


class ZmqRouter(_ZmqServerBase):
    def __init__(self, addr: EndpointAddress, keys: KeyPair | None):
        super().__init__(keys)
        self._socket = self.context.socket(zmq.ROUTER)
        self._socket.setsockopt(zmq.ROUTER_MANDATORY, 1)
        _curve_server(self._socket, self.keys)
        try:
            self.port = _bind(self._socket, addr)
        except BindError:
            self._socket.close(0)
            self._teardown()
            raise
        self.addr = EndpointAddress("tcp", addr.host, self.port)
        self._lock = threading.Lock()
        self.closed = False

    def push(self, identity: str, frame: bytes) -> bool:
        """Deliver one frame to the connection that presented the identity.

        The ROUTER learns identities from the connection handshake, so a
        push can briefly race a client that is still handshaking; retry
        within a bounded window before declaring the identity unknown.
        """
        deadline = time.monotonic() + PUSH_RETRY_TOTAL
        while True:
            try:
                with self._lock:
                    if self.closed:
                        return False
                    self._socket.send_multipart(
                        [identity.encode("utf-8"), frame], flags=zmq.NOBLOCK
                    )
                return True
            except zmq.ZMQError as exc:
                if exc.errno not in (zmq.EHOSTUNREACH, zmq.EAGAIN):
                    logger.warning("router push to %r failed: %s", identity, exc)
                    return False
                if time.monotonic() >= deadline:
                    logger.info("router push to %r undeliverable", identity)
                    return False
                time.sleep(PUSH_RETRY_INTERVAL)

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._socket.close(0)
        self._teardown()


class ZmqRouterClient:
    def __init__(self, context: zmq.Context, addr: EndpointAddress,
                 identity: str, server_key_hex: str):
        self.identity = identity
        self._socket = context.socket(zmq.DEALER)
        self._socket.setsockopt(zmq.IDENTITY, identity.encode("utf-8"))
        _curve_client(self._socket, server_key_hex, None)
        self._socket.connect(str(addr))

    def recv(self, timeout: float) -> bytes:
        if self._socket.poll(int(timeout * 1000), zmq.POLLIN):
            return self._socket.recv()
        raise TransportTimeout(
            f"no frame for identity {self.identity!r} within {timeout}s"
        )

    def close(self) -> None:
        self._socket.close(0)


class ZmqTransport:
    def __init__(self):
        self._client_context: zmq.Context | None = None
        self._lock = threading.Lock()

    def _context(self) -> zmq.Context:
        with self._lock:
            if self._client_context is None:
                self._client_context = zmq.Context()
            return self._client_context

    def serve_reply(self, addr: EndpointAddress, handler, *,
                    keys: KeyPair | None = None,
                    error_frame: bytes = b"") -> ZmqReplyServer:
        return ZmqReplyServer(addr, handler, keys, error_frame)

    def serve_router(self, addr: EndpointAddress, *,
                     keys: KeyPair | None = None) -> ZmqRouter:
        return ZmqRouter(addr, keys)

    def request(self, addr: EndpointAddress, frame: bytes, timeout: float, *,
                server_key_hex: str | None = None,
                credential: KeyPair | None = None) -> bytes:
        if server_key_hex is None:
            raise TransportError("network requests need the server public key")
        socket = self._context().socket(zmq.REQ)
        socket.setsockopt(zmq.LINGER, 0)
        _curve_client(socket, server_key_hex, credential)
        try:
            socket.connect(str(addr))
            socket.send(frame)
            if socket.poll(int(timeout * 1000), zmq.POLLIN):
                return socket.recv()
            raise TransportTimeout(f"no reply from {addr} within {timeout}s")
        finally:
            socket.close(0)

    def connect_router(self, addr: EndpointAddress, identity: str, *,
                       server_key_hex: str | None = None) -> ZmqRouterClient:
        if server_key_hex is None:
            raise TransportError("router connections need the server public key")
        return ZmqRouterClient(self._context(), addr, identity, server_key_hex)

    def close(self) -> None:
        with self._lock:
            if self._client_context is not None:
                self._client_context.term()
                self._client_context = None
