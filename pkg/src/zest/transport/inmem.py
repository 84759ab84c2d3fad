"""In-process transport for deterministic tests.

One MemoryTransport instance is a private little network: reply handlers
and routers register under their address name, requests invoke the
handler directly on the caller's thread, and router pushes go through
per-identity FIFO queues.  No encryption, no sockets.

When tracing is enabled every frame that crosses an endpoint is recorded,
which lets tests assert topology properties such as "client and server
only ever talked to the store".
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass

from . import BindError, EndpointAddress, Peer, TransportError, TransportTimeout


@dataclass(frozen=True)
class TraceEvent:
    kind: str            # request | reply | push
    endpoint: str        # address of the serving endpoint
    identity: str | None
    frame: bytes


class _MemoryReplyServer:
    def __init__(self, transport: "MemoryTransport", addr: EndpointAddress):
        self._transport = transport
        self._name = addr.host
        self.addr = addr

    def close(self) -> None:
        self._transport._unregister_reply(self._name)


class _MemoryRouter:
    """Identity-routed push endpoint backed by per-identity queues."""

    public_key_hex = ""

    def __init__(self, transport: "MemoryTransport", addr: EndpointAddress):
        self._transport = transport
        self._name = addr.host
        self.addr = addr
        self._queues: dict[str, queue.SimpleQueue] = {}
        self._lock = threading.Lock()
        self.closed = False

    def push(self, identity: str, frame: bytes) -> bool:
        with self._lock:
            target = self._queues.get(identity)
        if target is None:
            return False
        target.put(frame)
        self._transport._trace("push", f"mem://{self._name}", identity, frame)
        return True

    def _connect(self, identity: str) -> "_MemoryRouterClient":
        with self._lock:
            if identity in self._queues:
                raise TransportError(f"identity {identity!r} already connected")
            self._queues[identity] = queue.SimpleQueue()
        return _MemoryRouterClient(self, identity)

    def _disconnect(self, identity: str) -> None:
        with self._lock:
            self._queues.pop(identity, None)

    def close(self) -> None:
        self.closed = True
        self._transport._unregister_router(self._name)


class _MemoryRouterClient:
    def __init__(self, router: _MemoryRouter, identity: str):
        self._router = router
        self.identity = identity

    def recv(self, timeout: float) -> bytes:
        try:
            return self._router._queues[self.identity].get(timeout=timeout)
        except (queue.Empty, KeyError):
            raise TransportTimeout(
                f"no frame for identity {self.identity!r} within {timeout}s"
            ) from None

    def close(self) -> None:
        self._router._disconnect(self.identity)


class MemoryTransport:
    def __init__(self, trace: bool = False):
        self._replies: dict[str, object] = {}
        self._routers: dict[str, _MemoryRouter] = {}
        self._lock = threading.Lock()
        self.tracing = trace
        self.trace_events: list[TraceEvent] = []

    def _trace(self, kind: str, endpoint: str, identity: str | None, frame: bytes) -> None:
        if self.tracing:
            with self._lock:
                self.trace_events.append(TraceEvent(kind, endpoint, identity, frame))

    # --- reply endpoint ---

    def serve_reply(self, addr: EndpointAddress, handler, *, keys=None,
                    error_frame: bytes = b"") -> _MemoryReplyServer:
        del keys  # no encryption in memory
        with self._lock:
            if addr.host in self._replies:
                raise BindError(f"{addr} already bound")
            self._replies[addr.host] = (handler, error_frame)
        return _MemoryReplyServer(self, addr)

    def _unregister_reply(self, name: str) -> None:
        with self._lock:
            self._replies.pop(name, None)

    def request(self, addr: EndpointAddress, frame: bytes, timeout: float, *,
                server_key_hex: str | None = None,
                credential: str | None = None) -> bytes:
        del server_key_hex
        deadline = time.monotonic() + timeout
        while True:
            with self._lock:
                entry = self._replies.get(addr.host)
            if entry is not None:
                break
            if time.monotonic() >= deadline:
                raise TransportTimeout(f"no reply endpoint at {addr} within {timeout}s")
            time.sleep(0.001)
        handler, error_frame = entry
        self._trace("request", str(addr), None, frame)
        try:
            reply = handler(frame, Peer(credential=credential))
        except Exception:
            reply = error_frame
        self._trace("reply", str(addr), None, reply)
        return reply

    # --- router endpoint ---

    def serve_router(self, addr: EndpointAddress, *, keys=None) -> _MemoryRouter:
        del keys
        with self._lock:
            if addr.host in self._routers:
                raise BindError(f"{addr} already bound")
            router = _MemoryRouter(self, addr)
            self._routers[addr.host] = router
        return router

    def _unregister_router(self, name: str) -> None:
        with self._lock:
            self._routers.pop(name, None)

    def connect_router(self, addr: EndpointAddress, identity: str, *,
                       server_key_hex: str | None = None) -> _MemoryRouterClient:
        del server_key_hex
        with self._lock:
            router = self._routers.get(addr.host)
        if router is None:
            raise TransportError(f"no router endpoint at {addr}")
        return router._connect(identity)
