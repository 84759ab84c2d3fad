"""Shared fixtures: a transport harness that runs the same conformance
tests over both the in-memory and the ZeroMQ transports."""

from __future__ import annotations

import itertools

import pytest

from zest.transport import KeyPair, mem_address, tcp_address
from zest.transport.inmem import MemoryTransport
from zest.transport.zeromq import ZmqTransport, generate_keypair

_counter = itertools.count()


class TransportHarness:
    """Uniform setup for either transport.

    Addresses are freshly generated per call so tests never collide; the
    ZeroMQ side binds ephemeral ports and wraps everything in one CURVE
    server key pair.
    """

    def __init__(self, kind: str):
        self.kind = kind
        if kind == "memory":
            self.transport = MemoryTransport(trace=True)
            self.keys = None
        else:
            self.transport = ZmqTransport()
            self.keys = generate_keypair()
        self._servers = []

    @property
    def server_key(self) -> str | None:
        return self.keys.public_hex if self.keys else None

    def fresh_addr(self):
        n = next(_counter)
        if self.kind == "memory":
            return mem_address(f"endpoint{n}")
        return tcp_address("127.0.0.1", 0)

    def dead_addr(self):
        if self.kind == "memory":
            return mem_address("nobody-home")
        return tcp_address("127.0.0.1", 1)

    def serve_reply(self, handler, error_frame: bytes = b""):
        server = self.transport.serve_reply(self.fresh_addr(), handler,
                                            keys=self.keys, error_frame=error_frame)
        self._servers.append(server)
        return server

    def serve_router(self):
        router = self.transport.serve_router(self.fresh_addr(), keys=self.keys)
        self._servers.append(router)
        return router

    def request(self, server, frame: bytes, timeout: float = 2.0, credential=None):
        return self.transport.request(server.addr, frame, timeout,
                                      server_key_hex=self.server_key,
                                      credential=credential)

    def connect_router(self, router, identity: str):
        return self.transport.connect_router(
            router.addr, identity,
            server_key_hex=router.public_key_hex or None)

    def make_credential(self, name: str):
        """Something request(credential=...) accepts for this transport."""
        if self.kind == "memory":
            return name
        return generate_keypair()

    @staticmethod
    def credential_id(credential) -> str:
        """What the server-side Peer.credential will read as."""
        if isinstance(credential, KeyPair):
            return credential.public_hex
        return credential

    def close(self):
        for server in self._servers:
            server.close()
        if hasattr(self.transport, "close"):
            self.transport.close()


@pytest.fixture(params=["memory", "zmq"])
def harness(request):
    h = TransportHarness(request.param)
    yield h
    h.close()


@pytest.fixture
def mem_transport():
    return MemoryTransport(trace=True)
