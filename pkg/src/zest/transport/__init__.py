"""Message transports.

Every node exposes two endpoints: a synchronous request/reply endpoint
carrying REST messages, and an identity-routed push endpoint that delivers
each frame to exactly one registered client identity.  Two interchangeable
transports provide them:

* ``MemoryTransport`` — in-process registry, deterministic, no encryption;
  addresses look like ``mem://name``.
* ``ZmqTransport`` — ZeroMQ sockets (REQ/REP for reply, ROUTER/DEALER for
  push) with mandatory CurveZMQ encryption; addresses look like
  ``tcp://host:port``.

Both offer the same duck-typed surface and pass the same conformance
tests:

    serve_reply(addr, handler, *, keys=None, error_frame=b"") -> server
    serve_router(addr, *, keys=None) -> router    # .push(identity, frame)
    request(addr, frame, timeout, *, server_key_hex=None, credential=None)
    connect_router(addr, identity, *, server_key_hex=None) -> receiver

``handler`` is called as ``handler(frame, peer)`` and must return the
single reply frame; it may be invoked concurrently.  ``peer.credential``
carries the transport-level client identity: the hex CurveZMQ public key
on the network, a caller-supplied string in memory.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_REPLY_PORT = 5555
DEFAULT_ROUTER_PORT = 5556


class TransportError(Exception):
    """Base for transport failures."""


class TransportTimeout(TransportError):
    """No reply within the allowed time."""


class BindError(TransportError):
    """Endpoint address already taken or unbindable."""


@dataclass(frozen=True)
class Peer:
    """Transport-level facts about the requester."""

    credential: str | None = None


@dataclass(frozen=True)
class KeyPair:
    """Long-term node key pair, hex-encoded 32-byte Curve25519 keys."""

    public_hex: str
    secret_hex: str


@dataclass(frozen=True)
class EndpointAddress:
    """Where an endpoint lives: mem://name or tcp://host:port."""

    scheme: str
    host: str
    port: int = 0

    def __post_init__(self):
        if self.scheme not in ("mem", "tcp"):
            raise ValueError(f"unknown address scheme {self.scheme!r}")
        if not self.host:
            raise ValueError("address host must be nonempty")
        if self.scheme == "tcp" and not 0 <= self.port < 65536:
            raise ValueError(f"tcp address needs a port in 0..65535, got {self.port}")

    @classmethod
    def parse(cls, text: str) -> "EndpointAddress":
        scheme, separator, rest = text.partition("://")
        if not separator:
            raise ValueError(f"address {text!r} has no scheme")
        if scheme == "mem":
            return cls("mem", rest)
        if scheme == "tcp":
            host, _, port = rest.rpartition(":")
            if not host:
                raise ValueError(f"tcp address {text!r} has no port")
            return cls("tcp", host, int(port))
        raise ValueError(f"unknown address scheme {scheme!r}")

    def __str__(self) -> str:
        if self.scheme == "mem":
            return f"mem://{self.host}"
        return f"tcp://{self.host}:{self.port}"


def mem_address(name: str) -> EndpointAddress:
    return EndpointAddress("mem", name)


def tcp_address(host: str, port: int) -> EndpointAddress:
    return EndpointAddress("tcp", host, port)


from .inmem import MemoryTransport, TraceEvent  # noqa: E402
from .zeromq import ZmqTransport, generate_keypair  # noqa: E402

__all__ = [
    "BindError",
    "DEFAULT_REPLY_PORT",
    "DEFAULT_ROUTER_PORT",
    "EndpointAddress",
    "KeyPair",
    "MemoryTransport",
    "Peer",
    "TraceEvent",
    "TransportError",
    "TransportTimeout",
    "ZmqTransport",
    "generate_keypair",
    "mem_address",
    "tcp_address",
]
