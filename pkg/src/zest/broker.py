"""Asynchronous notifications brokered by a store.

Client and server never talk directly; both talk to a store, which
forwards events over two reserved path families:

    /notification/request/<service>/<id>    client POSTs here
    /notification/response/<service>/<id>   server POSTs here

The server observes the request family with a wildcard; the client
observes exactly one response path (notify mode) before posting, so the
response cannot race past it.  The <id> is a fresh v4 UUID per exchange,
which is also what keeps concurrent exchanges apart.  Payloads are pure
events: the store never persists them.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid

from .codec import Code, ContentFormat
from .client import RequestRejected, ZestClient
from .store import NOTIFICATION_REQUEST_PREFIX as REQUEST_PREFIX
from .store import NOTIFICATION_RESPONSE_PREFIX as RESPONSE_PREFIX
from .transport import TransportTimeout

logger = logging.getLogger(__name__)


def fresh_request_id() -> str:
    """Exchange ids are v4 UUIDs so concurrent clients cannot collide."""
    return str(uuid.uuid4())


def request_path(service: str, request_id: str) -> str:
    return f"{REQUEST_PREFIX}{service}/{request_id}"


def response_path(service: str, request_id: str) -> str:
    return f"{RESPONSE_PREFIX}{service}/{request_id}"


class NotificationError(Exception):
    def __init__(self, code: Code, leg: str):
        self.code = code
        super().__init__(f"{leg} rejected: {int(code)} {code.label}")


class NotificationWorker:
    """Server side: observe the request family, answer each event."""

    def __init__(self, client: ZestClient, store_addr, service: str, handler, *,
                 observe_token, post_token, max_age: int = 0,
                 result_format: ContentFormat = ContentFormat.TEXT,
                 server_key: str | None = None, router_addr=None):
        self._client = client
        self._store_addr = store_addr
        self._service = service
        self._handler = handler
        self._post_token = post_token
        self._result_format = result_format
        self._server_key = server_key
        self._observation = client.observe(
            store_addr, REQUEST_PREFIX + service + "/*", "data",
            token=observe_token, max_age=max_age, server_key=server_key,
            router_addr=router_addr,
        )
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"zest-worker-{service}")
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                event = self._observation.next_event(timeout=0.2)
            except TransportTimeout:
                continue
            except Exception:
                if not self._stop.is_set():
                    logger.exception("worker %s receive failed", self._service)
                return
            self._answer(event)

    def _answer(self, event) -> None:
        if not event.uri_path.startswith(REQUEST_PREFIX):
            return
        tail = event.uri_path[len(REQUEST_PREFIX):]
        service, sep, request_id = tail.partition("/")
        if not sep or service != self._service:
            return
        try:
            result = self._handler(event.data)
            result_format = self._result_format
        except Exception as exc:
            logger.exception("handler for %s failed", event.uri_path)
            result = json.dumps({"error": str(exc)}).encode("utf-8")
            result_format = ContentFormat.JSON
        reply = self._client.post(
            self._store_addr, response_path(self._service, request_id), result,
            result_format, token=self._post_token, server_key=self._server_key,
        )
        if reply.code is not Code.ACK_POST:
            logger.warning("response post for %s rejected: %s", request_id,
                           reply.code.label)

    def stop(self) -> None:
        self._stop.set()
        self._observation.close()
        self._thread.join(timeout=2)


def serve_notifications(client: ZestClient, store_addr, service: str, handler, *,
                        observe_token, post_token, max_age: int = 0,
                        result_format: ContentFormat = ContentFormat.TEXT,
                        server_key: str | None = None,
                        router_addr=None) -> NotificationWorker:
    """Start a worker answering every request event for service.

    handler maps request payload bytes to response payload bytes; an
    exception becomes a ``{"error": <text>}`` JSON payload instead.
    """
    return NotificationWorker(client, store_addr, service, handler,
                              observe_token=observe_token, post_token=post_token,
                              max_age=max_age, result_format=result_format,
                              server_key=server_key, router_addr=router_addr)


def notify_request(client: ZestClient, store_addr, service: str, payload: bytes, *,
                   observe_token, post_token,
                   content_format: ContentFormat = ContentFormat.TEXT,
                   timeout: float = 5.0, request_id: str | None = None,
                   server_key: str | None = None, router_addr=None) -> bytes:
    """One exchange: observe the response path, post the request, wait.

    Returns the response payload bytes; raises TransportTimeout when no
    answer arrives, NotificationError when either leg is rejected.
    """
    if request_id is None:
        request_id = fresh_request_id()
    try:
        observation = client.observe(
            store_addr, response_path(service, request_id), "notify",
            token=observe_token, max_age=0, server_key=server_key,
            router_addr=router_addr,
        )
    except RequestRejected as exc:
        raise NotificationError(exc.code, "response observe") from None
    try:
        reply = client.post(
            store_addr, request_path(service, request_id), payload,
            content_format, token=post_token, server_key=server_key,
        )
        if reply.code is not Code.ACK_POST:
            raise NotificationError(reply.code, "request post")
        return observation.next_event(timeout).data
    finally:
        observation.close()
