"""Reference store node.

Two resource families live behind one Node pipeline:

* ``/kv/<key>`` -- a key/value map.  POST writes the payload with its
  content format, GET returns it, DELETE removes it.
* ``/ts/<id>`` -- append-only JSON time series.  POST appends a document
  stamped with the store clock; ``GET /ts/<id>/latest`` returns the newest
  entry and ``GET /ts/<id>/range/<from>/<to>`` returns all entries with
  ``from <= timestamp <= to`` (bounds in milliseconds, inclusive), each
  rendered as ``{"timestamp": ..., "data": ...}``.

Durability is an append-only journal replayed on startup.  One record:

    [timestamp u64][content format u32][path length u16][path]
    [data length u32][data]                    (big-endian throughout)

A content format of 0xFFFFFFFF marks a key/value delete tombstone; paths
under /ts/ replay as appends.  A truncated final record (crash mid-write)
is ignored.  The audit trail is kept in memory and, when a path is given,
appended to disk as JSON lines.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
from pathlib import Path

from .codec import Code, ContentFormat, Message
from .node import (
    AuditRecord,
    CatalogueItem,
    Node,
    RequestContext,
    ack_delete,
    ack_payload,
    ack_post,
    bare,
)

logger = logging.getLogger(__name__)

KV_PREFIX = "/kv/"
TS_PREFIX = "/ts/"
# Reserved event-only families: a POST here is acknowledged and fans out to
# observers, but nothing is stored or journalled.
NOTIFICATION_REQUEST_PREFIX = "/notification/request/"
NOTIFICATION_RESPONSE_PREFIX = "/notification/response/"
TOMBSTONE = 0xFFFFFFFF

_RECORD_HEAD = struct.Struct(">QIH")
_DATA_LEN = struct.Struct(">I")


class Store(Node):
    """A Node serving /kv/ and /ts/ with journalled state."""

    def __init__(self, name, root_secret, transport, reply_addr, router_addr, *,
                 keys=None, clock=None, journal_path=None, audit_path=None,
                 max_payload=None, sweep_interval=None):
        kwargs = {"keys": keys, "clock": clock, "sweep_interval": sweep_interval}
        if max_payload is not None:
            kwargs["max_payload"] = max_payload
        super().__init__(name, root_secret, transport, reply_addr, router_addr,
                         **kwargs)
        self._kv: dict[str, tuple[ContentFormat, bytes]] = {}
        self._ts: dict[str, list[tuple[int, object]]] = {}
        self._state_lock = threading.Lock()
        self._audit: list[AuditRecord] = []
        self._journal_file = None
        self._audit_file = None
        if journal_path is not None:
            path = Path(journal_path)
            if path.exists():
                self._replay_journal(path)
            self._journal_file = open(path, "ab")
        if audit_path is not None:
            self._audit_file = open(audit_path, "a", encoding="utf-8")
        self.audit_sink = self._append_audit
        self.catalogue_provider = self._catalogue_items
        self.catalogue_description = f"{name} datastore"
        self.add_route(Code.GET, KV_PREFIX + "*", self._kv_get)
        self.add_route(Code.POST, KV_PREFIX + "*", self._kv_post)
        self.add_route(Code.DELETE, KV_PREFIX + "*", self._kv_delete)
        self.add_route(Code.GET, TS_PREFIX + "*", self._ts_get)
        self.add_route(Code.POST, TS_PREFIX + "*", self._ts_post)
        self.add_route(Code.POST, NOTIFICATION_REQUEST_PREFIX + "*",
                       self._notification_post)
        self.add_route(Code.POST, NOTIFICATION_RESPONSE_PREFIX + "*",
                       self._notification_post)

    def stop(self):
        super().stop()
        if self._journal_file is not None:
            self._journal_file.close()
        if self._audit_file is not None:
            self._audit_file.close()

    # --- key/value ---

    def _kv_get(self, message: Message, context: RequestContext) -> Message:
        with self._state_lock:
            entry = self._kv.get(context.path)
        if entry is None:
            return bare(Code.NOT_ACCEPTABLE)
        stored_format, payload = entry
        return ack_payload(payload, stored_format)

    def _kv_post(self, message: Message, context: RequestContext) -> Message:
        with self._state_lock:
            self._kv[context.path] = (context.content_format, message.payload)
            self._journal(context.path, int(context.content_format), message.payload)
        return ack_post()

    def _kv_delete(self, message: Message, context: RequestContext) -> Message:
        with self._state_lock:
            self._kv.pop(context.path, None)
            self._journal(context.path, TOMBSTONE, b"")
        return ack_delete()

    @staticmethod
    def _notification_post(message: Message, context: RequestContext) -> Message:
        return ack_post()

    # --- time series ---

    def _ts_post(self, message: Message, context: RequestContext) -> Message:
        if context.content_format is not ContentFormat.JSON:
            return bare(Code.UNSUPPORTED_FORMAT)
        try:
            document = json.loads(message.payload)
        except ValueError:
            return bare(Code.BAD_REQUEST)
        timestamp = self.clock.now_ms()
        with self._state_lock:
            self._ts.setdefault(context.path, []).append((timestamp, document))
            self._journal(context.path, int(ContentFormat.JSON), message.payload,
                          timestamp)
        return ack_post()

    def _ts_get(self, message: Message, context: RequestContext) -> Message:
        path = context.path
        if path.endswith("/latest"):
            series_path = path[: -len("/latest")]
            with self._state_lock:
                entries = list(self._ts.get(series_path, ()))
            if not entries:
                return bare(Code.NOT_ACCEPTABLE)
            timestamp, document = entries[-1]
            body = {"timestamp": timestamp, "data": document}
            return ack_payload(json.dumps(body).encode("utf-8"), ContentFormat.JSON)
        series_path, sep, bounds = path.partition("/range/")
        if sep:
            first, _, second = bounds.partition("/")
            try:
                low, high = int(first), int(second)
            except ValueError:
                return bare(Code.BAD_REQUEST)
            with self._state_lock:
                entries = list(self._ts.get(series_path, ()))
            selected = [
                {"timestamp": t, "data": document}
                for t, document in entries
                if low <= t <= high
            ]
            return ack_payload(json.dumps(selected).encode("utf-8"), ContentFormat.JSON)
        return bare(Code.NOT_ACCEPTABLE)

    # --- journal ---

    def _journal(self, path: str, content_format: int, data: bytes,
                 timestamp: int | None = None) -> None:
        if self._journal_file is None:
            return
        if timestamp is None:
            timestamp = self.clock.now_ms()
        encoded_path = path.encode("utf-8")
        self._journal_file.write(
            _RECORD_HEAD.pack(timestamp, content_format, len(encoded_path))
            + encoded_path + _DATA_LEN.pack(len(data)) + data
        )
        self._journal_file.flush()

    def _replay_journal(self, path: Path) -> None:
        raw = path.read_bytes()
        offset = 0
        replayed = 0
        while offset < len(raw):
            record = self._read_record(raw, offset)
            if record is None:
                logger.warning("journal %s truncated at byte %d", path, offset)
                break
            offset, timestamp, content_format, record_path, data = record
            if record_path.startswith(TS_PREFIX):
                try:
                    document = json.loads(data)
                except ValueError:
                    logger.warning("journal entry for %s skipped: bad JSON", record_path)
                    continue
                self._ts.setdefault(record_path, []).append((timestamp, document))
            elif content_format == TOMBSTONE:
                self._kv.pop(record_path, None)
            else:
                self._kv[record_path] = (ContentFormat.from_value(content_format), data)
            replayed += 1
        logger.info("replayed %d journal records from %s", replayed, path)

    @staticmethod
    def _read_record(raw: bytes, offset: int):
        end = offset + _RECORD_HEAD.size
        if end > len(raw):
            return None
        timestamp, content_format, path_len = _RECORD_HEAD.unpack_from(raw, offset)
        path_end = end + path_len
        if path_end + _DATA_LEN.size > len(raw):
            return None
        record_path = raw[end:path_end].decode("utf-8", errors="replace")
        (data_len,) = _DATA_LEN.unpack_from(raw, path_end)
        data_end = path_end + _DATA_LEN.size + data_len
        if data_end > len(raw):
            return None
        data = raw[path_end + _DATA_LEN.size:data_end]
        return data_end, timestamp, content_format, record_path, data

    # --- audit ---

    def _append_audit(self, record: AuditRecord) -> None:
        with self._state_lock:
            self._audit.append(record)
            if self._audit_file is not None:
                json.dump({
                    "timestamp": record.timestamp_ms,
                    "token": record.token_identifier,
                    "method": record.method,
                    "path": record.path,
                    "outcome": record.outcome,
                }, self._audit_file)
                self._audit_file.write("\n")
                self._audit_file.flush()

    def audit_records(self) -> list[AuditRecord]:
        with self._state_lock:
            return list(self._audit)

    # --- introspection ---

    def kv_keys(self) -> list[str]:
        with self._state_lock:
            return sorted(self._kv)

    def ts_series(self) -> list[str]:
        with self._state_lock:
            return sorted(self._ts)

    def ts_entries(self, series_path: str) -> list[tuple[int, object]]:
        with self._state_lock:
            return list(self._ts.get(series_path, ()))

    def _catalogue_items(self) -> list[CatalogueItem]:
        with self._state_lock:
            items = [
                CatalogueItem(path, (("urn:X-hypercat:rels:hasDescription:en",
                                      fmt.format_name),))
                for path, (fmt, _) in sorted(self._kv.items())
            ]
            items.extend(
                CatalogueItem(path, (("urn:X-hypercat:rels:hasDescription:en",
                                      "time series"),))
                for path in sorted(self._ts)
            )
        return items
