"""Store node: key/value, time series with a brute-force range oracle,
journal replay, audit trail, catalogue."""

from __future__ import annotations

import itertools
import json
import random

from zest.clock import SimulatedClock
from zest.client import ZestClient
from zest.codec import Code, ContentFormat
from zest.store import Store
from zest.tokens import mint_scoped
from zest.transport import mem_address
from zest.transport.inmem import MemoryTransport

SECRET = b"s" * 32
START_MS = 1_500_000_000_000
_ids = itertools.count()


class StoreEnv:
    def __init__(self, tmp_path=None, clock=None, journal=None):
        self.transport = MemoryTransport(trace=True)
        self.clock = clock or SimulatedClock(START_MS)
        n = next(_ids)
        journal_path = None
        audit_path = None
        if tmp_path is not None:
            journal_path = journal if journal is not None else tmp_path / "journal.bin"
            audit_path = tmp_path / "audit.log"
        self.store = Store("store1", SECRET, self.transport,
                           mem_address(f"store{n}"), mem_address(f"store{n}.router"),
                           clock=self.clock, journal_path=journal_path,
                           audit_path=audit_path).start()
        self.client = ZestClient(self.transport, host="tester")
        self.addr = self.store.reply_addr

    def token(self, method: str, path: str = "*"):
        return mint_scoped(SECRET, f"tok-{method}", "store1", "store1", method, path)

    def get(self, path, **kw):
        return self.client.get(self.addr, path, token=self.token("GET"), **kw)

    def post(self, path, payload, fmt=ContentFormat.TEXT, **kw):
        return self.client.post(self.addr, path, payload, fmt,
                                token=self.token("POST"), **kw)

    def delete(self, path, **kw):
        return self.client.delete(self.addr, path, token=self.token("DELETE"), **kw)

    def stop(self):
        self.store.stop()


class TestKeyValue:
    def test_round_trip_preserves_format(self):
        env = StoreEnv()
        assert env.post("/kv/a", b'{"v": 1}', ContentFormat.JSON).code is Code.ACK_POST
        response = env.get("/kv/a")
        assert response.code is Code.ACK_PAYLOAD
        assert response.payload == b'{"v": 1}'
        assert response.content_format is ContentFormat.JSON
        env.stop()

    def test_absent_key(self):
        env = StoreEnv()
        assert env.get("/kv/absent").code is Code.NOT_ACCEPTABLE
        env.stop()

    def test_overwrite(self):
        env = StoreEnv()
        env.post("/kv/a", b"one")
        env.post("/kv/a", b"two")
        assert env.get("/kv/a").payload == b"two"
        env.stop()

    def test_delete_is_idempotent(self):
        env = StoreEnv()
        env.post("/kv/a", b"x")
        first = env.delete("/kv/a")
        assert first.code is Code.ACK_DELETE
        assert first.options == () and first.payload == b""
        assert env.delete("/kv/a").code is Code.ACK_DELETE
        assert env.get("/kv/a").code is Code.NOT_ACCEPTABLE
        env.stop()

    def test_binary_payload(self):
        env = StoreEnv()
        blob = bytes(range(256))
        env.post("/kv/blob", blob, ContentFormat.BINARY)
        response = env.get("/kv/blob")
        assert response.payload == blob
        assert response.content_format is ContentFormat.BINARY
        env.stop()


class TestTimeSeries:
    def test_append_and_latest(self):
        env = StoreEnv()
        assert env.post("/ts/temp", b'{"v": 20}', ContentFormat.JSON).code is Code.ACK_POST
        env.clock.advance(1)
        env.post("/ts/temp", b'{"v": 21}', ContentFormat.JSON)
        response = env.get("/ts/temp/latest")
        assert response.code is Code.ACK_PAYLOAD
        body = json.loads(response.payload)
        assert body == {"timestamp": START_MS + 1000, "data": {"v": 21}}
        env.stop()

    def test_latest_on_empty_series(self):
        env = StoreEnv()
        assert env.get("/ts/none/latest").code is Code.NOT_ACCEPTABLE
        env.stop()

    def test_append_requires_json_format(self):
        env = StoreEnv()
        assert env.post("/ts/t", b"plain", ContentFormat.TEXT).code is Code.UNSUPPORTED_FORMAT
        env.stop()

    def test_append_rejects_bad_json(self):
        env = StoreEnv()
        assert env.post("/ts/t", b"{nope", ContentFormat.JSON).code is Code.BAD_REQUEST
        env.stop()

    def test_range_inclusive_bounds(self):
        env = StoreEnv()
        for n in range(5):
            env.post("/ts/t", json.dumps({"n": n}).encode(), ContentFormat.JSON)
            env.clock.advance(1)
        low = START_MS + 1000
        high = START_MS + 3000
        response = env.get(f"/ts/t/range/{low}/{high}")
        entries = json.loads(response.payload)
        assert [e["data"]["n"] for e in entries] == [1, 2, 3]
        assert entries[0]["timestamp"] == low
        assert entries[-1]["timestamp"] == high
        env.stop()

    def test_range_malformed_bounds(self):
        env = StoreEnv()
        assert env.get("/ts/t/range/abc/5").code is Code.BAD_REQUEST
        env.stop()

    def test_empty_window(self):
        env = StoreEnv()
        env.post("/ts/t", b"{}", ContentFormat.JSON)
        response = env.get("/ts/t/range/1/2")
        assert json.loads(response.payload) == []
        env.stop()

    def test_bare_ts_get_is_not_routable(self):
        env = StoreEnv()
        assert env.get("/ts/t").code is Code.NOT_ACCEPTABLE
        env.stop()

    def test_range_matches_brute_force(self):
        env = StoreEnv()
        rng = random.Random(5551)
        points = []
        for n in range(200):
            env.clock.advance(rng.uniform(0, 2))
            timestamp = env.clock.now_ms()
            env.post("/ts/r", json.dumps({"n": n}).encode(), ContentFormat.JSON)
            points.append((timestamp, {"n": n}))
        low_bound = points[0][0]
        high_bound = points[-1][0]
        for _ in range(40):
            a = rng.randint(low_bound - 500, high_bound + 500)
            b = rng.randint(low_bound - 500, high_bound + 500)
            low, high = min(a, b), max(a, b)
            got = json.loads(env.get(f"/ts/r/range/{low}/{high}").payload)
            expected = [{"timestamp": t, "data": d} for t, d in points
                        if low <= t <= high]
            assert got == expected
        env.stop()


class TestJournal:
    def test_replay_restores_state(self, tmp_path):
        env = StoreEnv(tmp_path)
        env.post("/kv/keep", b"v", ContentFormat.TEXT)
        env.post("/kv/gone", b"x", ContentFormat.TEXT)
        env.delete("/kv/gone")
        env.post("/ts/t", b'{"v": 5}', ContentFormat.JSON)
        env.stop()

        env2 = StoreEnv(tmp_path)
        assert env2.get("/kv/keep").payload == b"v"
        assert env2.get("/kv/gone").code is Code.NOT_ACCEPTABLE
        assert json.loads(env2.get("/ts/t/latest").payload)["data"] == {"v": 5}
        env2.stop()

    def test_replay_preserves_format(self, tmp_path):
        env = StoreEnv(tmp_path)
        env.post("/kv/j", b"{}", ContentFormat.JSON)
        env.stop()
        env2 = StoreEnv(tmp_path)
        assert env2.get("/kv/j").content_format is ContentFormat.JSON
        env2.stop()

    def test_truncated_tail_is_ignored(self, tmp_path):
        env = StoreEnv(tmp_path)
        env.post("/kv/a", b"1")
        env.post("/kv/b", b"2")
        env.stop()
        journal = tmp_path / "journal.bin"
        journal.write_bytes(journal.read_bytes()[:-3])
        env2 = StoreEnv(tmp_path)
        assert env2.get("/kv/a").payload == b"1"
        assert env2.get("/kv/b").code is Code.NOT_ACCEPTABLE
        env2.stop()

    def test_ts_timestamps_survive_replay(self, tmp_path):
        env = StoreEnv(tmp_path)
        env.post("/ts/t", b'{"v": 1}', ContentFormat.JSON)
        stamp = env.clock.now_ms()
        env.stop()
        env2 = StoreEnv(tmp_path)
        assert json.loads(env2.get("/ts/t/latest").payload)["timestamp"] == stamp
        env2.stop()


class TestAudit:
    def test_every_request_lands_in_the_trail(self):
        env = StoreEnv()
        env.post("/kv/a", b"x")
        env.get("/kv/a")
        env.get("/kv/missing")
        env.client.get(env.addr, "/kv/a")  # no token
        records = env.store.audit_records()
        outcomes = [(r.method, r.path, r.outcome) for r in records]
        assert outcomes == [
            ("POST", "/kv/a", 65),
            ("GET", "/kv/a", 69),
            ("GET", "/kv/missing", 134),
            ("GET", "/kv/a", 129),
        ]
        assert records[0].token_identifier == "tok-POST"
        assert records[-1].token_identifier == "-"
        env.stop()

    def test_audit_file_is_json_lines(self, tmp_path):
        env = StoreEnv(tmp_path)
        env.post("/kv/a", b"x")
        env.stop()
        lines = (tmp_path / "audit.log").read_text().splitlines()
        entry = json.loads(lines[0])
        assert entry["method"] == "POST"
        assert entry["path"] == "/kv/a"
        assert entry["outcome"] == 65
        env.stop()


class TestCatalogue:
    def test_items_track_resources(self):
        env = StoreEnv()
        document = json.loads(env.get("/cat").payload)
        assert document["items"] == []
        env.post("/kv/a", b"x")
        env.post("/ts/t", b"{}", ContentFormat.JSON)
        document = json.loads(env.get("/cat").payload)
        hrefs = [item["href"] for item in document["items"]]
        assert hrefs == ["/kv/a", "/ts/t"]
        env.stop()

    def test_deleted_key_leaves_catalogue(self):
        env = StoreEnv()
        env.post("/kv/a", b"x")
        env.delete("/kv/a")
        document = json.loads(env.get("/cat").payload)
        assert document["items"] == []
        env.stop()


class TestNotificationRoutes:
    def test_event_only_no_persistence(self, tmp_path):
        env = StoreEnv(tmp_path)
        response = env.post("/notification/request/svc/001", b"payload")
        assert response.code is Code.ACK_POST
        assert env.get("/notification/request/svc/001").code is Code.NOT_ACCEPTABLE
        assert env.store.kv_keys() == []
        env.stop()
        journal = tmp_path / "journal.bin"
        assert journal.read_bytes() == b""
