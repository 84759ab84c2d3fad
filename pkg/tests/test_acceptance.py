"""Acceptance gate: one test per release criterion, one summary line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the checklist.
Every test carries its own timing budget where the criterion has one;
budgets are wall-clock and generous enough for loaded CI machines.
"""

from __future__ import annotations

import itertools
import json
import random
import threading
import time
from pathlib import Path

from zest.arbiter import Arbiter
from zest.broker import notify_request, serve_notifications
from zest.client import ZestClient
from zest.clock import SimulatedClock
from zest.codec import (
    Code,
    ContentFormat,
    MalformedMessage,
    Message,
    MessageKind,
    Option,
    OptionRecord,
    SUCCESS_CODES,
    decode_message,
    encode_message,
    string_option,
    uint_option,
    validate_options,
)
from zest.node import Node, ack_delete, ack_payload, ack_post
from zest.store import Store
from zest.tokens import (
    CaveatContext,
    TokenParseError,
    deserialize,
    mint_scoped,
    serialize,
    verify,
)
from zest.transport import Peer, TransportTimeout, mem_address
from zest.transport.inmem import MemoryTransport

GOLDEN_DIR = Path(__file__).parent / "fixtures" / "golden"
SECRET = b"acceptance-root-0123456789abcdef"

_counter = itertools.count()


def fresh_host(prefix: str = "acc") -> str:
    return f"{prefix}{next(_counter)}"


def report(criterion: str, detail: str) -> None:
    """One line per criterion; printed only after every assertion held."""
    print(f"PASS {criterion}: {detail}", flush=True)


def start_store(tmp_path, *, clock=None, trace=False):
    transport = MemoryTransport(trace=trace)
    host = fresh_host()
    store = Store(host, SECRET, transport, mem_address(host),
                  mem_address(host + ".router"), clock=clock,
                  journal_path=tmp_path / f"{host}.journal",
                  audit_path=tmp_path / f"{host}.audit")
    store.start()
    return transport, store, mem_address(host)


def store_tokens(store):
    """(reader, writer) tokens scoped to everything on the store."""
    return (mint_scoped(SECRET, "reader", store.name, store.name, "GET", "*"),
            mint_scoped(SECRET, "writer", store.name, store.name, "POST", "*"))


def drain(observation, wait: float = 0.1) -> list:
    events = []
    while True:
        try:
            events.append(observation.next_event(timeout=wait))
        except TransportTimeout:
            return events


# --- 1. codec golden vectors ------------------------------------------------

def load_fixture(path: Path) -> bytes:
    lines = [line.strip() for line in path.read_text().splitlines()]
    return bytes.fromhex("".join(l for l in lines if l and not l.startswith("#")))


def test_golden_vectors():
    files = sorted(GOLDEN_DIR.glob("*.hex"))
    assert len(files) >= 12, "need one fixture per code plus option permutations"
    started = time.perf_counter()
    for path in files:
        wire = load_fixture(path)
        assert encode_message(decode_message(wire)) == wire, path.name
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"golden sweep took {elapsed:.3f}s"
    report("codec golden vectors",
           f"{len(files)} fixtures re-encode byte-identically in {elapsed * 1000:.0f}ms")


# --- 2. round-trip and mutation fuzzing -------------------------------------

KNOWN_OPTION_CODES = [int(o) for o in Option]


def random_message(rng: random.Random) -> Message:
    code = rng.choice(list(Code))
    token = rng.randbytes(rng.randrange(40)) if rng.random() < 0.5 else b""
    options = tuple(
        OptionRecord(
            rng.choice(KNOWN_OPTION_CODES) if rng.random() < 0.7
            else rng.randrange(0x10000),
            rng.randbytes(rng.randrange(24)),
        )
        for _ in range(rng.randrange(6))
    )
    return Message(code, token, options, rng.randbytes(rng.randrange(64)))


def mutate(rng: random.Random, data: bytes) -> bytes:
    kind = rng.randrange(4)
    if kind == 0 and data:
        index = rng.randrange(len(data))
        flipped = data[index] ^ (1 << rng.randrange(8))
        return data[:index] + bytes([flipped]) + data[index + 1:]
    if kind == 1:
        return data[:rng.randrange(len(data) + 1)]
    if kind == 2:
        index = rng.randrange(len(data) + 1)
        return data[:index] + rng.randbytes(rng.randrange(1, 8)) + data[index:]
    return rng.randbytes(rng.randrange(32))


def test_round_trip_and_mutation_fuzzing():
    rng = random.Random(0x5E57)
    started = time.perf_counter()
    for _ in range(10_000):
        message = random_message(rng)
        assert decode_message(encode_message(message)) == message
    rejected = 0
    for _ in range(10_000):
        mutated = mutate(rng, encode_message(random_message(rng)))
        try:
            decode_message(mutated)
        except MalformedMessage:
            rejected += 1
        # anything but a clean parse or MalformedMessage propagates and fails
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"fuzz run took {elapsed:.1f}s"
    report("codec fuzzing",
           f"10000 round-trips + 10000 mutations ({rejected} rejected cleanly) "
           f"in {elapsed:.1f}s")


# --- 3. option conformance matrix -------------------------------------------

# The six message kinds against the six options: "x" mandatory, "+" optional,
# absent means the option must not appear.  Restated literally here so the
# sweep checks the codec's tables rather than echoing them.
MATRIX: dict[MessageKind, dict[Option, str]] = {
    MessageKind.GET_REQUEST: {Option.URI_HOST: "x", Option.OBSERVE: "+",
                              Option.URI_PATH: "x", Option.CONTENT_FORMAT: "x",
                              Option.MAX_AGE: "+"},
    MessageKind.GET_RESPONSE: {Option.CONTENT_FORMAT: "x", Option.PUBLIC_KEY: "+"},
    MessageKind.POST_REQUEST: {Option.URI_HOST: "x", Option.URI_PATH: "x",
                               Option.CONTENT_FORMAT: "x"},
    MessageKind.POST_RESPONSE: {Option.CONTENT_FORMAT: "+"},
    MessageKind.DELETE_REQUEST: {Option.URI_HOST: "x", Option.URI_PATH: "x",
                                 Option.CONTENT_FORMAT: "x"},
    MessageKind.DELETE_RESPONSE: {},
}

KIND_CODES = {
    MessageKind.GET_REQUEST: Code.GET,
    MessageKind.POST_REQUEST: Code.POST,
    MessageKind.DELETE_REQUEST: Code.DELETE,
    MessageKind.GET_RESPONSE: Code.ACK_PAYLOAD,
    MessageKind.POST_RESPONSE: Code.ACK_POST,
    MessageKind.DELETE_RESPONSE: Code.ACK_DELETE,
}

ALL_OPTIONS = (Option.URI_HOST, Option.OBSERVE, Option.URI_PATH,
               Option.CONTENT_FORMAT, Option.MAX_AGE, Option.PUBLIC_KEY)


def sample_option(option: Option) -> OptionRecord:
    if option is Option.CONTENT_FORMAT:
        return uint_option(option, int(ContentFormat.TEXT))
    if option is Option.MAX_AGE:
        return uint_option(option, 30)
    value = {Option.URI_HOST: "hostA", Option.OBSERVE: "data",
             Option.URI_PATH: "/x", Option.PUBLIC_KEY: "ab" * 32}[option]
    return string_option(option, value)


def test_option_matrix_sweep():
    cells = 0
    for kind in MessageKind:
        code = KIND_CODES[kind]
        mandatory = [o for o, flag in MATRIX[kind].items() if flag == "x"]
        baseline = Message(code, options=tuple(sample_option(o) for o in mandatory))
        assert not validate_options(baseline, kind), kind
        for option in ALL_OPTIONS:
            flag = MATRIX[kind].get(option)
            if flag == "x":
                without = Message(code, options=tuple(
                    sample_option(o) for o in mandatory if o is not option))
                assert validate_options(without, kind), (kind, option, "missing")
            else:
                extended = Message(code, options=baseline.options
                                   + (sample_option(option),))
                verdict = validate_options(extended, kind)
                if flag == "+":
                    assert not verdict, (kind, option, "optional rejected")
                else:
                    assert verdict, (kind, option, "extra accepted")
            cells += 1
    assert cells == 36

    # The same matrix as the reply endpoint enforces it on live requests.
    node = Node("matrix", SECRET, MemoryTransport(), mem_address(fresh_host()),
                mem_address(fresh_host() + ".router"))
    node.add_route(Code.GET, "*", lambda m, c: ack_payload(b"ok", ContentFormat.TEXT))
    node.add_route(Code.POST, "*", lambda m, c: ack_post())
    node.add_route(Code.DELETE, "*", lambda m, c: ack_delete())
    tokens = {method: serialize(mint_scoped(SECRET, "sweep", "matrix", "matrix",
                                            method, "*"))
              for method in ("GET", "POST", "DELETE")}
    live_cells = 0
    for kind in (MessageKind.GET_REQUEST, MessageKind.POST_REQUEST,
                 MessageKind.DELETE_REQUEST):
        code = KIND_CODES[kind]
        token = tokens[kind.method]
        mandatory = [o for o, flag in MATRIX[kind].items() if flag == "x"]
        baseline = tuple(sample_option(o) for o in mandatory)

        def answer(options):
            frame = encode_message(Message(code, token=token, options=options))
            return node.handle_request(frame, Peer()).code

        assert answer(baseline) in SUCCESS_CODES, kind
        for option in ALL_OPTIONS:
            flag = MATRIX[kind].get(option)
            if flag == "x":
                without = tuple(sample_option(o) for o in mandatory if o is not option)
                assert answer(without) is Code.BAD_REQUEST, (kind, option)
            elif flag == "+":
                assert answer(baseline + (sample_option(option),)) in SUCCESS_CODES, \
                    (kind, option)
            else:
                assert answer(baseline + (sample_option(option),)) is Code.BAD_REQUEST, \
                    (kind, option)
            live_cells += 1
    assert live_cells == 18
    report("option matrix", "36 matrix cells + 18 live request cells conform")


# --- 4. observation line byte-exactness -------------------------------------

def test_observation_line_byte_exact(tmp_path):
    transport, store, addr = start_store(tmp_path)
    reader, writer = store_tokens(store)
    client = ZestClient(transport)
    payload = b'{"room": "lounge", "value": 1}'
    with client.observe(addr, "/kv/foo/bar", "data", token=reader) as observation:
        response = client.post(addr, "/kv/foo/bar", payload, ContentFormat.JSON,
                               token=writer)
        assert response.code is Code.ACK_POST
        line = observation.next_line(timeout=2.0)
    store.stop()
    timestamp, rest = line.split(" ", 1)
    assert timestamp.isdigit(), line
    assert rest == '/kv/foo/bar json {"room": "lounge", "value": 1}'
    assert line == f"{int(timestamp)} /kv/foo/bar json {payload.decode()}"
    report("observation line", f"delivered byte-exact: {line!r}")


# --- 5. expiry semantics under a simulated clock ----------------------------

def test_observation_expiry():
    clock = SimulatedClock(1_700_000_000_000)
    transport = MemoryTransport()
    host = fresh_host()
    node = Node("expiry", SECRET, transport, mem_address(host),
                mem_address(host + ".router"), clock=clock)
    node.start()
    client = ZestClient(transport)
    token = mint_scoped(SECRET, "watcher", "expiry", "expiry", "GET", "*")
    default = client.observe(mem_address(host), "/probe/default", "data", token=token)
    forever = client.observe(mem_address(host), "/probe/forever", "data",
                             token=token, max_age=0)
    short = client.observe(mem_address(host), "/probe/short", "data",
                           token=token, max_age=2)
    base = clock.now_ms()

    def alive(identity: str, offset_ms: int) -> bool:
        clock.set(base + offset_ms)
        node.expire_observations(clock.now_ms())
        return identity in node.registry

    assert alive(short.identity, 1_990)            # still there at 1.99 s
    assert not alive(short.identity, 2_000)        # gone at 2.0 s: in [2.0, 2.1]
    assert not alive(short.identity, 2_100)
    assert alive(default.identity, 59_900)         # default 60 s: there at 59.9
    assert not alive(default.identity, 60_100)     # gone at 60.1
    assert alive(forever.identity, 1_000_000_000)  # max_age 0 outlives 10^6 s
    for observation in (default, forever, short):
        observation.close()
    node.stop()
    report("observation expiry",
           "default 60s bounds at 59.9/60.1, max_age 2 in [2.0, 2.1], "
           "max_age 0 alive after 10^6 s")


# --- 6. token context matrix and tamper resistance --------------------------

def test_token_contexts_and_tamper():
    token = mint_scoped(SECRET, "ctx", "store1", "store1", "GET", "/kv/a")
    contexts = [CaveatContext(method, path, target)
                for target in ("store1", "intruder")
                for method in (Code.GET, Code.POST)
                for path in ("/kv/a", "/kv/b")]
    assert len(contexts) == 8
    verdicts = [bool(verify(token, SECRET, context)) for context in contexts]
    assert sum(verdicts) == 1, "exactly one context may verify"
    matching = contexts[verdicts.index(True)]
    assert (matching.target, matching.method, matching.path) == \
        ("store1", Code.GET, "/kv/a")

    wire = serialize(token)
    rng = random.Random(0xF1)
    positions = rng.sample(range(len(wire) * 8), 256)
    good = CaveatContext(Code.GET, "/kv/a", "store1")
    for position in positions:
        index, bit = divmod(position, 8)
        tampered = wire[:index] + bytes([wire[index] ^ (1 << bit)]) + wire[index + 1:]
        assert tampered != wire
        try:
            mangled = deserialize(tampered)
        except TokenParseError:
            continue
        assert not verify(mangled, SECRET, good), f"bit {position} survived"
    report("token matrix", "1/8 contexts verifies; 256 single-bit tampers all fail")


# --- 7. full deployment flow ------------------------------------------------

def test_deployment_flow(tmp_path):
    started = time.perf_counter()
    transport = MemoryTransport()
    store_secret = b"store-root-secret-0123456789abcd"
    arb_host, store_host = fresh_host("arb"), fresh_host("depot")
    arbiter = Arbiter("zestd", SECRET, transport, mem_address(arb_host),
                      mem_address(arb_host + ".router"),
                      clients={"manager": "cred-manager", "logger": "cred-logger",
                               "dashboard": "cred-dashboard", "sensor": "cred-sensor"},
                      target_secrets={"store1": store_secret})
    arbiter.start()
    store = Store("store1", store_secret, transport, mem_address(store_host),
                  mem_address(store_host + ".router"),
                  journal_path=tmp_path / "journal.bin",
                  audit_path=tmp_path / "audit.log")
    store.start()
    arb_addr, store_addr = mem_address(arb_host), mem_address(store_host)

    manager = ZestClient(transport, host="manager", credential="cred-manager")
    logger = ZestClient(transport, host="logger", credential="cred-logger")
    dashboard = ZestClient(transport, host="dashboard", credential="cred-dashboard")
    sensor = ZestClient(transport, host="sensor", credential="cred-sensor")

    # 1. the manager configures which tokens may be minted for whom
    for body in ({"grantee": "logger", "target": "store1", "method": "GET",
                  "path": "*"},
                 {"grantee": "dashboard", "target": "store1", "method": "GET",
                  "path": "/kv/*"},
                 {"grantee": "sensor", "target": "store1", "method": "POST",
                  "path": "/kv/*"}):
        response = manager.post(arb_addr, "/grant", json.dumps(body).encode(),
                                ContentFormat.JSON, token=arbiter.manager_token)
        assert response.code is Code.ACK_POST, body

    def minted(client, target, method, path) -> bytes:
        body = json.dumps({"target": target, "method": method, "path": path})
        response = client.post(arb_addr, "/token", body.encode(), ContentFormat.JSON)
        assert response.code is Code.ACK_PAYLOAD, (target, method, path)
        return response.payload

    # 2. the manager watches the arbiter's own audit stream
    manager_token = minted(manager, "zestd", "GET", "*")
    manager_audit = manager.observe(arb_addr, "*", "audit", token=manager_token)
    # 3-4. the logger mints an audit token and watches the store
    logger_token = minted(logger, "store1", "GET", "*")
    logger_audit = logger.observe(store_addr, "*", "audit", token=logger_token)
    # 5-6. the dashboard mints a data token and watches posted values
    dashboard_token = minted(dashboard, "store1", "GET", "/kv/*")
    dashboard_data = dashboard.observe(store_addr, "/kv/*", "data",
                                       token=dashboard_token)
    # 7-8. the sensor mints a POST token and posts a reading
    sensor_token = minted(sensor, "store1", "POST", "/kv/*")
    posted = sensor.post(store_addr, "/kv/room", b'{"temp": 21}',
                         ContentFormat.JSON, token=sensor_token)
    assert posted.code is Code.ACK_POST

    # 9. every observer got what the deployment promised
    data_events = drain(dashboard_data)
    assert [e.data for e in data_events] == [b'{"temp": 21}']
    assert data_events[0].uri_path == "/kv/room"

    store_audits = drain(logger_audit)
    sensor_posts = [e for e in store_audits
                    if e.uri_path == "/kv/room" and e.text.endswith(" POST")]
    assert len(sensor_posts) == 1, store_audits
    assert sensor_posts[0].text.startswith("sensor-")

    arbiter_audits = drain(manager_audit)
    minters = {e.text.split(" ")[0] for e in arbiter_audits
               if e.uri_path == "/token"}
    assert minters == {"logger", "dashboard", "sensor"}

    for observation in (manager_audit, logger_audit, dashboard_data):
        observation.close()
    store.stop()
    arbiter.stop()
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"deployment flow took {elapsed:.1f}s"
    report("deployment flow",
           f"grant, mint, observe, post, audit all delivered in {elapsed:.2f}s")


# --- 8. brokered notification flow ------------------------------------------

def test_notification_flow(tmp_path):
    transport, store, addr = start_store(tmp_path, trace=True)
    reader, writer = store_tokens(store)
    worker_client = ZestClient(transport, host="worker")
    caller = ZestClient(transport, host="caller")
    worker = serve_notifications(worker_client, addr, "echo",
                                 lambda data: b"echo:" + data,
                                 observe_token=reader, post_token=writer)
    try:
        answer = notify_request(caller, addr, "echo", b"hello",
                                observe_token=reader, post_token=writer,
                                timeout=5.0)
        assert answer == b"echo:hello"

        # every frame crossed the store; none went client-to-worker directly
        endpoints = {event.endpoint for event in transport.trace_events}
        assert endpoints == {str(store.reply_addr), str(store.router_addr)}

        # two interleaved exchanges stay paired with their callers
        results: dict[str, bytes] = {}

        def exchange(tag: str):
            results[tag] = notify_request(
                ZestClient(transport, host=tag), addr, "echo", tag.encode(),
                observe_token=reader, post_token=writer, timeout=5.0)

        threads = [threading.Thread(target=exchange, args=(tag,))
                   for tag in ("alpha", "beta")]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join(timeout=10)
        assert results == {"alpha": b"echo:alpha", "beta": b"echo:beta"}
    finally:
        worker.stop()
        store.stop()
    report("notification flow",
           "request answered via the store only; interleaved exchanges stay paired")


# --- 9. time-series range oracle --------------------------------------------

def test_ts_range_oracle(tmp_path):
    clock = SimulatedClock(1_700_000_000_000)
    transport, store, addr = start_store(tmp_path, clock=clock)
    reader, writer = store_tokens(store)
    client = ZestClient(transport)
    rng = random.Random(0x7A11)
    points: list[tuple[int, dict]] = []
    now = 1_700_000_000_000
    for index in range(1000):
        now += rng.randrange(10)  # zero steps allowed: equal timestamps happen
        clock.set(now)
        document = {"n": index}
        response = client.post(addr, "/ts/sensor",
                               json.dumps(document).encode(),
                               ContentFormat.JSON, token=writer)
        assert response.code is Code.ACK_POST
        points.append((now, document))
    low = points[0][0] - 50
    high = points[-1][0] + 50
    for _ in range(100):
        a, b = rng.randrange(low, high), rng.randrange(low, high)
        response = client.get(addr, f"/ts/sensor/range/{a}/{b}", token=reader,
                              content_format=ContentFormat.JSON)
        assert response.code is Code.ACK_PAYLOAD
        expected = [{"timestamp": ts, "data": document}
                    for ts, document in points if a <= ts <= b]
        assert json.loads(response.payload) == expected, (a, b)
    store.stop()
    report("ts range oracle",
           "100 random windows over 1000 points match the brute-force filter")


# --- 10. throughput floor ---------------------------------------------------

def test_throughput_floor(tmp_path):
    transport, store, addr = start_store(tmp_path)
    reader, writer = store_tokens(store)
    client = ZestClient(transport)
    response = client.post(addr, "/kv/bench", b"payload", ContentFormat.TEXT,
                           token=writer)
    assert response.code is Code.ACK_POST
    token = serialize(reader)
    cycles = 3000
    started = time.perf_counter()
    for _ in range(cycles):
        response = client.get(addr, "/kv/bench", token=token)
        assert response.code is Code.ACK_PAYLOAD
    elapsed = time.perf_counter() - started
    store.stop()
    rate = cycles / elapsed
    assert rate >= 1000, f"only {rate:.0f} cycles/s"
    report("throughput floor", f"{rate:.0f} request/response cycles per second")
