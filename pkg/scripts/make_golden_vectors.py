#!/usr/bin/env python3
"""Generate the frozen wire-format fixtures under tests/fixtures/golden/.

This script deliberately does NOT import the zest package.  It assembles
every byte by hand from the documented layout so the fixtures act as an
independent oracle for the codec:

    header   = [code u8][option count u8][token length u16 BE]
    token    = raw bytes
    option   = [option code u16 BE][value length u16 BE][value]
    payload  = remaining bytes

Run once; the output is committed.  Re-running must be byte-identical.
"""

import os

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "golden")


def u8(v):
    return v.to_bytes(1, "big")


def u16(v):
    return v.to_bytes(2, "big")


def u32(v):
    return v.to_bytes(4, "big")


def opt(code, value):
    return u16(code) + u16(len(value)) + value


def message(code, token=b"", options=(), payload=b""):
    body = b"".join(opt(c, v) for c, v in options)
    return u8(code) + u8(len(options)) + u16(len(token)) + token + body + payload


# Option numbers, copied by hand from the option table.
URI_HOST = 3
OBSERVE = 6
URI_PATH = 11
CONTENT_FORMAT = 12
MAX_AGE = 14
PUBLIC_KEY = 2048

VECTORS = [
    # --- one fixture per request/response code ---
    (
        "code_01_get",
        "GET /kv/foo from hostA, json",
        message(1, options=[
            (URI_PATH, b"/kv/foo"),
            (URI_HOST, b"hostA"),
            (CONTENT_FORMAT, u32(50)),
        ]),
    ),
    (
        "code_02_post",
        "POST /kv/foo/bar from hostA, json payload",
        message(2, options=[
            (URI_PATH, b"/kv/foo/bar"),
            (URI_HOST, b"hostA"),
            (CONTENT_FORMAT, u32(50)),
        ], payload=b'{"room": "lounge", "value": 1}'),
    ),
    (
        "code_04_delete",
        "DELETE /kv/foo from hostA, json, no payload",
        message(4, options=[
            (URI_PATH, b"/kv/foo"),
            (URI_HOST, b"hostA"),
            (CONTENT_FORMAT, u32(50)),
        ]),
    ),
    ("code_65_ack_post", "bare POST acknowledgement", message(65)),
    ("code_66_ack_delete", "bare DELETE acknowledgement (header only)", message(66)),
    (
        "code_69_ack_payload",
        "GET acknowledgement with json payload",
        message(69, options=[(CONTENT_FORMAT, u32(50))], payload=b'{"value": 1}'),
    ),
    ("code_128_bad_request", "bad request", message(128)),
    ("code_129_unauthorised", "unauthorised", message(129)),
    ("code_134_not_acceptable", "not acceptable", message(134)),
    ("code_141_too_large", "request entity too large", message(141)),
    ("code_143_unsupported_format", "unsupported content format", message(143)),
    ("code_160_internal_error", "internal server error", message(160)),
    ("code_163_unavailable", "service unavailable", message(163)),
    # --- option permutations ---
    (
        "perm_observe_data_max_age",
        "GET observe=data with max_age=60 and a token",
        message(1, token=b"example-token-bytes", options=[
            (URI_PATH, b"/kv/foo/bar"),
            (URI_HOST, b"store1"),
            (CONTENT_FORMAT, u32(50)),
            (OBSERVE, b"data"),
            (MAX_AGE, u32(60)),
        ]),
    ),
    (
        "perm_observe_audit_no_expiry",
        "GET observe=audit with max_age=0 (never expires)",
        message(1, options=[
            (URI_PATH, b"*"),
            (URI_HOST, b"store1"),
            (CONTENT_FORMAT, u32(0)),
            (OBSERVE, b"audit"),
            (MAX_AGE, u32(0)),
        ]),
    ),
    (
        "perm_observe_response_public_key",
        "observe acknowledgement: public_key option plus UUID payload",
        message(69, options=[
            (CONTENT_FORMAT, u32(0)),
            (PUBLIC_KEY, b"a" * 64),
        ], payload=b"60e065ab-d1dd-4b1c-9d24-72e5ea76e75b"),
    ),
    (
        "perm_duplicate_option",
        "duplicate content_format options are preserved in order",
        message(69, options=[
            (CONTENT_FORMAT, u32(0)),
            (CONTENT_FORMAT, u32(50)),
        ], payload=b"x"),
    ),
    (
        "perm_empty_option_value",
        "option with a zero-length value",
        message(1, options=[
            (URI_PATH, b""),
            (URI_HOST, b"h"),
            (CONTENT_FORMAT, u32(0)),
        ]),
    ),
    (
        "perm_binary_payload",
        "POST with non-UTF8 binary payload and binary content format",
        message(2, options=[
            (URI_PATH, b"/kv/blob"),
            (URI_HOST, b"hostA"),
            (CONTENT_FORMAT, u32(42)),
        ], payload=bytes(range(256))),
    ),
]


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    for name, describe, raw in VECTORS:
        path = os.path.join(OUT_DIR, name + ".hex")
        with open(path, "w") as fh:
            fh.write("# " + describe + "\n")
            fh.write(raw.hex() + "\n")
        print(f"{name}: {len(raw)} bytes")
    print(f"{len(VECTORS)} fixtures written to {os.path.normpath(OUT_DIR)}")


if __name__ == "__main__":
    main()
