"""Command-line client and node launcher.

    zest get    zest://host:port/path --token t --format json --server-key HEX
    zest post   zest://host:port/path --payload @file ...
    zest delete zest://host:port/path ...
    zest get    ... --observe data --max-age 60     (streams meta lines)
    zest serve  store|arbiter CONFIG

Exit status: 0 success, 2 usage error, 3 protocol rejection,
4 transport failure, 1 startup/config error.
"""

from __future__ import annotations

import argparse
import secrets as secrets_module
import sys
import time
from pathlib import Path
from urllib.parse import urlsplit

from .arbiter import Arbiter
from .client import RequestRejected, ZestClient
from .codec import Code, ContentFormat, SUCCESS_CODES
from .config import ConfigError, load_config, prefixed, resolve_path
from .node import DEFAULT_MAX_AGE_SECONDS
from .store import Store
from .tokens import serialize
from .transport import (
    BindError,
    DEFAULT_REPLY_PORT,
    DEFAULT_ROUTER_PORT,
    KeyPair,
    TransportError,
    TransportTimeout,
    tcp_address,
)
from .transport.zeromq import ZmqTransport, generate_keypair, public_key_hex

EXIT_OK = 0
EXIT_STARTUP = 1
EXIT_USAGE = 2
EXIT_REJECTED = 3
EXIT_TRANSPORT = 4


class UsageError(Exception):
    pass


def parse_uri(uri: str):
    """zest://host:port/path -> (reply address, path)."""
    parts = urlsplit(uri)
    if parts.scheme != "zest":
        raise UsageError(f"uri must start with zest://, got {uri!r}")
    try:
        host, port = parts.hostname, parts.port
    except ValueError as exc:
        raise UsageError(f"bad uri {uri!r}: {exc}") from None
    if not host or port is None:
        raise UsageError(f"uri must name host and port: {uri!r}")
    if not parts.path:
        raise UsageError(f"uri must include a path: {uri!r}")
    return tcp_address(host, port), parts.path


def _read_payload(value: str) -> bytes:
    if value.startswith("@"):
        return Path(value[1:]).read_bytes()
    return value.encode("utf-8")


def _read_token(path: str | None) -> bytes:
    if path is None:
        return b""
    return Path(path).read_bytes().strip()


def _client(args) -> ZestClient:
    credential = None
    if getattr(args, "client_key", None):
        secret_hex = Path(args.client_key).read_text().strip()
        credential = KeyPair(public_key_hex(secret_hex), secret_hex)
    return ZestClient(ZmqTransport(), host="cli", timeout=args.timeout,
                      credential=credential)


def _print_response(response) -> int:
    print(f"{int(response.code)} {response.code.label}", flush=True)
    if response.payload:
        sys.stdout.buffer.write(response.payload + b"\n")
        sys.stdout.buffer.flush()
    return EXIT_OK if response.code in SUCCESS_CODES else EXIT_REJECTED


def cmd_request(args) -> int:
    addr, path = parse_uri(args.uri)
    client = _client(args)
    token = _read_token(args.token)
    content_format = ContentFormat.from_name(args.format)
    if args.command == "get" and args.observe:
        return _run_observe(client, addr, path, token, content_format, args)
    if args.command == "get":
        response = client.get(addr, path, token=token,
                              content_format=content_format,
                              server_key=args.server_key)
    elif args.command == "post":
        payload = _read_payload(args.payload) if args.payload is not None else b""
        response = client.post(addr, path, payload, content_format,
                               token=token, server_key=args.server_key)
    else:
        response = client.delete(addr, path, token=token,
                                 content_format=content_format,
                                 server_key=args.server_key)
    return _print_response(response)


def _run_observe(client, addr, path, token, content_format, args) -> int:
    observation = client.observe(addr, path, args.observe, token=token,
                                 max_age=args.max_age,
                                 content_format=content_format,
                                 server_key=args.server_key)
    max_age = args.max_age if args.max_age is not None else DEFAULT_MAX_AGE_SECONDS
    deadline = time.monotonic() + max_age if max_age else None
    try:
        while True:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                return EXIT_OK
            wait = 0.25 if remaining is None else min(0.25, remaining)
            try:
                line = observation.next_line(wait)
            except TransportTimeout:
                continue
            print(line, flush=True)
    except KeyboardInterrupt:
        return EXIT_OK
    finally:
        observation.close()


def _load_or_create_secret(path: Path) -> bytes:
    if path.exists():
        return bytes.fromhex(path.read_text().strip())
    secret = secrets_module.token_bytes(32)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(secret.hex() + "\n")
    return secret


def _load_or_create_keypair(path: Path) -> KeyPair:
    if path.exists():
        secret_hex = path.read_text().strip()
        return KeyPair(public_key_hex(secret_hex), secret_hex)
    keys = generate_keypair()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(keys.secret_hex + "\n")
    return keys


def _parse_secret(config_path, value: str) -> bytes:
    """A target secret entry is either inline hex or a path to a hex file."""
    try:
        return bytes.fromhex(value)
    except ValueError:
        return bytes.fromhex(resolve_path(config_path, value).read_text().strip())


def cmd_serve(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    name = config.get("name", args.kind)
    reply_port = int(config.get("reply_port", DEFAULT_REPLY_PORT))
    router_port = int(config.get("router_port", DEFAULT_ROUTER_PORT))
    data_dir = resolve_path(args.config, config.get("data_dir", "data"))
    data_dir.mkdir(parents=True, exist_ok=True)
    secret_file = resolve_path(args.config, config.get("secret_file",
                                                       str(data_dir / "secret.hex")))
    key_file = resolve_path(args.config, config.get("key_file",
                                                    str(data_dir / "curve.key")))
    try:
        secret = _load_or_create_secret(secret_file)
        keys = _load_or_create_keypair(key_file)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    transport = ZmqTransport()
    reply_addr = tcp_address("0.0.0.0", reply_port)
    router_addr = tcp_address("0.0.0.0", router_port)
    if args.kind == "store":
        node = Store(name, secret, transport, reply_addr, router_addr, keys=keys,
                     journal_path=data_dir / "journal.bin",
                     audit_path=data_dir / "audit.log", sweep_interval=1.0)
    else:
        try:
            targets = {t: _parse_secret(args.config, v)
                       for t, v in prefixed(config, "target.").items()}
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_STARTUP
        node = Arbiter(name, secret, transport, reply_addr, router_addr, keys=keys,
                       clients=prefixed(config, "client."),
                       target_secrets=targets, sweep_interval=1.0)
        token_path = data_dir / "manager.token"
        if not token_path.exists():
            token_path.write_bytes(serialize(node.manager_token))
        print(f"manager token: {token_path}")
    try:
        node.start()
    except (BindError, TransportError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    print(f"{name} serving reply={node.reply_addr} router={node.router_addr}")
    print(f"public key: {keys.public_hex}")
    sys.stdout.flush()
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zest",
                                     description="Zest protocol client and nodes")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_request(name: str, help_text: str):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("uri", help="zest://host:port/path")
        sub.add_argument("--token", metavar="FILE", help="serialized token file")
        sub.add_argument("--format", default="text",
                         choices=["text", "binary", "json"])
        sub.add_argument("--server-key", metavar="HEXKEY",
                         help="server public key (hex)")
        sub.add_argument("--client-key", metavar="FILE",
                         help="client secret key file (hex), identifies "
                              "this client to an arbiter")
        sub.add_argument("--timeout", type=float, default=5.0)
        sub.set_defaults(func=cmd_request)
        return sub

    get = add_request("get", "fetch a resource or observe a path")
    get.add_argument("--observe", metavar="MODE",
                     choices=["data", "audit", "notify"],
                     help="stream events instead of fetching")
    get.add_argument("--max-age", type=int, metavar="SECONDS",
                     help="observation lifetime (0 = forever)")
    post = add_request("post", "write a resource")
    post.add_argument("--payload", metavar="STRING|@FILE",
                      help="payload text, or @FILE for raw bytes")
    add_request("delete", "remove a resource")

    serve = commands.add_parser("serve", help="run a node")
    serve.add_argument("kind", choices=["store", "arbiter"])
    serve.add_argument("config", help="key=value config file")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RequestRejected as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_REJECTED
    except TransportTimeout as exc:
        print(f"transport timeout: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARTUP


if __name__ == "__main__":
    sys.exit(main())
