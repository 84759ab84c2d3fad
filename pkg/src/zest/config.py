"""Flat key=value config files.

One "key = value" per line; blank lines and #-comments are skipped.
Dotted prefixes group related entries, e.g. an arbiter config maps target
secrets and client credentials as

    target.store1 = <hex root secret file or literal>
    client.logger = <hex curve public key>

Relative file paths inside a config resolve against the config file's
directory.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(Exception):
    pass


def parse_config(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {number}: expected key = value, got {raw!r}")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {number}: empty key")
        entries[key] = value.strip()
    return entries


def load_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def prefixed(config: dict[str, str], prefix: str) -> dict[str, str]:
    """Entries under a dotted prefix, with the prefix stripped."""
    return {
        key[len(prefix):]: value
        for key, value in config.items()
        if key.startswith(prefix) and len(key) > len(prefix)
    }


def resolve_path(config_path, value: str) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = Path(config_path).resolve().parent / path
    return path
