"""Macaroon access tokens: mint, attenuate, verify.

A token's authority is narrowed by appending caveat strings, each folded
into a chained HMAC-SHA256 signature:

    s0   = HMAC(root_secret, location + "\\n" + identifier)
    s_i1 = HMAC(s_i, caveat_i)

Verification recomputes the chain and then requires every caveat to hold
in the presentation context, so adding a caveat can never widen authority.
Caveats use a fixed grammar with one space around the equals sign:

    target = <node name>
    method = <GET|POST|DELETE>
    path = <absolute path, optionally ending in a wildcard>

A path pattern ending in "*" matches any path sharing the prefix before
the star; anything else matches exactly.  Observation registrations reuse
the same rule so grants and observe patterns always agree.
"""

from __future__ import annotations

import hmac
import hashlib
import re
from dataclasses import dataclass

from .codec import Code

REQUEST_METHODS = ("GET", "POST", "DELETE")
CAVEAT_KINDS = ("target", "method", "path")

_CAVEAT_RE = re.compile(r"^(target|method|path) = (.*)$", re.DOTALL)
_SIGNATURE_RE = re.compile(r"^[0-9a-f]{64}$")


class TokenParseError(ValueError):
    """Serialized token bytes do not parse; servers answer UNAUTHORIZED."""


@dataclass(frozen=True)
class Macaroon:
    """Attenuable bearer token.  Value semantics; attenuation copies."""

    location: str
    identifier: str
    caveats: tuple[str, ...]
    signature: bytes


@dataclass(frozen=True)
class CaveatContext:
    """The facts a presented token is checked against."""

    method: Code
    path: str
    target: str


@dataclass(frozen=True)
class VerificationResult:
    valid: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.valid


def _chain_seed(root_secret: bytes, location: str, identifier: str) -> bytes:
    seed = (location + "\n" + identifier).encode("utf-8")
    return hmac.new(root_secret, seed, hashlib.sha256).digest()


def _chain_step(signature: bytes, caveat: str) -> bytes:
    return hmac.new(signature, caveat.encode("utf-8"), hashlib.sha256).digest()


def _reject_newlines(value: str, what: str) -> None:
    if "\n" in value:
        raise ValueError(f"{what} must not contain newlines")


def mint(root_secret: bytes, identifier: str, location: str = "") -> Macaroon:
    """Create a zero-caveat macaroon bound to the root secret."""
    if not root_secret:
        raise ValueError("root secret must be nonempty")
    _reject_newlines(identifier, "identifier")
    _reject_newlines(location, "location")
    return Macaroon(location, identifier, (), _chain_seed(root_secret, location, identifier))


def add_caveat(macaroon: Macaroon, caveat: str) -> Macaroon:
    """Return a copy with the caveat appended and the signature rechained."""
    _reject_newlines(caveat, "caveat")
    return Macaroon(
        macaroon.location,
        macaroon.identifier,
        macaroon.caveats + (caveat,),
        _chain_step(macaroon.signature, caveat),
    )


def mint_scoped(root_secret: bytes, identifier: str, location: str,
                target: str, method: str, path: str) -> Macaroon:
    """Mint with the three standard caveats in one step."""
    token = mint(root_secret, identifier, location)
    token = add_caveat(token, f"target = {target}")
    token = add_caveat(token, f"method = {method}")
    token = add_caveat(token, f"path = {path}")
    return token


def match_path(pattern: str, path: str) -> bool:
    """Wildcard path rule: a trailing "*" matches any path with that prefix."""
    if pattern.endswith("*"):
        return path.startswith(pattern[:-1])
    return path == pattern


def parse_caveat(caveat: str) -> tuple[str, str]:
    matched = _CAVEAT_RE.match(caveat)
    if matched is None:
        raise TokenParseError(f"malformed caveat {caveat!r}")
    return matched.group(1), matched.group(2)


def _caveat_holds(kind: str, value: str, context: CaveatContext) -> str | None:
    if kind == "target":
        if value != context.target:
            return "target mismatch"
    elif kind == "method":
        if value not in REQUEST_METHODS:
            return "malformed caveat"
        if value != context.method.name:
            return "method mismatch"
    else:
        if not match_path(value, context.path):
            return "path mismatch"
    return None


def verify(macaroon: Macaroon, root_secret: bytes,
           context: CaveatContext) -> VerificationResult:
    """Pure, deterministic check: chain signature plus every caveat."""
    expected = _chain_seed(root_secret, macaroon.location, macaroon.identifier)
    for caveat in macaroon.caveats:
        expected = _chain_step(expected, caveat)
    if not hmac.compare_digest(expected, macaroon.signature):
        return VerificationResult(False, "signature mismatch")
    for caveat in macaroon.caveats:
        try:
            kind, value = parse_caveat(caveat)
        except TokenParseError:
            return VerificationResult(False, "malformed caveat")
        failure = _caveat_holds(kind, value, context)
        if failure is not None:
            return VerificationResult(False, failure)
    return VerificationResult(True)


def missing_caveat_kinds(macaroon: Macaroon) -> list[str]:
    """Caveat kinds the token does not carry.

    Deployments require all three; a chain-valid token without them is
    still rejected by server policy.
    """
    present = set()
    for caveat in macaroon.caveats:
        matched = _CAVEAT_RE.match(caveat)
        if matched is not None:
            present.add(matched.group(1))
    return [kind for kind in CAVEAT_KINDS if kind not in present]


def serialize(macaroon: Macaroon) -> bytes:
    """Line-oriented text form; rides in the Message token field."""
    lines = [f"location {macaroon.location}", f"identifier {macaroon.identifier}"]
    lines.extend(f"caveat {caveat}" for caveat in macaroon.caveats)
    lines.append(f"signature {macaroon.signature.hex()}")
    return "\n".join(lines).encode("utf-8")


def deserialize(data: bytes) -> Macaroon:
    """Strict inverse of serialize; any deviation is a TokenParseError.

    Strictness matters: the signature hex must be lowercase and exactly
    64 digits so that no byte of a serialized token can change without
    either failing to parse or failing verification.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise TokenParseError("token is not valid UTF-8") from None
    lines = text.split("\n")
    if len(lines) < 3:
        raise TokenParseError("token too short")
    if not lines[0].startswith("location "):
        raise TokenParseError("missing location line")
    if not lines[1].startswith("identifier "):
        raise TokenParseError("missing identifier line")
    location = lines[0][len("location "):]
    identifier = lines[1][len("identifier "):]
    caveats = []
    for line in lines[2:-1]:
        if not line.startswith("caveat "):
            raise TokenParseError(f"unexpected line {line!r}")
        caveats.append(line[len("caveat "):])
    if not lines[-1].startswith("signature "):
        raise TokenParseError("missing signature line")
    signature_hex = lines[-1][len("signature "):]
    if not _SIGNATURE_RE.match(signature_hex):
        raise TokenParseError("signature is not 64 lowercase hex digits")
    return Macaroon(location, identifier, tuple(caveats), bytes.fromhex(signature_hex))
