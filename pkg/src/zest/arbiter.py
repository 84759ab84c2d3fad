"""Arbiter node: records grants, mints scoped tokens.

The arbiter is a plain Node with three extra routes.  POST /token is
authenticated by the transport credential (the client's public key,
registered in config and mapped to a name); every other path goes through
the usual macaroon gate, so only holders of arbiter-scoped tokens can
touch /grant or read the catalogue.

At startup the arbiter mints the manager's bootstrap token from its own
secret, scoped to ``target = <arbiter>, method = POST, path = *``.  That
single token lets the manager post grants and mint itself tokens for the
remaining verbs (the manager is pre-granted all three methods on the
arbiter), so no out-of-band provisioning beyond one file is needed.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass

from .codec import Code, ContentFormat, Message
from .node import (
    Authorization,
    CatalogueItem,
    MacaroonPolicy,
    Node,
    RequestContext,
    ack_delete,
    ack_payload,
    ack_post,
    bare,
)
from .tokens import Macaroon, mint_scoped, serialize
from .transport import Peer

logger = logging.getLogger(__name__)

TOKEN_PATH = "/token"
GRANT_PATH = "/grant"
METHOD_NAMES = ("GET", "POST", "DELETE")

_REL_PREFIX = "urn:X-zest:rels:"


@dataclass(frozen=True)
class PermissionGrant:
    """One row of the minting policy.

    may_observe is recorded and reported but not separately enforced: an
    observe registration is a GET, so the method/path pair already gates it.
    """

    grantee: str
    target: str
    method: str
    path: str
    may_observe: bool = True

    def key(self) -> tuple[str, str, str, str]:
        return (self.grantee, self.target, self.method, self.path)


def pattern_covers(outer: str, inner: str) -> bool:
    """True when every path matched by inner is also matched by outer."""
    if outer.endswith("*"):
        prefix = outer[:-1]
        if inner.endswith("*"):
            return inner[:-1].startswith(prefix)
        return inner.startswith(prefix)
    return inner == outer


class ArbiterPolicy:
    """Credential gate on /token, macaroon gate everywhere else."""

    def __init__(self, node_name: str, root_secret: bytes,
                 credential_index: dict[str, str]):
        self._macaroons = MacaroonPolicy(node_name, root_secret)
        self._credentials = credential_index

    def authorize(self, message: Message, method: Code, path: str,
                  peer: Peer) -> Authorization:
        if method is Code.POST and path == TOKEN_PATH:
            name = None
            if peer.credential is not None:
                name = self._credentials.get(peer.credential)
            if name is None:
                return Authorization(False, "unknown client credential")
            return Authorization(True, None, name)
        return self._macaroons.authorize(message, method, path, peer)


class Arbiter(Node):
    def __init__(self, name, root_secret, transport, reply_addr, router_addr, *,
                 keys=None, clock=None, clients: dict[str, str] | None = None,
                 target_secrets: dict[str, bytes] | None = None,
                 manager_name: str = "manager", sweep_interval=None):
        super().__init__(name, root_secret, transport, reply_addr, router_addr,
                         keys=keys, clock=clock, sweep_interval=sweep_interval)
        self._grant_lock = threading.Lock()
        self._grants: dict[tuple, PermissionGrant] = {}
        self._credential_index: dict[str, str] = {}
        self._secrets: dict[str, bytes] = {name: root_secret}
        if target_secrets:
            for target, secret in target_secrets.items():
                self._secrets[target] = secret
        if clients:
            for client_name, credential in clients.items():
                self._credential_index[credential] = client_name
        self.token_policy = ArbiterPolicy(name, root_secret, self._credential_index)
        self.catalogue_provider = self._catalogue_items
        self.catalogue_description = f"{name} arbiter"
        self.add_route(Code.POST, TOKEN_PATH, self._mint_token)
        self.add_route(Code.POST, GRANT_PATH, self._upsert_grant)
        self.add_route(Code.DELETE, GRANT_PATH, self._delete_grant)
        self.manager_name = manager_name
        for method in METHOD_NAMES:
            self.add_grant(PermissionGrant(manager_name, name, method, "*"))
        self.manager_token: Macaroon = mint_scoped(
            root_secret, f"{manager_name}-bootstrap", name, name, "POST", "*")

    # --- registration (config/tests) ---

    def register_client(self, client_name: str, credential: str) -> None:
        self._credential_index[credential] = client_name

    def register_target(self, target: str, secret: bytes) -> None:
        self._secrets[target] = secret

    def add_grant(self, grant: PermissionGrant) -> None:
        with self._grant_lock:
            self._grants[grant.key()] = grant

    def remove_grant(self, grant: PermissionGrant) -> None:
        with self._grant_lock:
            self._grants.pop(grant.key(), None)

    def grants(self) -> list[PermissionGrant]:
        with self._grant_lock:
            return list(self._grants.values())

    # --- handlers ---

    @staticmethod
    def _parse_grant(payload: bytes) -> PermissionGrant | None:
        try:
            body = json.loads(payload)
            grant = PermissionGrant(
                body["grantee"], body["target"], body["method"], body["path"],
                bool(body.get("may_observe", True)),
            )
        except (ValueError, KeyError, TypeError):
            return None
        if not all(isinstance(f, str) for f in grant.key()):
            return None
        if grant.method not in METHOD_NAMES:
            return None
        return grant

    def _upsert_grant(self, message: Message, context: RequestContext) -> Message:
        grant = self._parse_grant(message.payload)
        if grant is None:
            return bare(Code.BAD_REQUEST)
        self.add_grant(grant)
        logger.info("grant %s by %s", grant, context.token_identifier)
        return ack_post()

    def _delete_grant(self, message: Message, context: RequestContext) -> Message:
        grant = self._parse_grant(message.payload)
        if grant is None:
            return bare(Code.BAD_REQUEST)
        self.remove_grant(grant)
        return ack_delete()

    def _mint_token(self, message: Message, context: RequestContext) -> Message:
        client = context.token_identifier
        try:
            body = json.loads(message.payload)
            target, method, path = body["target"], body["method"], body["path"]
        except (ValueError, KeyError, TypeError):
            return bare(Code.BAD_REQUEST)
        if not all(isinstance(f, str) for f in (target, method, path)):
            return bare(Code.BAD_REQUEST)
        if method not in METHOD_NAMES:
            return bare(Code.BAD_REQUEST)
        secret = self._secrets.get(target)
        if secret is None:
            return bare(Code.NOT_ACCEPTABLE)
        if not self._covered(client, target, method, path):
            logger.info("mint refused: no grant covers (%s, %s, %s, %s)",
                        client, target, method, path)
            return bare(Code.UNAUTHORIZED)
        identifier = f"{client}-{uuid.uuid4().hex[:8]}"
        macaroon = mint_scoped(secret, identifier, target, target, method, path)
        return ack_payload(serialize(macaroon), ContentFormat.TEXT)

    def _covered(self, client: str, target: str, method: str, path: str) -> bool:
        with self._grant_lock:
            return any(
                g.grantee == client and g.target == target and g.method == method
                and pattern_covers(g.path, path)
                for g in self._grants.values()
            )

    # --- catalogue ---

    def _catalogue_items(self) -> list[CatalogueItem]:
        items = []
        for index, grant in enumerate(sorted(self.grants(), key=PermissionGrant.key)):
            items.append(CatalogueItem(
                f"{GRANT_PATH}/{index}",
                (
                    (_REL_PREFIX + "grantee", grant.grantee),
                    (_REL_PREFIX + "target", grant.target),
                    (_REL_PREFIX + "method", grant.method),
                    (_REL_PREFIX + "path", grant.path),
                ),
            ))
        return items
