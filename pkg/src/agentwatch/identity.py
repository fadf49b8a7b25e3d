"""Agent identity tokens: persistent identifiers plus signed metadata.

A token binds an agent identifier to accountability metadata (who is
responsible), behavior metadata (what the agent is declared to do), and an
optional delegation chain (which parent agents spawned it and with what
permissions). Tokens carry a detached Ed25519 signature over the canonical
encoding, so any holder of the issuer's public key can verify integrity
without contacting anything. Lifecycle state lives in the registry, not
here; ``status_hint`` on a token is advisory only.

All types are immutable values and all operations are pure functions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .canonical import (
    b64url_decode,
    b64url_encode,
    canonical_json_bytes,
    format_rfc3339,
    parse_rfc3339,
)


class IdentityError(Exception):
    """Base class for identity-layer errors."""


class InvalidIdentifier(IdentityError):
    pass


class BrokenChain(IdentityError):
    pass


class ExpandedPermissions(IdentityError):
    pass


class MalformedEncoding(IdentityError):
    """Raised when canonical bytes cannot be decoded; carries a byte offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


_IDENTIFIER_RE = re.compile(r"^[A-Za-z0-9._:-]{8,128}$")


def validate_identifier(value: str) -> str:
    """Check an agent identifier: 8-128 chars from ``[A-Za-z0-9._:-]``.

    Equality between identifiers is exact byte equality; no normalization
    is ever applied.
    """
    if not isinstance(value, str) or not _IDENTIFIER_RE.match(value):
        raise InvalidIdentifier(f"bad agent identifier: {value!r}")
    return value


class Action(str, Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"
    TRANSACT = "transact"


@dataclass(frozen=True, order=True)
class Permission:
    """A declared capability: glob resource pattern plus an action.

    Pattern matching is case-sensitive literal text where ``*`` matches any
    run of characters (including none). No other metacharacters.
    """

    resource_pattern: str
    action: Action

    def __post_init__(self):
        if not self.resource_pattern:
            raise ValueError("permission resource pattern must be non-empty")

    def matches(self, resource: str, action: Action) -> bool:
        if action != self.action:
            return False
        parts = [re.escape(p) for p in self.resource_pattern.split("*")]
        return re.fullmatch(".*".join(parts), resource) is not None


def permits(permissions: Iterable[Permission], resource: str, action: Action) -> bool:
    """True when any permission in the set covers (resource, action)."""
    return any(p.matches(resource, action) for p in permissions)


@dataclass(frozen=True)
class AccountabilityMeta:
    """Who is answerable for the agent. The sponsor is the minimum anchor."""

    sponsor: str
    developer: str = ""
    authorizing_principal: str = ""

    def __post_init__(self):
        if not self.sponsor:
            raise ValueError("sponsor must be non-empty")


@dataclass(frozen=True)
class BehaviorMeta:
    """Declared behavior: model, permissions, tools, optional rate limit.

    An empty permission set means "no declared scope" — receiving services
    cannot scope-check it — which is distinct from an unlimited grant.
    """

    model_info: str = ""
    declared_permissions: frozenset[Permission] = frozenset()
    declared_tools: frozenset[str] = frozenset()
    declared_rate_limit: Optional[float] = None


@dataclass(frozen=True)
class DelegationLink:
    """One signed parent-to-child hop in a delegation chain."""

    parent_id: str
    child_id: str
    granted_permissions: frozenset[Permission]
    parent_signature: bytes

    def __post_init__(self):
        if self.parent_id == self.child_id:
            raise ValueError("delegation link cannot be reflexive")


class TokenStatus(str, Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"
    REVOKED = "revoked"


@dataclass(frozen=True)
class AgentToken:
    """Signed identity credential. ``signature`` is detached Ed25519 over the
    canonical encoding with the ``sig`` field omitted."""

    id: str
    status_hint: TokenStatus
    accountability: AccountabilityMeta
    behavior: BehaviorMeta
    delegation_chain: tuple[DelegationLink, ...]
    issued_at: datetime
    issuer_key_id: str
    signature: bytes


class VerificationOutcome(Enum):
    SIGNATURE_VALID = "signature_valid"
    SIGNATURE_MISMATCH = "signature_mismatch"
    UNKNOWN_ISSUER = "unknown_issuer"


class ChainStatus(Enum):
    UNBROKEN = "unbroken"
    BROKEN_AT = "broken_at"
    EXPANDED_AT = "expanded_at"
    BAD_LINK_SIGNATURE_AT = "bad_link_signature_at"


@dataclass(frozen=True)
class ChainVerdict:
    status: ChainStatus
    index: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.status is ChainStatus.UNBROKEN


UNBROKEN = ChainVerdict(ChainStatus.UNBROKEN)


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------

class SigningKey:
    """Ed25519 key pair with a directory identifier.

    Issuers sign tokens; agents sign the delegation links they grant.
    """

    def __init__(self, key_id: str, private: Ed25519PrivateKey):
        self.key_id = key_id
        self._private = private

    @classmethod
    def generate(cls, key_id: str) -> "SigningKey":
        return cls(key_id, Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, key_id: str, seed: bytes) -> "SigningKey":
        if len(seed) != 32:
            raise ValueError("Ed25519 seed must be exactly 32 bytes")
        return cls(key_id, Ed25519PrivateKey.from_private_bytes(seed))

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    @property
    def public_bytes(self) -> bytes:
        return self._private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Raw Ed25519 verification; False on any mismatch or malformed input."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

def _permissions_to_wire(permissions: frozenset[Permission]) -> list[dict]:
    return [
        {"action": p.action.value, "resource_pattern": p.resource_pattern}
        for p in sorted(permissions)
    ]


def _permissions_from_wire(items, where: str) -> frozenset[Permission]:
    if not isinstance(items, list):
        raise MalformedEncoding(f"{where}: expected list of permissions")
    perms = []
    for item in items:
        if (
            not isinstance(item, dict)
            or set(item) != {"action", "resource_pattern"}
            or not isinstance(item.get("resource_pattern"), str)
        ):
            raise MalformedEncoding(f"{where}: bad permission entry")
        try:
            perms.append(Permission(item["resource_pattern"], Action(item["action"])))
        except ValueError as exc:
            raise MalformedEncoding(f"{where}: {exc}") from exc
    return frozenset(perms)


def link_signing_bytes(parent_id: str, child_id: str,
                       granted: frozenset[Permission]) -> bytes:
    """The exact bytes a parent signs when granting a delegation link."""
    return canonical_json_bytes({
        "child_id": child_id,
        "granted_permissions": _permissions_to_wire(granted),
        "parent_id": parent_id,
    })


def _token_wire_dict(token: AgentToken, include_sig: bool) -> dict:
    wire = {
        "accountability": {
            "authorizing_principal": token.accountability.authorizing_principal,
            "developer": token.accountability.developer,
            "sponsor": token.accountability.sponsor,
        },
        "behavior": {
            "declared_permissions": _permissions_to_wire(
                token.behavior.declared_permissions),
            "declared_rate_limit": token.behavior.declared_rate_limit,
            "declared_tools": sorted(token.behavior.declared_tools),
            "model_info": token.behavior.model_info,
        },
        "delegation_chain": [
            {
                "child_id": link.child_id,
                "granted_permissions": _permissions_to_wire(link.granted_permissions),
                "parent_id": link.parent_id,
                "parent_sig": b64url_encode(link.parent_signature),
            }
            for link in token.delegation_chain
        ],
        "id": token.id,
        "issued_at": format_rfc3339(token.issued_at),
        "issuer_key_id": token.issuer_key_id,
        "status_hint": token.status_hint.value,
    }
    if include_sig:
        wire["sig"] = b64url_encode(token.signature)
    return wire


def token_signing_bytes(token: AgentToken) -> bytes:
    """Canonical encoding with ``sig`` omitted — the signature input."""
    return canonical_json_bytes(_token_wire_dict(token, include_sig=False))


def canonical_encode(token: AgentToken) -> bytes:
    """Deterministic wire bytes; ``canonical_decode`` is its exact inverse."""
    return canonical_json_bytes(_token_wire_dict(token, include_sig=True))


_TOKEN_FIELDS = {
    "accountability", "behavior", "delegation_chain", "id",
    "issued_at", "issuer_key_id", "sig", "status_hint",
}


def _require(cond: bool, message: str):
    if not cond:
        raise MalformedEncoding(message)


def canonical_decode(data: bytes) -> AgentToken:
    """Parse canonical token bytes back into an ``AgentToken``.

    Raises ``MalformedEncoding`` (with the parser's byte offset where one
    exists) on anything that is not a structurally valid token document.
    """
    import json

    try:
        obj = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise MalformedEncoding("not valid UTF-8", exc.start) from exc
    except json.JSONDecodeError as exc:
        raise MalformedEncoding(f"bad JSON: {exc.msg}", exc.pos) from exc

    _require(isinstance(obj, dict), "top level must be an object")
    _require(set(obj) == _TOKEN_FIELDS,
             f"token fields must be exactly {sorted(_TOKEN_FIELDS)}")

    acc = obj["accountability"]
    _require(isinstance(acc, dict) and set(acc) ==
             {"authorizing_principal", "developer", "sponsor"},
             "bad accountability block")
    _require(all(isinstance(acc[k], str) for k in acc), "accountability values must be strings")

    beh = obj["behavior"]
    _require(isinstance(beh, dict) and set(beh) ==
             {"declared_permissions", "declared_rate_limit", "declared_tools", "model_info"},
             "bad behavior block")
    _require(isinstance(beh["model_info"], str), "model_info must be a string")
    _require(beh["declared_rate_limit"] is None
             or isinstance(beh["declared_rate_limit"], (int, float)),
             "declared_rate_limit must be a number or null")
    _require(isinstance(beh["declared_tools"], list)
             and all(isinstance(t, str) for t in beh["declared_tools"]),
             "declared_tools must be a list of strings")

    chain_items = obj["delegation_chain"]
    _require(isinstance(chain_items, list), "delegation_chain must be a list")
    links = []
    for i, item in enumerate(chain_items):
        _require(isinstance(item, dict) and set(item) ==
                 {"child_id", "granted_permissions", "parent_id", "parent_sig"},
                 f"bad delegation link at index {i}")
        _require(isinstance(item["parent_id"], str) and isinstance(item["child_id"], str)
                 and isinstance(item["parent_sig"], str),
                 f"bad delegation link fields at index {i}")
        try:
            links.append(DelegationLink(
                parent_id=item["parent_id"],
                child_id=item["child_id"],
                granted_permissions=_permissions_from_wire(
                    item["granted_permissions"], f"link {i}"),
                parent_signature=b64url_decode(item["parent_sig"]),
            ))
        except ValueError as exc:
            raise MalformedEncoding(f"link {i}: {exc}") from exc

    for key in ("id", "issuer_key_id", "sig", "status_hint", "issued_at"):
        _require(isinstance(obj[key], str), f"{key} must be a string")

    try:
        token = AgentToken(
            id=validate_identifier(obj["id"]),
            status_hint=TokenStatus(obj["status_hint"]),
            accountability=AccountabilityMeta(
                sponsor=acc["sponsor"],
                developer=acc["developer"],
                authorizing_principal=acc["authorizing_principal"],
            ),
            behavior=BehaviorMeta(
                model_info=beh["model_info"],
                declared_permissions=_permissions_from_wire(
                    beh["declared_permissions"], "behavior"),
                declared_tools=frozenset(beh["declared_tools"]),
                declared_rate_limit=(None if beh["declared_rate_limit"] is None
                                     else float(beh["declared_rate_limit"])),
            ),
            delegation_chain=tuple(links),
            issued_at=parse_rfc3339(obj["issued_at"]),
            issuer_key_id=obj["issuer_key_id"],
            signature=b64url_decode(obj["sig"]),
        )
    except (InvalidIdentifier, ValueError) as exc:
        raise MalformedEncoding(str(exc)) from exc
    return token


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def sign_delegation_link(parent_token: AgentToken, child_id: str,
                         granted: frozenset[Permission],
                         parent_key: SigningKey) -> DelegationLink:
    """Create a link granting ``child_id`` a subset of the parent's permissions.

    Non-expansion is enforced at creation time: the grant must be a subset of
    the parent token's declared permissions.
    """
    validate_identifier(child_id)
    if child_id == parent_token.id:
        raise BrokenChain("delegation link cannot be reflexive")
    if not granted <= parent_token.behavior.declared_permissions:
        extra = granted - parent_token.behavior.declared_permissions
        raise ExpandedPermissions(
            f"grant to {child_id} exceeds parent permissions: {sorted(extra)}")
    sig = parent_key.sign(link_signing_bytes(parent_token.id, child_id, granted))
    return DelegationLink(parent_token.id, child_id, frozenset(granted), sig)


def _check_chain_shape(agent_id: str, chain: tuple[DelegationLink, ...]):
    """Structural checks mint can make without resolving parent tokens."""
    if not chain:
        return
    for i in range(1, len(chain)):
        if chain[i].parent_id != chain[i - 1].child_id:
            raise BrokenChain(
                f"link {i} parent {chain[i].parent_id!r} does not continue "
                f"link {i - 1} child {chain[i - 1].child_id!r}")
        if not chain[i].granted_permissions <= chain[i - 1].granted_permissions:
            raise ExpandedPermissions(f"link {i} grants more than link {i - 1}")
    if chain[-1].child_id != agent_id:
        raise BrokenChain(
            f"chain terminates at {chain[-1].child_id!r}, not {agent_id!r}")


def mint_token(agent_id: str, accountability: AccountabilityMeta,
               behavior: BehaviorMeta, chain: Iterable[DelegationLink],
               issuer_key: SigningKey, at: datetime) -> AgentToken:
    """Issue a signed token. ``at`` is the caller-supplied issue instant.

    A delegated token may not declare permissions beyond its final grant.
    """
    validate_identifier(agent_id)
    chain = tuple(chain)
    _check_chain_shape(agent_id, chain)
    if chain and not behavior.declared_permissions <= chain[-1].granted_permissions:
        raise ExpandedPermissions(
            "token declares permissions beyond its delegated grant")

    unsigned = AgentToken(
        id=agent_id,
        status_hint=TokenStatus.ACTIVE,
        accountability=accountability,
        behavior=behavior,
        delegation_chain=chain,
        issued_at=at,
        issuer_key_id=issuer_key.key_id,
        signature=b"",
    )
    return replace(unsigned, signature=issuer_key.sign(token_signing_bytes(unsigned)))


def verify_token(token: AgentToken,
                 trusted_keys: Mapping[str, bytes]) -> VerificationOutcome:
    """Pure signature check against a key directory. No registry consulted."""
    public = trusted_keys.get(token.issuer_key_id)
    if public is None:
        return VerificationOutcome.UNKNOWN_ISSUER
    if verify_signature(public, token_signing_bytes(token), token.signature):
        return VerificationOutcome.SIGNATURE_VALID
    return VerificationOutcome.SIGNATURE_MISMATCH


def validate_delegation_chain(
    token: AgentToken,
    parent_tokens: Mapping[str, AgentToken],
    agent_keys: Mapping[str, bytes],
) -> ChainVerdict:
    """Walk the chain root-first and return the first defect, if any.

    Checks per link, in order: adjacency (including termination at the
    token's own id), the parent's signature over the link, and that the
    grant does not expand the parent's effective permissions. The root
    parent's effective permissions come from its token via
    ``parent_tokens``; every later parent's are the permissions it was
    itself granted. ``agent_keys`` maps agent ids to the Ed25519 public
    keys their delegation links are signed with.
    """
    chain = token.delegation_chain
    if not chain:
        return UNBROKEN

    for i, link in enumerate(chain):
        if link.parent_id == link.child_id:
            return ChainVerdict(ChainStatus.BROKEN_AT, i)
        if i > 0 and link.parent_id != chain[i - 1].child_id:
            return ChainVerdict(ChainStatus.BROKEN_AT, i)
        if i == len(chain) - 1 and link.child_id != token.id:
            return ChainVerdict(ChainStatus.BROKEN_AT, i)

        key = agent_keys.get(link.parent_id)
        if key is None or not verify_signature(
            key,
            link_signing_bytes(link.parent_id, link.child_id,
                               link.granted_permissions),
            link.parent_signature,
        ):
            return ChainVerdict(ChainStatus.BAD_LINK_SIGNATURE_AT, i)

        if i == 0:
            root = parent_tokens.get(link.parent_id)
            if root is None:
                return ChainVerdict(ChainStatus.BROKEN_AT, 0)
            effective = root.behavior.declared_permissions
        else:
            effective = chain[i - 1].granted_permissions
        if not link.granted_permissions <= effective:
            return ChainVerdict(ChainStatus.EXPANDED_AT, i)

    return UNBROKEN


def delegation_descendants(root_id: str,
                           tokens: Iterable[AgentToken]) -> set[str]:
    """Ids reachable from ``root_id`` through delegation links in ``tokens``."""
    children: dict[str, set[str]] = {}
    for token in tokens:
        for link in token.delegation_chain:
            children.setdefault(link.parent_id, set()).add(link.child_id)
    seen: set[str] = set()
    frontier = [root_id]
    while frontier:
        current = frontier.pop()
        for child in children.get(current, ()):
            if child not in seen:
                seen.add(child)
                frontier.append(child)
    return seen
