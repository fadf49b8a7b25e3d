"""Authoritative lifecycle registry for issued agent identifiers.

One record per identifier, ever: registration, reversible suspension,
terminal revocation, and an orthogonal compromised flag (an agent can be
tagged compromised while remaining operational pending review). History is
append-only with strictly increasing timestamps, and the whole store can be
snapshotted to a line-delimited canonical JSON file.

Operations on distinct identifiers may run concurrently; a single lock
makes operations on the same identifier linearizable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Iterator, Optional

from .canonical import (
    b64url_decode,
    b64url_encode,
    canonical_json_bytes,
    format_rfc3339,
    parse_rfc3339,
)
from .identity import (
    AgentToken,
    VerificationOutcome,
    validate_identifier,
    verify_token,
)


class RegistryError(Exception):
    pass


class DuplicateIdentifier(RegistryError):
    pass


class UnknownIdentifier(RegistryError):
    pass


class IllegalTransition(RegistryError):
    pass


class StaleTimestamp(RegistryError):
    """Raised when an operation's timestamp does not advance the history."""


class RecordStatus(str, Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"
    REVOKED = "revoked"


class ValidationOutcome(Enum):
    VALID = "valid"
    VALID_BUT_COMPROMISED = "valid_but_compromised"
    SUSPENDED = "suspended"
    REVOKED = "revoked"
    UNKNOWN = "unknown"
    SIGNATURE_MISMATCH = "signature_mismatch"


# status machine: ACTIVE <-> SUSPENDED, both -> REVOKED, REVOKED terminal
_LEGAL = {
    (RecordStatus.ACTIVE, RecordStatus.SUSPENDED),
    (RecordStatus.SUSPENDED, RecordStatus.ACTIVE),
    (RecordStatus.ACTIVE, RecordStatus.REVOKED),
    (RecordStatus.SUSPENDED, RecordStatus.REVOKED),
}


@dataclass(frozen=True)
class HistoryEntry:
    at: datetime
    transition: str
    reason: str


@dataclass(frozen=True)
class RegistryRecord:
    id: str
    issuer_public_key: bytes
    sponsor: str
    status: RecordStatus
    compromised: bool
    issued_at: datetime
    history: tuple[HistoryEntry, ...]


@dataclass(frozen=True)
class FeedEntry:
    """One lifecycle transition, with the record state it produced."""

    id: str
    status: RecordStatus
    compromised: bool
    transition_time: datetime


class AgentRegistry:
    """In-process registry with a request/response interface.

    Designed so a networked implementation can wrap it: every operation is
    a single call taking plain values and returning the updated record.
    """

    def __init__(self):
        self._records: dict[str, RegistryRecord] = {}
        self._lock = threading.Lock()

    # -- write operations ---------------------------------------------------

    def register(self, agent_id: str, issuer_public_key: bytes, sponsor: str,
                 at: datetime) -> RegistryRecord:
        validate_identifier(agent_id)
        with self._lock:
            if agent_id in self._records:
                raise DuplicateIdentifier(agent_id)
            record = RegistryRecord(
                id=agent_id,
                issuer_public_key=bytes(issuer_public_key),
                sponsor=sponsor,
                status=RecordStatus.ACTIVE,
                compromised=False,
                issued_at=at,
                history=(HistoryEntry(at, "registered", "initial registration"),),
            )
            self._records[agent_id] = record
            return record

    def set_status(self, agent_id: str, new_status: RecordStatus, reason: str,
                   at: datetime) -> RegistryRecord:
        with self._lock:
            record = self._require(agent_id)
            if (record.status, new_status) not in _LEGAL:
                raise IllegalTransition(
                    f"{agent_id}: {record.status.value} -> {new_status.value}")
            updated = replace(
                record,
                status=new_status,
                history=self._append(record, at, new_status.value, reason),
            )
            self._records[agent_id] = updated
            return updated

    def flag_compromised(self, agent_id: str, reason: str,
                         at: datetime) -> RegistryRecord:
        """Set the compromised flag. Idempotent; orthogonal to status."""
        with self._lock:
            record = self._require(agent_id)
            if record.compromised:
                return record
            updated = replace(
                record,
                compromised=True,
                history=self._append(record, at, "compromised", reason),
            )
            self._records[agent_id] = updated
            return updated

    # -- read operations ----------------------------------------------------

    def lookup(self, agent_id: str) -> Optional[RegistryRecord]:
        with self._lock:
            return self._records.get(agent_id)

    def __len__(self) -> int:
        return len(self._records)

    def validate(self, token: AgentToken) -> ValidationOutcome:
        """Combine signature verification against the stored issuer key with
        the record's lifecycle state.

        Precedence when several conditions hold: signature mismatch, then
        unknown identifier, then revoked, then suspended; the compromised
        flag only annotates an otherwise valid outcome.
        """
        record = self.lookup(token.id)
        if record is None:
            return ValidationOutcome.UNKNOWN
        outcome = verify_token(token, {token.issuer_key_id: record.issuer_public_key})
        if outcome is not VerificationOutcome.SIGNATURE_VALID:
            return ValidationOutcome.SIGNATURE_MISMATCH
        if record.status is RecordStatus.REVOKED:
            return ValidationOutcome.REVOKED
        if record.status is RecordStatus.SUSPENDED:
            return ValidationOutcome.SUSPENDED
        if record.compromised:
            return ValidationOutcome.VALID_BUT_COMPROMISED
        return ValidationOutcome.VALID

    def revocation_feed(self, since: datetime) -> list[FeedEntry]:
        """Every lifecycle transition strictly after ``since``.

        One entry per history event (registration, status change, first
        compromise flag), carrying the record state immediately after that
        event, ordered by (time, id). Unions of feeds over a partition of
        time therefore reproduce the full transition history with no loss
        and no duplication.
        """
        with self._lock:
            records = list(self._records.values())
        entries: list[FeedEntry] = []
        for record in records:
            status = RecordStatus.ACTIVE
            compromised = False
            for event in record.history:
                if event.transition == "compromised":
                    compromised = True
                elif event.transition != "registered":
                    status = RecordStatus(event.transition)
                if event.at > since:
                    entries.append(FeedEntry(record.id, status, compromised, event.at))
        entries.sort(key=lambda e: (e.transition_time, e.id))
        return entries

    # -- persistence ----------------------------------------------------------

    def snapshot_lines(self) -> Iterator[bytes]:
        """Canonical JSON, one record per line, sorted by id."""
        with self._lock:
            records = sorted(self._records.values(), key=lambda r: r.id)
        for record in records:
            yield canonical_json_bytes({
                "compromised": record.compromised,
                "history": [
                    [format_rfc3339(e.at), e.transition, e.reason]
                    for e in record.history
                ],
                "id": record.id,
                "issued_at": format_rfc3339(record.issued_at),
                "issuer_public_key": b64url_encode(record.issuer_public_key),
                "sponsor": record.sponsor,
                "status": record.status.value,
            })

    @classmethod
    def from_snapshot_lines(cls, lines) -> "AgentRegistry":
        import json

        registry = cls()
        for line in lines:
            obj = json.loads(line)
            record = RegistryRecord(
                id=obj["id"],
                issuer_public_key=b64url_decode(obj["issuer_public_key"]),
                sponsor=obj["sponsor"],
                status=RecordStatus(obj["status"]),
                compromised=obj["compromised"],
                issued_at=parse_rfc3339(obj["issued_at"]),
                history=tuple(
                    HistoryEntry(parse_rfc3339(at), transition, reason)
                    for at, transition, reason in obj["history"]
                ),
            )
            registry._records[record.id] = record
        return registry

    # -- internals ------------------------------------------------------------

    def _require(self, agent_id: str) -> RegistryRecord:
        record = self._records.get(agent_id)
        if record is None:
            raise UnknownIdentifier(agent_id)
        return record

    @staticmethod
    def _append(record: RegistryRecord, at: datetime, transition: str,
                reason: str) -> tuple[HistoryEntry, ...]:
        last = record.history[-1].at
        if at <= last:
            raise StaleTimestamp(
                f"{record.id}: {format_rfc3339(at)} does not advance history "
                f"past {format_rfc3339(last)}")
        return record.history + (HistoryEntry(at, transition, reason),)
