"""Tamper-evident audit log.

Entries form a hash chain: each entry's ``chain`` is the SHA-256 of the
previous chain value concatenated with the entry's canonical JSON body.
Any edit, insertion, or deletion breaks recomputation at the first affected
sequence number.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from typing import Callable, Iterable

GENESIS = "0" * 64

AUDIT_FIELDS = ("seq", "actor", "action", "entity", "ts", "outcome", "chain")


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    actor: str
    action: str
    entity: str
    ts: int
    outcome: str
    chain: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "actor": self.actor,
            "action": self.action,
            "entity": self.entity,
            "ts": self.ts,
            "outcome": self.outcome,
            "chain": self.chain,
        }


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    broken_at: int | None = None

    def __str__(self) -> str:
        return "OK" if self.ok else f"BROKEN_AT({self.broken_at})"


def chain_hash(prev_chain: str, seq: int, actor: str, action: str, entity: str, ts: int, outcome: str) -> str:
    body = json.dumps(
        {"seq": seq, "actor": actor, "action": action, "entity": entity, "ts": ts, "outcome": outcome},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256((prev_chain + body).encode("utf-8")).hexdigest()


class AuditLog:
    """Append-only audit log; appends are globally serialized."""

    def __init__(self, clock: Callable[[], int], sink: Callable[[str], None] | None = None):
        self._clock = clock
        self._sink = sink
        self._entries: list[AuditEntry] = []
        self._lock = threading.Lock()

    def bootstrap(self, entries: Iterable[dict]) -> None:
        """Adopt previously persisted entries so the chain continues across runs."""
        with self._lock:
            if self._entries:
                raise ValueError("bootstrap requires an empty log")
            self._entries = [AuditEntry(**{k: doc[k] for k in AUDIT_FIELDS}) for doc in entries]

    def append(self, actor: str, action: str, entity: str = "", outcome: str = "OK") -> int:
        with self._lock:
            seq = len(self._entries)
            prev = self._entries[-1].chain if self._entries else GENESIS
            ts = self._clock()
            entry = AuditEntry(
                seq=seq,
                actor=actor,
                action=action,
                entity=entity,
                ts=ts,
                outcome=outcome,
                chain=chain_hash(prev, seq, actor, action, entity, ts, outcome),
            )
            if self._sink is not None:
                # Sink failure aborts the guarded operation before it commits.
                self._sink(json.dumps(entry.to_dict(), sort_keys=True, separators=(",", ":")))
            self._entries.append(entry)
            return seq

    def entries(self) -> list[AuditEntry]:
        with self._lock:
            return list(self._entries)

    def count(self, action_prefix: str = "") -> int:
        with self._lock:
            return sum(1 for e in self._entries if e.action.startswith(action_prefix))

    def verify(self) -> VerifyResult:
        return verify_chain(e.to_dict() for e in self.entries())


def verify_chain(entries: Iterable[object]) -> VerifyResult:
    """Recompute the chain from scratch; report the first divergence."""
    prev = GENESIS
    for index, doc in enumerate(entries):
        if not isinstance(doc, dict):
            return VerifyResult(False, index)
        try:
            if int(doc["seq"]) != index:
                return VerifyResult(False, index)
            expected = chain_hash(
                prev,
                int(doc["seq"]),
                str(doc["actor"]),
                str(doc["action"]),
                str(doc["entity"]),
                int(doc["ts"]),
                str(doc["outcome"]),
            )
        except (KeyError, TypeError, ValueError):
            return VerifyResult(False, index)
        if doc.get("chain") != expected:
            return VerifyResult(False, index)
        prev = expected
    return VerifyResult(True, None)


def verify_log_lines(lines: Iterable[str]) -> VerifyResult:
    """Verify a serialized audit log; an unparseable line is a break at its index."""
    docs: list[object] = []
    for index, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            docs.append(json.loads(line))
        except json.JSONDecodeError:
            return VerifyResult(False, index)
    return verify_chain(docs)
