"""Cursor-based reconciliation between facility replicas and the central store.

A round is push-then-pull: the replica sends everything it originated since
the last acknowledged push, then pulls the central log past its cursor.
Both legs are idempotent (events are deduplicated by id), so a round that
fails mid-way is safe to retry. Requests and responses share one wire shape:
``{"replica_id": ..., "cursor": ..., "events": [...]}``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EhrError, LinkDown
from .events import ChangeEvent
from .store import ReplicatedStore


@dataclass(frozen=True)
class SyncReport:
    pushed: int
    pulled: int
    new_cursor: int


class CentralEndpoint:
    """Server side of the protocol, bound to the central store."""

    def __init__(self, central: ReplicatedStore):
        self.central = central

    def push(self, replica_id: str, events: list[dict]) -> dict:
        parsed = [ChangeEvent.from_dict(doc) if isinstance(doc, dict) else doc for doc in events]
        accepted = self.central.apply_remote(parsed)
        self.central.audit.append(replica_id, "sync.push", replica_id, f"accepted={accepted}")
        return {
            "replica_id": self.central.replica_id,
            "cursor": self.central.log_length(),
            "events": [],
            "accepted": accepted,
        }

    def pull(self, replica_id: str, cursor: int) -> dict:
        events = self.central.delta(cursor)
        self.central.audit.append(replica_id, "sync.pull", replica_id, f"served={len(events)}")
        return {
            "replica_id": self.central.replica_id,
            "cursor": cursor + len(events),
            "events": [event.to_dict() for event in events],
        }


def sync_round(replica: ReplicatedStore, endpoint) -> SyncReport:
    """One push/pull round against the central endpoint.

    Raises LINK_DOWN (nothing happened) if the push leg fails, and PARTIAL
    (push delivered, pull interrupted) if only the pull leg fails; the next
    successful round completes the work either way.
    """
    outbound = replica.unpushed()
    try:
        endpoint.push(replica.replica_id, [event.to_dict() for event in outbound])
    except LinkDown:
        raise
    replica.mark_pushed(len(outbound))
    try:
        response = endpoint.pull(replica.replica_id, replica.pull_cursor)
    except LinkDown as exc:
        raise EhrError("PARTIAL", "push delivered, pull interrupted; retry completes") from exc
    pulled_events = response["events"]
    replica.apply_remote(pulled_events)
    replica.set_pull_cursor(int(response["cursor"]))
    return SyncReport(pushed=len(outbound), pulled=len(pulled_events), new_cursor=replica.pull_cursor)


def sync_until_quiescent(replicas: list[ReplicatedStore], endpoint, max_passes: int = 10) -> int:
    """Run rounds over all replicas until a full pass moves nothing.

    A single round per replica cannot finish the job: a replica that syncs
    first never sees events a later replica pushes in the same pass. Two
    passes suffice once writes stop; the quiet pass proves it.
    """
    for passes in range(1, max_passes + 1):
        moved = 0
        for replica in replicas:
            report = sync_round(replica, endpoint)
            moved += report.pushed + report.pulled
        if moved == 0:
            return passes
    raise EhrError("VALIDATION", f"no quiescence after {max_passes} passes")
