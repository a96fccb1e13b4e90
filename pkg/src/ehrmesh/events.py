"""Replication change events.

One committed mutation produces exactly one ChangeEvent. An event carries
either a single field write (``field_path`` names the field) or, with an
empty ``field_path``, a map of fields written atomically (creation, or a
multi-field update such as a refill grant). Deletions carry the TOMBSTONE
sentinel. Merge semantics are per field: for each field touched, the value
stamped with the greatest HLC wins.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from random import Random
from typing import Callable

from .errors import EhrError
from .hlc import HlcTimestamp

TOMBSTONE = "__TOMBSTONE__"
# Internal per-entity register recording deletion; replicates like any field.
DELETED_FIELD = "__deleted__"

ENTITY_KINDS = ("zone", "facility", "patient", "encounter", "prescription")


@dataclass(frozen=True)
class ChangeEvent:
    event_id: str
    entity_kind: str
    entity_id: str
    field_path: str
    new_value: object
    hlc: HlcTimestamp
    origin_replica: str

    def field_items(self) -> list[tuple[str, object]]:
        """The (field, value) writes this event encodes, in a fixed order."""
        if self.new_value == TOMBSTONE:
            return [(DELETED_FIELD, True)]
        if self.field_path:
            return [(self.field_path, self.new_value)]
        if not isinstance(self.new_value, dict):
            raise EhrError("MALFORMED_EVENT", "field map expected when field_path is empty")
        return sorted(self.new_value.items())

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "entity_kind": self.entity_kind,
            "entity_id": self.entity_id,
            "field_path": self.field_path,
            "new_value": self.new_value,
            "hlc": self.hlc.to_dict(),
            "origin_replica": self.origin_replica,
        }

    @classmethod
    def from_dict(cls, doc: object) -> "ChangeEvent":
        if not isinstance(doc, dict):
            raise EhrError("MALFORMED_EVENT", "event must be an object")
        try:
            event = cls(
                event_id=str(doc["event_id"]),
                entity_kind=str(doc["entity_kind"]),
                entity_id=str(doc["entity_id"]),
                field_path=str(doc["field_path"]),
                new_value=doc["new_value"],
                hlc=HlcTimestamp.from_dict(doc["hlc"]),
                origin_replica=str(doc["origin_replica"]),
            )
        except KeyError as exc:
            raise EhrError("MALFORMED_EVENT", f"missing field {exc}") from exc
        if event.entity_kind not in ENTITY_KINDS:
            raise EhrError("MALFORMED_EVENT", f"unknown entity kind {event.entity_kind!r}")
        if not event.field_path and event.new_value != TOMBSTONE and not isinstance(event.new_value, dict):
            raise EhrError("MALFORMED_EVENT", "field map expected when field_path is empty")
        return event


def random_id_factory(rng: Random | None = None) -> Callable[[], str]:
    """UUID-style 128-bit ids; seeded when an RNG is supplied (simulation)."""
    if rng is None:
        return lambda: str(uuid.uuid4())
    return lambda: str(uuid.UUID(int=rng.getrandbits(128), version=4))
