"""Replicated entity store.

One class serves as both the central database and a facility replica
("DB lite"): a materialized view of entities built by folding ChangeEvents,
an append-only log of every event committed here, and the clinical
operations that validate a mutation against the local view before emitting
its event. Merging is per-field last-writer-wins under the HLC total order,
so applying events is idempotent and insensitive to delivery order, and any
two stores that have seen the same events materialize the same view.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .audit import AuditLog
from .errors import EhrError
from .events import DELETED_FIELD, TOMBSTONE, ChangeEvent, random_id_factory
from .hlc import DEFAULT_DRIFT_BOUND_MS, HlcClock, HlcTimestamp
from .model import (
    MODALITIES,
    RX_STATUSES,
    require_birth_date,
    require_codes,
    require_sex,
    require_text,
)


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class EntityState:
    """Per-field registers of one entity: field -> (value, winning HLC)."""

    kind: str
    entity_id: str
    fields: dict[str, tuple[object, HlcTimestamp]] = field(default_factory=dict)

    def apply(self, event: ChangeEvent) -> None:
        for name, value in event.field_items():
            current = self.fields.get(name)
            if current is None or event.hlc > current[1]:
                self.fields[name] = (value, event.hlc)

    @property
    def deleted(self) -> bool:
        register = self.fields.get(DELETED_FIELD)
        return bool(register and register[0])

    def snapshot(self) -> dict:
        return {name: value for name, (value, _) in self.fields.items() if name != DELETED_FIELD}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "entity_id": self.entity_id,
            "fields": {name: [value, hlc.to_dict()] for name, (value, hlc) in self.fields.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EntityState":
        state = cls(doc["kind"], doc["entity_id"])
        for name, (value, hlc_doc) in doc["fields"].items():
            state.fields[name] = (value, HlcTimestamp.from_dict(hlc_doc))
        return state


class MaterializedView:
    """Entity states keyed by (kind, id), built purely from events."""

    def __init__(self) -> None:
        self.entities: dict[tuple[str, str], EntityState] = {}

    def apply_event(self, event: ChangeEvent) -> None:
        key = (event.entity_kind, event.entity_id)
        state = self.entities.get(key)
        if state is None:
            state = EntityState(event.entity_kind, event.entity_id)
            self.entities[key] = state
        state.apply(event)

    def get(self, kind: str, entity_id: str) -> dict | None:
        state = self.entities.get((kind, entity_id))
        if state is None or state.deleted:
            return None
        return state.snapshot()

    def exists(self, kind: str, entity_id: str) -> bool:
        return self.get(kind, entity_id) is not None

    def all(self, kind: str) -> list[tuple[str, dict]]:
        rows = [
            (state.entity_id, state.snapshot())
            for (k, _), state in self.entities.items()
            if k == kind and not state.deleted
        ]
        rows.sort(key=lambda item: item[0])
        return rows

    def digest(self) -> dict:
        """Canonical representation of the visible state, for equality checks."""
        return {
            f"{kind}/{entity_id}": self.entities[(kind, entity_id)].snapshot()
            for (kind, entity_id) in sorted(self.entities)
            if not self.entities[(kind, entity_id)].deleted
        }


class ReplicatedStore:
    """Central DB or facility replica: view + event log + clinical operations.

    Mutations are serialized by a store-wide lock (callers never observe torn
    records); reads take the same lock briefly to copy out results. Every
    operation appends exactly one audit entry before its event commits.
    """

    def __init__(
        self,
        replica_id: str,
        clock: Callable[[], int] | None = None,
        id_factory: Callable[[], str] | None = None,
        audit: AuditLog | None = None,
        drift_bound_ms: int = DEFAULT_DRIFT_BOUND_MS,
        journal=None,
    ):
        self.replica_id = replica_id
        self.clock = clock or wall_clock_ms
        self.ids = id_factory or random_id_factory()
        self.audit = audit if audit is not None else AuditLog(self.clock)
        self.hlc = HlcClock(replica_id, drift_bound_ms)
        self.view = MaterializedView()
        self.log: list[ChangeEvent] = []
        self.seen: set[str] = set()
        self.pull_cursor = 0
        self._pushed = 0
        self._own: list[ChangeEvent] = []
        self._lock = threading.RLock()
        self._journal = journal
        if journal is not None:
            self._recover_from_journal()

    # -- replication plumbing ------------------------------------------------

    def _commit(self, event: ChangeEvent) -> None:
        self.view.apply_event(event)
        self.log.append(event)
        self.seen.add(event.event_id)
        if event.origin_replica == self.replica_id:
            self._own.append(event)
        if self._journal is not None:
            self._journal.append(event)
            if len(self.log) % self._journal.snapshot_every == 0:
                self.write_snapshot()

    def apply_remote(self, events: Iterable[object]) -> int:
        """Fold events from elsewhere into this store. Idempotent.

        Events already seen are skipped; new ones are validated for shape,
        merged per-field, appended to the local log, and folded into the HLC
        so later local writes sort after everything applied here.
        """
        applied = 0
        with self._lock:
            now = self.clock()
            for doc in events:
                event = doc if isinstance(doc, ChangeEvent) else ChangeEvent.from_dict(doc)
                if event.event_id in self.seen:
                    continue
                self.hlc.observe(event.hlc, now)
                self._commit(event)
                applied += 1
        return applied

    def delta(self, cursor: int) -> list[ChangeEvent]:
        with self._lock:
            if cursor < 0 or cursor > len(self.log):
                raise EhrError("CURSOR_OUT_OF_RANGE", f"cursor {cursor}, log length {len(self.log)}")
            return list(self.log[cursor:])

    def unpushed(self) -> list[ChangeEvent]:
        with self._lock:
            return list(self._own[self._pushed:])

    def mark_pushed(self, count: int) -> None:
        with self._lock:
            self._pushed += count

    def set_pull_cursor(self, cursor: int) -> None:
        with self._lock:
            if cursor < self.pull_cursor:
                raise EhrError("CURSOR_OUT_OF_RANGE", "pull cursor may not decrease")
            self.pull_cursor = cursor

    def log_length(self) -> int:
        with self._lock:
            return len(self.log)

    # -- durability ------------------------------------------------------------

    def crash(self) -> None:
        """Drop in-memory state, keeping only what the durable log holds."""
        with self._lock:
            self.view = MaterializedView()
            self.hlc = HlcClock(self.replica_id, self.hlc.drift_bound_ms)

    def recover(self) -> None:
        """Rebuild the view by replaying the durable log after a power cut."""
        with self._lock:
            now = self.clock()
            for event in self.log:
                self.view.apply_event(event)
                self.hlc.observe(event.hlc, now)

    def _recover_from_journal(self) -> None:
        snapshot, events = self._journal.load()
        if snapshot is not None:
            for doc in snapshot["entities"]:
                state = EntityState.from_dict(doc)
                self.view.entities[(state.kind, state.entity_id)] = state
        now = self.clock()
        for event in events:
            if event.event_id in self.seen:
                continue
            if len(self.log) >= (snapshot["log_length"] if snapshot else 0):
                self.view.apply_event(event)
            self.log.append(event)
            self.seen.add(event.event_id)
            if event.origin_replica == self.replica_id:
                self._own.append(event)
            self.hlc.observe(event.hlc, now)
        # Push state is not journaled; re-pushing is deduplicated centrally.
        self._pushed = 0

    def write_snapshot(self) -> None:
        if self._journal is None:
            return
        self._journal.write_snapshot(
            {
                "log_length": len(self.log),
                "entities": [state.to_dict() for state in self.view.entities.values()],
            }
        )

    # -- mutation helpers --------------------------------------------------------

    def _new_event(self, kind: str, entity_id: str, payload: dict | str, field_path: str = "") -> ChangeEvent:
        return ChangeEvent(
            event_id=self.ids(),
            entity_kind=kind,
            entity_id=entity_id,
            field_path=field_path,
            new_value=payload,
            hlc=self.hlc.event(self.clock()),
            origin_replica=self.replica_id,
        )

    def _guard(self, actor: str, action: str, entity: str, fn):
        """Run one operation: audit exactly once, then commit or raise."""
        with self._lock:
            try:
                result = fn()
            except EhrError as err:
                self.audit.append(actor, action, entity, err.code)
                raise
            self.audit.append(actor, action, entity, "OK")
            event = result.pop("__event__", None)
            if event is not None:
                self._commit(event)
            return result.get("__value__")

    # -- clinical operations ----------------------------------------------------

    def register_zone(self, zone_id: str, name: str, actor: str = "system") -> str:
        def run():
            require_text(zone_id, "zone_id")
            require_text(name, "name")
            if self.view.exists("zone", zone_id):
                raise EhrError("DUPLICATE_ID", f"zone {zone_id} exists")
            event = self._new_event("zone", zone_id, {"zone_id": zone_id, "name": name})
            return {"__event__": event, "__value__": zone_id}

        return self._guard(actor, "zone.register", zone_id, run)

    def register_facility(
        self, facility_id: str, name: str, zone_id: str, modality: str, actor: str = "system"
    ) -> str:
        def run():
            require_text(facility_id, "facility_id")
            if self.view.exists("facility", facility_id):
                raise EhrError("DUPLICATE_ID", f"facility {facility_id} exists")
            if not self.view.exists("zone", zone_id):
                raise EhrError("INVALID_ZONE", f"zone {zone_id} not registered")
            if modality not in MODALITIES:
                raise EhrError("VALIDATION", f"modality must be one of {MODALITIES}")
            event = self._new_event(
                "facility",
                facility_id,
                {"facility_id": facility_id, "name": name, "zone_id": zone_id, "modality": modality},
            )
            return {"__event__": event, "__value__": facility_id}

        return self._guard(actor, "facility.register", facility_id, run)

    def register_patient(self, demographics: dict, actor: str = "system") -> str:
        patient_id = demographics.get("patient_id") or self.ids()

        def run():
            now = self.clock()
            if self.view.exists("patient", patient_id):
                raise EhrError("DUPLICATE_ID", f"patient {patient_id} exists")
            zone_id = demographics.get("zone_id")
            if not self.view.exists("zone", zone_id):
                raise EhrError("INVALID_ZONE", f"zone {zone_id!r} not registered")
            record = {
                "patient_id": patient_id,
                "name": require_text(demographics.get("name"), "name"),
                "birth_date": require_birth_date(demographics.get("birth_date"), now),
                "sex": require_sex(demographics.get("sex")),
                "zone_id": zone_id,
                "allergies": sorted(require_codes(demographics.get("allergies"), "allergies")),
                "registered_at": now,
            }
            return {"__event__": self._new_event("patient", patient_id, record), "__value__": patient_id}

        return self._guard(actor, "patient.register", patient_id, run)

    def update_patient(self, patient_id: str, changes: dict, actor: str = "system") -> None:
        def run():
            if not self.view.exists("patient", patient_id):
                raise EhrError("NOT_FOUND", f"patient {patient_id}")
            allowed = {"name", "birth_date", "sex", "zone_id", "allergies"}
            unknown = set(changes) - allowed
            if unknown or not changes:
                raise EhrError("VALIDATION", f"updatable fields are {sorted(allowed)}")
            payload: dict = {}
            now = self.clock()
            if "name" in changes:
                payload["name"] = require_text(changes["name"], "name")
            if "birth_date" in changes:
                payload["birth_date"] = require_birth_date(changes["birth_date"], now)
            if "sex" in changes:
                payload["sex"] = require_sex(changes["sex"])
            if "zone_id" in changes:
                if not self.view.exists("zone", changes["zone_id"]):
                    raise EhrError("INVALID_ZONE", f"zone {changes['zone_id']!r} not registered")
                payload["zone_id"] = changes["zone_id"]
            if "allergies" in changes:
                payload["allergies"] = sorted(require_codes(changes["allergies"], "allergies"))
            if len(payload) == 1:
                name, value = next(iter(payload.items()))
                event = self._new_event("patient", patient_id, value, field_path=name)
            else:
                event = self._new_event("patient", patient_id, payload)
            return {"__event__": event}

        return self._guard(actor, "patient.update", patient_id, run)

    def get_patient(self, patient_id: str, actor: str = "system") -> dict:
        def run():
            record = self.view.get("patient", patient_id)
            if record is None:
                raise EhrError("NOT_FOUND", f"patient {patient_id}")
            return {"__value__": record}

        return self._guard(actor, "patient.get", patient_id, run)

    def record_encounter(self, encounter: dict, actor: str = "system") -> str:
        encounter_id = encounter.get("encounter_id") or self.ids()

        def run():
            if not self.view.exists("patient", encounter.get("patient_id")):
                raise EhrError("UNKNOWN_PATIENT", f"patient {encounter.get('patient_id')!r}")
            if self.view.exists("encounter", encounter_id):
                raise EhrError("DUPLICATE_ID", f"encounter {encounter_id} exists")
            now = self.clock()
            occurred_at = int(encounter.get("occurred_at", now))
            if occurred_at > now:
                raise EhrError("VALIDATION", "occurred_at is ahead of the store clock")
            record = {
                "encounter_id": encounter_id,
                "patient_id": encounter["patient_id"],
                "facility_id": require_text(encounter.get("facility_id"), "facility_id"),
                "clinician_id": require_text(encounter.get("clinician_id"), "clinician_id"),
                "occurred_at": occurred_at,
                "diagnosis_codes": require_codes(encounter.get("diagnosis_codes"), "diagnosis_codes"),
                "note": str(encounter.get("note", "")),
            }
            return {"__event__": self._new_event("encounter", encounter_id, record), "__value__": encounter_id}

        return self._guard(actor, "encounter.record", encounter_id, run)

    def create_prescription(self, rx: dict, actor: str = "system") -> str:
        rx_id = rx.get("rx_id") or self.ids()

        def run():
            if not self.view.exists("patient", rx.get("patient_id")):
                raise EhrError("UNKNOWN_PATIENT", f"patient {rx.get('patient_id')!r}")
            if self.view.exists("prescription", rx_id):
                raise EhrError("DUPLICATE_ID", f"prescription {rx_id} exists")
            refills = int(rx.get("refills_remaining", 0))
            if refills < 0:
                raise EhrError("VALIDATION", "refills_remaining must be non-negative")
            record = {
                "rx_id": rx_id,
                "patient_id": rx["patient_id"],
                "drug_code": require_text(rx.get("drug_code"), "drug_code"),
                "dose": require_text(rx.get("dose"), "dose"),
                "refills_remaining": refills,
                "status": "ACTIVE",
                "prescribed_at": int(rx.get("prescribed_at", self.clock())),
            }
            return {"__event__": self._new_event("prescription", rx_id, record), "__value__": rx_id}

        return self._guard(actor, "rx.create", rx_id, run)

    def _prescription(self, rx_id: str) -> dict:
        record = self.view.get("prescription", rx_id)
        if record is None:
            raise EhrError("UNKNOWN_RX", f"prescription {rx_id}")
        return record

    def request_refill(self, rx_id: str, actor: str = "system") -> dict:
        def run():
            record = self._prescription(rx_id)
            if record["status"] != "ACTIVE":
                raise EhrError("NOT_ACTIVE", f"status is {record['status']}")
            if record["refills_remaining"] <= 0:
                raise EhrError("NO_REFILLS_LEFT", "no refills left")
            event = self._new_event("prescription", rx_id, "REFILL_REQUESTED", field_path="status")
            request = {
                "rx_id": rx_id,
                "status": "REFILL_REQUESTED",
                "requested_by": actor,
                "requested_at": self.clock(),
                "refills_remaining": record["refills_remaining"],
            }
            return {"__event__": event, "__value__": request}

        return self._guard(actor, "rx.refill_request", rx_id, run)

    def grant_refill(self, rx_id: str, actor: str = "system") -> dict:
        def run():
            record = self._prescription(rx_id)
            if record["status"] != "REFILL_REQUESTED":
                raise EhrError("NOT_REQUESTED", f"status is {record['status']}")
            payload = {"status": "ACTIVE", "refills_remaining": record["refills_remaining"] - 1}
            event = self._new_event("prescription", rx_id, payload)
            return {"__event__": event, "__value__": {**record, **payload}}

        return self._guard(actor, "rx.refill_grant", rx_id, run)

    def expire_prescription(self, rx_id: str, actor: str = "system") -> None:
        def run():
            self._prescription(rx_id)
            event = self._new_event("prescription", rx_id, "EXPIRED", field_path="status")
            return {"__event__": event}

        return self._guard(actor, "rx.expire", rx_id, run)

    def delete_entity(self, kind: str, entity_id: str, actor: str = "system") -> None:
        """Tombstone an entity; the marker replicates like any write."""

        def run():
            if not self.view.exists(kind, entity_id):
                raise EhrError("NOT_FOUND", f"{kind} {entity_id}")
            event = self._new_event(kind, entity_id, TOMBSTONE)
            return {"__event__": event}

        return self._guard(actor, f"{kind}.delete", entity_id, run)

    # -- reads -------------------------------------------------------------------

    def patient_history(self, patient_id: str, actor: str = "system") -> list[dict]:
        """Encounters and prescriptions for one patient, oldest first.

        Ordered by (timestamp, entity id); the id tie-break keeps same-instant
        entries deterministic.
        """

        def run():
            if not self.view.exists("patient", patient_id):
                raise EhrError("UNKNOWN_PATIENT", f"patient {patient_id}")
            items: list[tuple[int, str, dict]] = []
            for entity_id, record in self.view.all("encounter"):
                if record.get("patient_id") == patient_id:
                    items.append((record["occurred_at"], entity_id, {"kind": "encounter", **record}))
            for entity_id, record in self.view.all("prescription"):
                if record.get("patient_id") == patient_id:
                    items.append((record["prescribed_at"], entity_id, {"kind": "prescription", **record}))
            items.sort(key=lambda item: (item[0], item[1]))
            return {"__value__": [entry for _, _, entry in items]}

        return self._guard(actor, "patient.history", patient_id, run)

    def prescriptions_for(self, patient_id: str, actor: str = "system") -> list[dict]:
        def run():
            if not self.view.exists("patient", patient_id):
                raise EhrError("UNKNOWN_PATIENT", f"patient {patient_id}")
            rows = [
                record
                for _, record in self.view.all("prescription")
                if record.get("patient_id") == patient_id
            ]
            return {"__value__": rows}

        return self._guard(actor, "rx.list", patient_id, run)

    def encounters_at(self, facility_id: str, actor: str = "system", limit: int = 20) -> list[dict]:
        def run():
            rows = [
                record
                for _, record in self.view.all("encounter")
                if record.get("facility_id") == facility_id
            ]
            rows.sort(key=lambda r: (r["occurred_at"], r["encounter_id"]), reverse=True)
            return {"__value__": rows[:limit]}

        return self._guard(actor, "encounter.list", facility_id, run)
