"""Guarded facade over the central store: the EHR server role.

Both entry surfaces (HTTP handlers and the USSD gateway) go through this
layer, which authorizes every call against the role table before delegating
to the store. Denials are audited by the auth service; the operations
themselves are audited by the store.
"""

from __future__ import annotations

from .auth import AuthService, Identity
from .store import ReplicatedStore
from .sync import CentralEndpoint
from . import analytics


class EhrService:
    def __init__(self, store: ReplicatedStore, auth: AuthService):
        self.store = store
        self.auth = auth
        self.sync_endpoint = CentralEndpoint(store)

    # -- authentication pass-throughs ---------------------------------------

    def authenticate_ussd(self, msisdn: str, pin: str, now: int | None = None) -> Identity:
        return self.auth.authenticate_ussd(msisdn, pin, now)

    def authenticate_web(self, username: str, password: str, now: int | None = None) -> Identity:
        return self.auth.authenticate_web(username, password, now)

    def resolve_token(self, token: str, now: int | None = None) -> Identity:
        return self.auth.resolve_token(token, now)

    def msisdn_registered(self, msisdn: str) -> bool:
        return self.auth.clinician_for_msisdn(msisdn) is not None

    # -- guarded clinical operations ------------------------------------------

    def register_patient(self, identity: Identity, demographics: dict) -> str:
        self.auth.authorize(identity, "patient.register")
        return self.store.register_patient(demographics, actor=identity.clinician_id)

    def update_patient(self, identity: Identity, patient_id: str, changes: dict) -> None:
        self.auth.authorize(identity, "patient.update", patient_id)
        return self.store.update_patient(patient_id, changes, actor=identity.clinician_id)

    def get_patient(self, identity: Identity, patient_id: str) -> dict:
        self.auth.authorize(identity, "patient.get", patient_id)
        return self.store.get_patient(patient_id, actor=identity.clinician_id)

    def patient_history(self, identity: Identity, patient_id: str) -> list[dict]:
        self.auth.authorize(identity, "patient.history", patient_id)
        return self.store.patient_history(patient_id, actor=identity.clinician_id)

    def prescriptions_for(self, identity: Identity, patient_id: str) -> list[dict]:
        self.auth.authorize(identity, "rx.list", patient_id)
        return self.store.prescriptions_for(patient_id, actor=identity.clinician_id)

    def record_encounter(self, identity: Identity, encounter: dict) -> str:
        self.auth.authorize(identity, "encounter.record")
        return self.store.record_encounter(encounter, actor=identity.clinician_id)

    def create_prescription(self, identity: Identity, rx: dict) -> str:
        self.auth.authorize(identity, "rx.create")
        return self.store.create_prescription(rx, actor=identity.clinician_id)

    def request_refill(self, identity: Identity, rx_id: str) -> dict:
        self.auth.authorize(identity, "rx.refill_request", rx_id)
        return self.store.request_refill(rx_id, actor=identity.clinician_id)

    def grant_refill(self, identity: Identity, rx_id: str) -> dict:
        self.auth.authorize(identity, "rx.refill_grant", rx_id)
        return self.store.grant_refill(rx_id, actor=identity.clinician_id)

    def encounters_at(self, identity: Identity, facility_id: str) -> list[dict]:
        self.auth.authorize(identity, "encounter.list", facility_id)
        return self.store.encounters_at(facility_id, actor=identity.clinician_id)

    # -- sync and analytics ---------------------------------------------------

    def sync_push(self, identity: Identity, replica_id: str, events: list[dict]) -> dict:
        self.auth.authorize(identity, "sync.push", replica_id)
        return self.sync_endpoint.push(replica_id, events)

    def sync_pull(self, identity: Identity, replica_id: str, cursor: int) -> dict:
        self.auth.authorize(identity, "sync.pull", replica_id)
        return self.sync_endpoint.pull(replica_id, cursor)

    def aggregates(self, identity: Identity, period: str, k: int) -> dict:
        self.auth.authorize(identity, "aggregates.export", period)
        rows = analytics.build_aggregates(self.store, period)
        kept = analytics.suppress_small_zones(rows, self.store, k)
        document = analytics.export_anonymized(kept, self.store, k, period)
        self.store.audit.append(identity.clinician_id, "aggregates.export", period, "OK")
        return document
