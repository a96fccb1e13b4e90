import random

import pytest

from ehrmesh.audit import AuditLog
from ehrmesh.auth import AuthService
from ehrmesh.events import random_id_factory
from ehrmesh.store import ReplicatedStore

# 2026-01-01T00:00:00Z; sim clocks start here so calendar fields behave.
BASE_MS = 1_767_225_600_000


class SimClock:
    def __init__(self, start: int = BASE_MS):
        self.now = start

    def __call__(self) -> int:
        return self.now

    def tick(self, ms: int = 1000) -> int:
        self.now += ms
        return self.now


def make_store(clock, replica_id="central", seed=42) -> ReplicatedStore:
    return ReplicatedStore(
        replica_id,
        clock=clock,
        id_factory=random_id_factory(random.Random(seed)),
        audit=AuditLog(clock),
    )


def seed_basic(store: ReplicatedStore) -> None:
    store.register_zone("Z1", "North", actor="seed")
    store.register_zone("Z2", "South", actor="seed")
    store.register_facility("H1", "Hosp One", "Z1", "MES", actor="seed")
    store.register_facility("H2", "Hosp Two", "Z2", "MES", actor="seed")
    store.register_patient(
        {
            "patient_id": "P-1",
            "name": "Ada",
            "birth_date": "1990-04-11",
            "sex": "F",
            "zone_id": "Z1",
            "allergies": ["PENICILLIN"],
        },
        actor="seed",
    )
    store.create_prescription(
        {
            "rx_id": "RX-1",
            "patient_id": "P-1",
            "drug_code": "AMOX",
            "dose": "250mg",
            "refills_remaining": 2,
        },
        actor="seed",
    )


@pytest.fixture
def clock() -> SimClock:
    return SimClock()


@pytest.fixture
def store(clock) -> ReplicatedStore:
    return make_store(clock)


@pytest.fixture
def seeded_store(store) -> ReplicatedStore:
    seed_basic(store)
    return store


@pytest.fixture
def fast_pbkdf2(monkeypatch):
    """Cheap hashing for tests that authenticate many times."""
    import ehrmesh.auth as auth_module

    monkeypatch.setattr(auth_module, "_PBKDF2_ITERATIONS", 64)


@pytest.fixture
def auth(clock, store) -> AuthService:
    return AuthService(clock, store.audit)
